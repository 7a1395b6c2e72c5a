#include "xcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace xcnn {

template <typename T>
double gradient_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> leaves,
                      double step, double floor) {
  for (auto& leaf : leaves) {
    if (!leaf.is_leaf()) throw ContractViolation("gradient_check perturbs leaf tensors only");
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  f().backward();

  double worst = 0.0;
  for (auto& leaf : leaves) {
    std::vector<T> analytic(leaf.numel(), T{0});
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto values = leaf.mutable_data();
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      const T up = static_cast<T>(original + step);
      const T down = static_cast<T>(original - step);
      values[i] = up;
      const double f_up = f().item();
      values[i] = down;
      const double f_down = f().item();
      values[i] = original;
      const double numeric = (f_up - f_down) / (static_cast<double>(up) - down);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

template <typename T>
double gradient_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                      double step, double floor) {
  Tensor<T> leaf = x;
  std::vector<Tensor<T>> leaves{leaf};
  return gradient_check<T>([&] { return f(leaf); }, std::span<Tensor<T>>(leaves), step, floor);
}

template double gradient_check<float>(const std::function<Tensor<float>()>&,
                                      std::span<Tensor<float>>, double, double);
template double gradient_check<double>(const std::function<Tensor<double>()>&,
                                       std::span<Tensor<double>>, double, double);
template double gradient_check<float>(const std::function<Tensor<float>(const Tensor<float>&)>&,
                                      const Tensor<float>&, double, double);
template double gradient_check<double>(
    const std::function<Tensor<double>(const Tensor<double>&)>&, const Tensor<double>&, double,
    double);

}  // namespace xcnn

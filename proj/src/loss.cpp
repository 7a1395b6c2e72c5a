#include "xcnn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

namespace xcnn {

template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels,
                                 std::span<const double> weights) {
  if (logits.dim() != 2) throw ShapeError("cross entropy expects N x K logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  if (labels.size() != n) {
    throw InvalidArgument("got " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(n) + " rows");
  }
  if (weights.size() != k) {
    throw InvalidArgument("expected " + std::to_string(k) + " class weights, got " +
                          std::to_string(weights.size()));
  }
  using A = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument("class weights must be finite and > 0");
  }
  const auto ld = logits.data();
  std::vector<A> probs(n * k);
  A weighted = 0.0, total_weight = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= k) {
      throw InvalidArgument("label " + std::to_string(labels[r]) + " out of range for " +
                            std::to_string(k) + " classes");
    }
    const T* row = ld.data() + r * k;
    const A mx = *std::max_element(row, row + k);
    A z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[r * k + j] = std::exp(static_cast<A>(row[j]) - mx);
      z += probs[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] /= z;
    const A nll = mx + std::log(z) - static_cast<A>(row[labels[r]]);
    const A w = weights[labels[r]];
    weighted += w * nll;
    total_weight += w;
  }
  std::vector<std::size_t> label_copy(labels.begin(), labels.end());
  std::vector<double> weight_copy(weights.begin(), weights.end());
  return Tensor<T>::make_result(
      {1}, {static_cast<T>(weighted / total_weight)}, {logits}, "weighted_cross_entropy",
      [n, k, total_weight, probs = std::move(probs), label_copy = std::move(label_copy),
       weight_copy = std::move(weight_copy)](detail::Node<T>& self) {
        auto& nl = *self.inputs[0];
        const A g = self.grad[0];
        for (std::size_t r = 0; r < n; ++r) {
          const A scale = g * weight_copy[label_copy[r]] / total_weight;
          for (std::size_t j = 0; j < k; ++j) {
            const A target = j == label_copy[r] ? 1.0 : 0.0;
            nl.grad[r * k + j] += static_cast<T>(scale * (probs[r * k + j] - target));
          }
        }
      });
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores) {
  if (scores.dim() != 2) throw ShapeError("argmax_rows expects a 2-D tensor");
  const std::size_t n = scores.extent(0), k = scores.extent(1);
  std::vector<std::size_t> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = scores.data().data() + r * k;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

template Tensor<float> weighted_cross_entropy(const Tensor<float>&, std::span<const std::size_t>,
                                              std::span<const double>);
template Tensor<double> weighted_cross_entropy(const Tensor<double>&, std::span<const std::size_t>,
                                               std::span<const double>);
template std::vector<std::size_t> argmax_rows(const Tensor<float>&);
template std::vector<std::size_t> argmax_rows(const Tensor<double>&);
template Tensor<long double> weighted_cross_entropy(const Tensor<long double>&, std::span<const std::size_t>,
                                                   std::span<const double>);

}  // namespace xcnn

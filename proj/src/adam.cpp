#include "xcnn/adam.hpp"

#include <cmath>

namespace xcnn {

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamConfig& config,
               std::span<const std::string> names) {
  if (!(config.learning_rate >= 0.0)) throw InvalidArgument("learning rate must be >= 0");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T{0});
      state.v.emplace_back(p.numel(), T{0});
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("Adam state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel()) throw ShapeError("Adam state shape mismatch");
    if (!params[i].has_grad()) continue;
    for (T g : params[i].grad()) {
      if (!std::isfinite(g)) {
        const std::string name = i < names.size() ? names[i] : "parameter " + std::to_string(i);
        throw NumericError("non-finite gradient in " + name + "; Adam step aborted");
      }
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    const bool has_grad = params[i].has_grad();
    const auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = has_grad ? static_cast<double>(grad[k]) : 0.0;
      const double mk = config.beta1 * m[k] + (1.0 - config.beta1) * g;
      const double vk = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / bc1;
      const double v_hat = vk / bc2;
      theta[k] = static_cast<T>(theta[k] - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon));
    }
  }
}

template void adam_step(std::span<Tensor<float>>, AdamState<float>&, const AdamConfig&,
                        std::span<const std::string>);
template void adam_step(std::span<Tensor<double>>, AdamState<double>&, const AdamConfig&,
                        std::span<const std::string>);

}  // namespace xcnn

#pragma once

#include <span>
#include <string>
#include <vector>

#include "xcnn/tensor.hpp"

namespace xcnn {

struct AdamConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every tensor in `params` from its
/// accumulated grad (a missing grad counts as zero). The step counter is
/// advanced first. If any gradient is non-finite nothing is updated and a
/// NumericError naming the parameter is thrown.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamConfig& config,
               std::span<const std::string> names = {});

extern template void adam_step(std::span<Tensor<float>>, AdamState<float>&, const AdamConfig&,
                               std::span<const std::string>);
extern template void adam_step(std::span<Tensor<double>>, AdamState<double>&, const AdamConfig&,
                               std::span<const std::string>);

}  // namespace xcnn

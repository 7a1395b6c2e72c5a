#pragma once

#include <span>

#include "xcnn/tensor.hpp"

namespace xcnn {

/// sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i] for logits
/// [N x K]. Softmax uses max subtraction. Throws InvalidArgument for a label
/// >= K or a weight vector that is not K positive values.
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels,
                                 std::span<const double> weights);

/// Index of the largest value in each row; ties go to the lowest index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores);

extern template Tensor<float> weighted_cross_entropy(const Tensor<float>&,
                                                     std::span<const std::size_t>,
                                                     std::span<const double>);
extern template Tensor<double> weighted_cross_entropy(const Tensor<double>&,
                                                      std::span<const std::size_t>,
                                                      std::span<const double>);

}  // namespace xcnn

#pragma once

#include <span>
#include <string>
#include <vector>

#include "xcnn/metrics.hpp"
#include "xcnn/trainer.hpp"

namespace xcnn {

/// Eval-mode softmax probabilities, one row per index.
template <typename T>
std::vector<std::vector<double>> predict_probabilities(Model<T>& model, const BatchSource<T>& data,
                                                       std::span<const std::size_t> indices,
                                                       std::size_t batch_size = 32);

/// Forward pass over `indices`, then the full report including per-class ROC.
template <typename T>
MetricsReport evaluate(Model<T>& model, const BatchSource<T>& data,
                       std::span<const std::size_t> indices,
                       std::vector<std::string> class_names, std::size_t batch_size = 32);

}  // namespace xcnn

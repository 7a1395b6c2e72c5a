#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xcnn/layers.hpp"
#include "xcnn/tensor.hpp"

namespace xcnn {

enum class Mode { kTrain, kEval };

template <typename T>
struct NamedParameter {
  std::string name;  // e.g. "layer3.weight"
  std::size_t layer = 0;
  ParamRole role = ParamRole::kWeight;
  Tensor<T> tensor;
};

// Batchnorm running statistics.
template <typename T>
struct NamedBuffer {
  std::string name;  // "layer1.running_mean" / "layer1.running_var"
  std::size_t layer = 0;
  std::vector<T> values;
};

/// Value snapshot of every parameter and buffer, in storage order.
template <typename T>
struct ModelState {
  std::vector<std::vector<T>> parameters;
  std::vector<std::vector<T>> buffers;

  bool operator==(const ModelState&) const = default;
};

enum class ParamFilter { kAll, kTrainable };

template <typename T>
class Model {
 public:
  /// Validates the spec by shape propagation and initializes weights
  /// (He-uniform conv/linear weights, zero biases, unit gamma, zero beta).
  explicit Model(ArchitectureSpec spec, std::uint64_t init_seed = 0);

  const ArchitectureSpec& spec() const { return spec_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  using LayerObserver = std::function<void(std::size_t layer, const Tensor<T>& output)>;

  /// `batch` is N x input-shape. `seed` drives dropout masks in train mode;
  /// eval mode ignores it. `observe` sees every layer's output in order.
  Tensor<T> forward(const Tensor<T>& batch, std::uint64_t seed = 0, const LayerObserver& observe = {});

  std::vector<NamedParameter<T>>& parameters() { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  std::vector<Tensor<T>> trainable_parameters() const;
  std::vector<NamedBuffer<T>>& buffers() { return buffers_; }
  const std::vector<NamedBuffer<T>>& buffers() const { return buffers_; }

  /// Marks the parameters of layers [begin, end) as frozen.
  void freeze_layers(std::size_t begin, std::size_t end);
  bool layer_frozen(std::size_t layer) const;
  void zero_grad();

  std::size_t count_parameters(ParamFilter filter) const;
  /// Per-layer view with trainable flags reflecting frozen layers.
  ParameterAudit audit() const;

  ModelState<T> state() const;
  /// Throws IntegrityError when the snapshot's layout differs from this model.
  void load_state(const ModelState<T>& state);

  template <typename U>
  Model<U> cast() const;

 private:
  template <typename>
  friend class Model;

  ArchitectureSpec spec_;
  Mode mode_ = Mode::kTrain;
  std::vector<NamedParameter<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
  // Index of each layer's first parameter / buffer, or -1.
  std::vector<long> first_param_;
  std::vector<long> first_buffer_;
};

/// New model = `backbone` layers (flattened if needed) followed by a fresh
/// classifier head; the backbone's parameters are copied and frozen.
template <typename T>
Model<T> attach_head(const Model<T>& backbone, std::size_t hidden_dim, std::size_t classes,
                     double dropout_rate = 0.5, std::uint64_t init_seed = 0);

/// Standalone trainable head over precomputed features.
template <typename T>
Model<T> attach_head(std::size_t feature_dim, std::size_t hidden_dim, std::size_t classes,
                     double dropout_rate = 0.5, std::uint64_t init_seed = 0);

/// Custom screening CNN for the given input shape.
template <typename T>
Model<T> build_custom_cnn(Shape input = {3, 256, 256}, std::size_t classes = 3,
                          std::size_t fc_hidden = 5461, double dropout_rate = 0.5,
                          std::uint64_t init_seed = 0);

/// Deterministic 64-bit mixing of a base seed with stream indices.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace xcnn

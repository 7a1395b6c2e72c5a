#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "xcnn/tensor.hpp"

namespace xcnn {

enum class LayerKind { kConv2d, kBatchNorm2d, kRelu, kMaxPool2x2, kFlatten, kLinear, kDropout, kSoftmax };

std::string_view layer_kind_name(LayerKind kind);

/// One layer of a declarative architecture. Only the fields relevant to
/// `kind` are meaningful: conv2d uses in/out/kernel/stride/padding, linear
/// uses in/out, batchnorm2d uses in (channels)/epsilon/momentum, dropout
/// uses rate.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  double rate = 0.0;
  double epsilon = 1e-5;
  double momentum = 0.1;

  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec batchnorm2d(std::size_t channels, double epsilon = 1e-5, double momentum = 0.1);
  static LayerSpec relu();
  static LayerSpec maxpool2x2();
  static LayerSpec flatten();
  static LayerSpec linear(std::size_t in, std::size_t out);
  static LayerSpec dropout(double rate);
  static LayerSpec softmax();

  bool operator==(const LayerSpec&) const = default;
};

/// Throws InvalidArgument for non-positive counts or a dropout rate outside [0, 1).
void validate_layer(const LayerSpec& layer);

/// Layers plus the per-sample input shape (no batch axis), e.g. {3, 256, 256}
/// for images or {2048} for precomputed feature vectors.
struct ArchitectureSpec {
  Shape input;
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;

  bool operator==(const ArchitectureSpec&) const = default;
};

/// Per-sample output shape after each layer. Throws ShapeError on the first
/// layer that cannot accept its input, and when the final shape is not
/// {classes}.
std::vector<Shape> propagate_shapes(const ArchitectureSpec& spec);

/// Conv-BN-ReLU-MaxPool x3 (6, 12, 32 channels; 3x3 kernels, stride 1,
/// padding 1), flatten, Linear(->fc_hidden) + Dropout, Linear(->classes).
/// The defaults give the 3x256x256 screening network with a 32768-wide
/// flatten and 5461 hidden units.
ArchitectureSpec custom_cnn_spec(Shape input = {3, 256, 256}, std::size_t classes = 3,
                                 std::size_t fc_hidden = 5461, double dropout_rate = 0.5);

/// Classifier head over frozen features: Linear(feature->hidden) + ReLU +
/// Dropout + Linear(hidden->classes), or a single Linear when hidden == 0.
std::vector<LayerSpec> head_layers(std::size_t feature_dim, std::size_t hidden_dim,
                                   std::size_t classes, double dropout_rate);
ArchitectureSpec head_spec(std::size_t feature_dim, std::size_t hidden_dim, std::size_t classes,
                           double dropout_rate = 0.5);

// Parameter shapes a layer owns, in storage order. Running statistics are
// buffers, not parameters, and are not listed here.
enum class ParamRole { kWeight, kBias, kGamma, kBeta };
std::string_view param_role_name(ParamRole role);
struct ParamShape {
  ParamRole role;
  Shape shape;
};
std::vector<ParamShape> layer_parameter_shapes(const LayerSpec& layer);

struct LayerParameterCount {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::kRelu;
  std::size_t count = 0;
  bool trainable = true;
};

/// Exact parameter totals. Conv/linear weights+biases and batchnorm affine
/// parameters are reported separately.
struct ParameterAudit {
  std::size_t all = 0;
  std::size_t trainable = 0;
  std::size_t conv_linear = 0;
  std::size_t batchnorm_affine = 0;
  std::vector<LayerParameterCount> per_layer;
};

ParameterAudit audit_parameters(const ArchitectureSpec& spec);

/// Line-oriented text form used inside checkpoints.
std::string to_descriptor(const ArchitectureSpec& spec);
ArchitectureSpec parse_descriptor(std::string_view text);

}  // namespace xcnn

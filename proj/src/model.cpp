#include "xcnn/model.hpp"

#include <cmath>
#include <random>

#include "xcnn/ops.hpp"

namespace xcnn {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer applied to each component in turn
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

template <typename T>
Model<T>::Model(ArchitectureSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  propagate_shapes(spec_);
  first_param_.assign(spec_.layers.size(), -1);
  first_buffer_.assign(spec_.layers.size(), -1);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const auto shapes = layer_parameter_shapes(l);
    if (!shapes.empty()) first_param_[i] = static_cast<long>(params_.size());
    std::mt19937_64 rng(mix_seed(init_seed, i));
    for (const auto& ps : shapes) {
      const std::size_t n = shape_numel(ps.shape);
      std::vector<T> values(n, T{0});
      if (ps.role == ParamRole::kWeight) {
        const std::size_t fan_in = n / ps.shape[0];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : values) {
          const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
          v = static_cast<T>((2.0 * u - 1.0) * bound);
        }
      } else if (ps.role == ParamRole::kGamma) {
        std::fill(values.begin(), values.end(), T{1});
      }
      params_.push_back({"layer" + std::to_string(i) + "." + std::string(param_role_name(ps.role)),
                         i, ps.role, Tensor<T>(ps.shape, std::move(values), true)});
    }
    if (l.kind == LayerKind::kBatchNorm2d) {
      first_buffer_[i] = static_cast<long>(buffers_.size());
      buffers_.push_back({"layer" + std::to_string(i) + ".running_mean", i,
                          std::vector<T>(l.in, T{0})});
      buffers_.push_back({"layer" + std::to_string(i) + ".running_var", i,
                          std::vector<T>(l.in, T{1})});
    }
  }
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch, std::uint64_t seed, const LayerObserver& observe) {
  Shape expected{batch.extent(0)};
  expected.insert(expected.end(), spec_.input.begin(), spec_.input.end());
  if (batch.shape() != expected) {
    throw ShapeError("model expects batch of " + shape_str(spec_.input) + ", got " +
                     shape_str(batch.shape()));
  }
  const bool training = mode_ == Mode::kTrain;
  Tensor<T> x = batch;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const long p = first_param_[i];
    switch (l.kind) {
      case LayerKind::kConv2d:
        x = conv2d(x, params_[p].tensor, params_[p + 1].tensor, l.stride, l.padding);
        break;
      case LayerKind::kBatchNorm2d: {
        auto& mean = buffers_[first_buffer_[i]].values;
        auto& var = buffers_[first_buffer_[i] + 1].values;
        x = batchnorm2d(x, params_[p].tensor, params_[p + 1].tensor, std::span<T>(mean),
                        std::span<T>(var), {l.epsilon, l.momentum, training});
        break;
      }
      case LayerKind::kRelu:
        x = relu(x);
        break;
      case LayerKind::kMaxPool2x2:
        x = maxpool2x2(x);
        break;
      case LayerKind::kFlatten:
        x = flatten(x);
        break;
      case LayerKind::kLinear:
        x = linear(x, params_[p].tensor, params_[p + 1].tensor);
        break;
      case LayerKind::kDropout:
        x = dropout(x, l.rate, training, mix_seed(seed, i, 0xd50));
        break;
      case LayerKind::kSoftmax:
        x = softmax(x);
        break;
    }
    if (observe) observe(i, x);
  }
  return x;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::trainable_parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& p : params_) {
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  }
  return out;
}

template <typename T>
void Model<T>::freeze_layers(std::size_t begin, std::size_t end) {
  for (auto& p : params_) {
    if (p.layer >= begin && p.layer < end) {
      p.tensor.set_requires_grad(false);
      p.tensor.zero_grad();
    }
  }
}

template <typename T>
bool Model<T>::layer_frozen(std::size_t layer) const {
  for (const auto& p : params_) {
    if (p.layer == layer) return !p.tensor.requires_grad();
  }
  return false;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
std::size_t Model<T>::count_parameters(ParamFilter filter) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (filter == ParamFilter::kAll || p.tensor.requires_grad()) n += p.tensor.numel();
  }
  return n;
}

template <typename T>
ParameterAudit Model<T>::audit() const {
  ParameterAudit a = audit_parameters(spec_);
  a.trainable = 0;
  for (auto& row : a.per_layer) {
    row.trainable = !layer_frozen(row.layer);
    if (row.trainable) a.trainable += row.count;
  }
  return a;
}

template <typename T>
ModelState<T> Model<T>::state() const {
  ModelState<T> s;
  for (const auto& p : params_) s.parameters.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  for (const auto& b : buffers_) s.buffers.push_back(b.values);
  return s;
}

template <typename T>
void Model<T>::load_state(const ModelState<T>& s) {
  if (s.parameters.size() != params_.size() || s.buffers.size() != buffers_.size()) {
    throw IntegrityError("state has " + std::to_string(s.parameters.size()) + " parameters / " +
                         std::to_string(s.buffers.size()) + " buffers, model has " +
                         std::to_string(params_.size()) + " / " + std::to_string(buffers_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (s.parameters[i].size() != params_[i].tensor.numel()) {
      throw IntegrityError("size mismatch for " + params_[i].name);
    }
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    if (s.buffers[i].size() != buffers_[i].values.size()) {
      throw IntegrityError("size mismatch for " + buffers_[i].name);
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_data();
    std::copy(s.parameters[i].begin(), s.parameters[i].end(), dst.begin());
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) buffers_[i].values = s.buffers[i];
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out(spec_, 0);
  out.mode_ = mode_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = out.params_[i].tensor.mutable_data();
    const auto src = params_[i].tensor.data();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
    out.params_[i].tensor.set_requires_grad(params_[i].tensor.requires_grad());
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    out.buffers_[i].values.assign(buffers_[i].values.begin(), buffers_[i].values.end());
  }
  return out;
}

template <typename T>
Model<T> attach_head(const Model<T>& backbone, std::size_t hidden_dim, std::size_t classes,
                     double dropout_rate, std::uint64_t init_seed) {
  const auto shapes = propagate_shapes(backbone.spec());
  ArchitectureSpec spec = backbone.spec();
  Shape features = shapes.empty() ? spec.input : shapes.back();
  if (features.size() != 1) spec.layers.push_back(LayerSpec::flatten());
  const std::size_t feature_dim = shape_numel(features);
  const std::size_t backbone_layers = spec.layers.size();
  for (const auto& l : head_layers(feature_dim, hidden_dim, classes, dropout_rate)) {
    spec.layers.push_back(l);
  }
  spec.classes = classes;
  Model<T> model(spec, init_seed);
  // Copy backbone values; parameters and buffers come first in storage order.
  auto& dst_params = model.parameters();
  const auto& src_params = backbone.parameters();
  for (std::size_t i = 0; i < src_params.size(); ++i) {
    auto d = dst_params[i].tensor.mutable_data();
    std::copy(src_params[i].tensor.data().begin(), src_params[i].tensor.data().end(), d.begin());
  }
  for (std::size_t i = 0; i < backbone.buffers().size(); ++i) {
    model.buffers()[i].values = backbone.buffers()[i].values;
  }
  model.freeze_layers(0, backbone_layers);
  return model;
}

template <typename T>
Model<T> attach_head(std::size_t feature_dim, std::size_t hidden_dim, std::size_t classes,
                     double dropout_rate, std::uint64_t init_seed) {
  return Model<T>(head_spec(feature_dim, hidden_dim, classes, dropout_rate), init_seed);
}

template <typename T>
Model<T> build_custom_cnn(Shape input, std::size_t classes, std::size_t fc_hidden,
                          double dropout_rate, std::uint64_t init_seed) {
  return Model<T>(custom_cnn_spec(std::move(input), classes, fc_hidden, dropout_rate), init_seed);
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;
template class Model<long double>;
template Model<long double> Model<double>::cast<long double>() const;

template Model<float> attach_head(const Model<float>&, std::size_t, std::size_t, double, std::uint64_t);
template Model<double> attach_head(const Model<double>&, std::size_t, std::size_t, double, std::uint64_t);
template Model<float> attach_head<float>(std::size_t, std::size_t, std::size_t, double, std::uint64_t);
template Model<double> attach_head<double>(std::size_t, std::size_t, std::size_t, double, std::uint64_t);
template Model<float> build_custom_cnn<float>(Shape, std::size_t, std::size_t, double, std::uint64_t);
template Model<double> build_custom_cnn<double>(Shape, std::size_t, std::size_t, double, std::uint64_t);

}  // namespace xcnn

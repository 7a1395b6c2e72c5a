#include "xcnn/layers.hpp"

#include <charconv>
#include <map>
#include <sstream>

namespace xcnn {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename Number>
Number parse_number(std::string_view text, std::string_view what) {
  Number value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("bad " + std::string(what) + " value '" + std::string(text) + "'");
  }
  return value;
}

std::string layer_error(std::size_t index, const LayerSpec& layer, const std::string& msg) {
  return "layer " + std::to_string(index) + " (" + std::string(layer_kind_name(layer.kind)) +
         "): " + msg;
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kBatchNorm2d: return "batchnorm2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2x2: return "maxpool2x2";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kSoftmax: return "softmax";
  }
  return "unknown";
}

std::string_view param_role_name(ParamRole role) {
  switch (role) {
    case ParamRole::kWeight: return "weight";
    case ParamRole::kBias: return "bias";
    case ParamRole::kGamma: return "gamma";
    case ParamRole::kBeta: return "beta";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t stride, std::size_t padding) {
  LayerSpec l;
  l.kind = LayerKind::kConv2d;
  l.in = in;
  l.out = out;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::batchnorm2d(std::size_t channels, double epsilon, double momentum) {
  LayerSpec l;
  l.kind = LayerKind::kBatchNorm2d;
  l.in = channels;
  l.out = channels;
  l.epsilon = epsilon;
  l.momentum = momentum;
  return l;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool2x2() {
  LayerSpec l;
  l.kind = LayerKind::kMaxPool2x2;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::kFlatten;
  return l;
}

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) {
  LayerSpec l;
  l.kind = LayerKind::kLinear;
  l.in = in;
  l.out = out;
  return l;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec l;
  l.kind = LayerKind::kDropout;
  l.rate = rate;
  return l;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec l;
  l.kind = LayerKind::kSoftmax;
  return l;
}

void validate_layer(const LayerSpec& layer) {
  const std::string name(layer_kind_name(layer.kind));
  switch (layer.kind) {
    case LayerKind::kConv2d:
      if (layer.in < 1 || layer.out < 1) throw InvalidArgument(name + ": channel counts must be >= 1");
      if (layer.kernel < 1) throw InvalidArgument(name + ": kernel size must be >= 1");
      if (layer.stride < 1) throw InvalidArgument(name + ": stride must be >= 1");
      break;
    case LayerKind::kLinear:
      if (layer.in < 1 || layer.out < 1) throw InvalidArgument(name + ": feature counts must be >= 1");
      break;
    case LayerKind::kBatchNorm2d:
      if (layer.in < 1) throw InvalidArgument(name + ": channel count must be >= 1");
      if (!(layer.epsilon > 0.0)) throw InvalidArgument(name + ": epsilon must be > 0");
      if (!(layer.momentum >= 0.0 && layer.momentum <= 1.0)) {
        throw InvalidArgument(name + ": momentum must be in [0, 1]");
      }
      break;
    case LayerKind::kDropout:
      if (!(layer.rate >= 0.0 && layer.rate < 1.0)) {
        throw InvalidArgument(name + ": rate must be in [0, 1), got " + format_double(layer.rate));
      }
      break;
    default:
      break;
  }
}

std::vector<Shape> propagate_shapes(const ArchitectureSpec& spec) {
  if (spec.input.empty()) throw ShapeError("architecture has no input shape");
  for (std::size_t e : spec.input) {
    if (e == 0) throw ShapeError("input extents must be >= 1, got " + shape_str(spec.input));
  }
  if (spec.classes < 1) throw ShapeError("architecture needs at least one class");
  std::vector<Shape> shapes;
  shapes.reserve(spec.layers.size());
  Shape cur = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    validate_layer(l);
    auto fail = [&](const std::string& msg) {
      throw ShapeError(layer_error(i, l, msg + ", input " + shape_str(cur)));
    };
    switch (l.kind) {
      case LayerKind::kConv2d: {
        if (cur.size() != 3) fail("expects C x H x W");
        if (cur[0] != l.in) fail("expects " + std::to_string(l.in) + " channels");
        const std::size_t sh = cur[1] + 2 * l.padding, sw = cur[2] + 2 * l.padding;
        if (sh < l.kernel || sw < l.kernel || (sh - l.kernel) % l.stride != 0 ||
            (sw - l.kernel) % l.stride != 0) {
          fail("output extent is not an integer");
        }
        cur = {l.out, (sh - l.kernel) / l.stride + 1, (sw - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::kBatchNorm2d:
        if (cur.size() != 3) fail("expects C x H x W");
        if (cur[0] != l.in) fail("expects " + std::to_string(l.in) + " channels");
        break;
      case LayerKind::kMaxPool2x2:
        if (cur.size() != 3) fail("expects C x H x W");
        if (cur[1] % 2 != 0 || cur[2] % 2 != 0) fail("needs even spatial extents");
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::kFlatten:
        cur = {shape_numel(cur)};
        break;
      case LayerKind::kLinear:
        if (cur.size() != 1) fail("expects a flat feature vector");
        if (cur[0] != l.in) fail("expects " + std::to_string(l.in) + " features");
        cur = {l.out};
        break;
      case LayerKind::kSoftmax:
        if (cur.size() != 1) fail("expects a flat vector");
        break;
      case LayerKind::kRelu:
      case LayerKind::kDropout:
        break;
    }
    shapes.push_back(cur);
  }
  if (cur != Shape{spec.classes}) {
    throw ShapeError("architecture emits " + shape_str(cur) + ", expected " +
                     std::to_string(spec.classes) + " class logits");
  }
  return shapes;
}

ArchitectureSpec custom_cnn_spec(Shape input, std::size_t classes, std::size_t fc_hidden,
                                 double dropout_rate) {
  if (input.size() != 3) throw ShapeError("custom CNN expects a C x H x W input");
  ArchitectureSpec spec;
  spec.input = input;
  spec.classes = classes;
  std::size_t channels = input[0];
  for (std::size_t width : {6u, 12u, 32u}) {
    spec.layers.push_back(LayerSpec::conv2d(channels, width, 3, 1, 1));
    spec.layers.push_back(LayerSpec::batchnorm2d(width));
    spec.layers.push_back(LayerSpec::relu());
    spec.layers.push_back(LayerSpec::maxpool2x2());
    channels = width;
  }
  if (input[1] % 8 != 0 || input[2] % 8 != 0) {
    throw ShapeError("custom CNN needs spatial extents divisible by 8, got " + shape_str(input));
  }
  const std::size_t flat = channels * (input[1] / 8) * (input[2] / 8);
  spec.layers.push_back(LayerSpec::flatten());
  spec.layers.push_back(LayerSpec::linear(flat, fc_hidden));
  spec.layers.push_back(LayerSpec::dropout(dropout_rate));
  spec.layers.push_back(LayerSpec::linear(fc_hidden, classes));
  propagate_shapes(spec);
  return spec;
}

std::vector<LayerSpec> head_layers(std::size_t feature_dim, std::size_t hidden_dim,
                                   std::size_t classes, double dropout_rate) {
  if (feature_dim < 1 || classes < 1) {
    throw InvalidArgument("head needs feature_dim >= 1 and classes >= 1");
  }
  if (hidden_dim == 0) return {LayerSpec::linear(feature_dim, classes)};
  std::vector<LayerSpec> layers{LayerSpec::linear(feature_dim, hidden_dim), LayerSpec::relu(),
                                LayerSpec::dropout(dropout_rate),
                                LayerSpec::linear(hidden_dim, classes)};
  for (const auto& l : layers) validate_layer(l);
  return layers;
}

ArchitectureSpec head_spec(std::size_t feature_dim, std::size_t hidden_dim, std::size_t classes,
                           double dropout_rate) {
  ArchitectureSpec spec;
  spec.input = {feature_dim};
  spec.classes = classes;
  spec.layers = head_layers(feature_dim, hidden_dim, classes, dropout_rate);
  propagate_shapes(spec);
  return spec;
}

std::vector<ParamShape> layer_parameter_shapes(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::kConv2d:
      return {{ParamRole::kWeight, {l.out, l.in, l.kernel, l.kernel}}, {ParamRole::kBias, {l.out}}};
    case LayerKind::kLinear:
      return {{ParamRole::kWeight, {l.out, l.in}}, {ParamRole::kBias, {l.out}}};
    case LayerKind::kBatchNorm2d:
      return {{ParamRole::kGamma, {l.in}}, {ParamRole::kBeta, {l.in}}};
    default:
      return {};
  }
}

ParameterAudit audit_parameters(const ArchitectureSpec& spec) {
  ParameterAudit audit;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    std::size_t count = 0;
    for (const auto& p : layer_parameter_shapes(l)) count += shape_numel(p.shape);
    if (count == 0) continue;
    audit.per_layer.push_back({i, l.kind, count, true});
    audit.all += count;
    audit.trainable += count;
    if (l.kind == LayerKind::kBatchNorm2d) {
      audit.batchnorm_affine += count;
    } else {
      audit.conv_linear += count;
    }
  }
  return audit;
}

std::string to_descriptor(const ArchitectureSpec& spec) {
  std::ostringstream out;
  out << "input";
  for (std::size_t e : spec.input) out << ' ' << e;
  out << "\nclasses " << spec.classes << '\n';
  for (const LayerSpec& l : spec.layers) {
    out << "layer " << layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::kConv2d:
        out << " in=" << l.in << " out=" << l.out << " kernel=" << l.kernel
            << " stride=" << l.stride << " padding=" << l.padding;
        break;
      case LayerKind::kLinear:
        out << " in=" << l.in << " out=" << l.out;
        break;
      case LayerKind::kBatchNorm2d:
        out << " channels=" << l.in << " epsilon=" << format_double(l.epsilon)
            << " momentum=" << format_double(l.momentum);
        break;
      case LayerKind::kDropout:
        out << " rate=" << format_double(l.rate);
        break;
      default:
        break;
    }
    out << '\n';
  }
  return out.str();
}

ArchitectureSpec parse_descriptor(std::string_view text) {
  static const std::map<std::string, LayerKind, std::less<>> kinds = {
      {"conv2d", LayerKind::kConv2d},   {"batchnorm2d", LayerKind::kBatchNorm2d},
      {"relu", LayerKind::kRelu},       {"maxpool2x2", LayerKind::kMaxPool2x2},
      {"flatten", LayerKind::kFlatten}, {"linear", LayerKind::kLinear},
      {"dropout", LayerKind::kDropout}, {"softmax", LayerKind::kSoftmax}};

  ArchitectureSpec spec;
  bool saw_input = false, saw_classes = false;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream words(line);
    std::string head;
    words >> head;
    if (head == "input") {
      std::string tok;
      while (words >> tok) spec.input.push_back(parse_number<std::size_t>(tok, "input extent"));
      saw_input = true;
    } else if (head == "classes") {
      std::string tok;
      words >> tok;
      spec.classes = parse_number<std::size_t>(tok, "classes");
      saw_classes = true;
    } else if (head == "layer") {
      std::string kind_name;
      words >> kind_name;
      auto it = kinds.find(kind_name);
      if (it == kinds.end()) throw FormatError("unknown layer kind '" + kind_name + "'");
      LayerSpec l;
      l.kind = it->second;
      std::string kv;
      while (words >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw FormatError("malformed layer field '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string_view value = std::string_view(kv).substr(eq + 1);
        if (key == "in" || key == "channels") {
          l.in = parse_number<std::size_t>(value, key);
          if (key == "channels") l.out = l.in;
        } else if (key == "out") {
          l.out = parse_number<std::size_t>(value, key);
        } else if (key == "kernel") {
          l.kernel = parse_number<std::size_t>(value, key);
        } else if (key == "stride") {
          l.stride = parse_number<std::size_t>(value, key);
        } else if (key == "padding") {
          l.padding = parse_number<std::size_t>(value, key);
        } else if (key == "rate") {
          l.rate = parse_number<double>(value, key);
        } else if (key == "epsilon") {
          l.epsilon = parse_number<double>(value, key);
        } else if (key == "momentum") {
          l.momentum = parse_number<double>(value, key);
        } else {
          throw FormatError("unknown layer field '" + key + "'");
        }
      }
      spec.layers.push_back(l);
    } else {
      throw FormatError("unexpected descriptor line '" + line + "'");
    }
  }
  if (!saw_input || !saw_classes) throw FormatError("descriptor lacks input or classes line");
  try {
    propagate_shapes(spec);
  } catch (const Error& e) {
    throw FormatError(std::string("descriptor does not describe a valid model: ") + e.what());
  }
  return spec;
}

}  // namespace xcnn

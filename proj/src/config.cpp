#include "xcnn/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "xcnn/error.hpp"

namespace xcnn {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(std::string_view key, std::string_view value) {
  N out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + std::string(key) + "': bad number '" + std::string(value) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false");
}

std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::string_view architecture_name(Architecture a) {
  return a == Architecture::kCustomCnn ? "custom-cnn" : "feature-head";
}

std::string_view class_weight_mode_name(ClassWeightMode m) {
  return m == ClassWeightMode::kInverseFrequency ? "inverse-frequency" : "uniform";
}

std::string_view background_mode_name(BackgroundMode m) {
  return m == BackgroundMode::kMean ? "mean" : "zero";
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string k(key);
  if (k == "data_root") {
    data_root = std::string(value);
  } else if (k == "features") {
    features = std::string(value);
  } else if (k == "architecture") {
    if (value == "custom-cnn") {
      architecture = Architecture::kCustomCnn;
    } else if (value == "feature-head") {
      architecture = Architecture::kFeatureHead;
    } else {
      throw ConfigError("architecture must be custom-cnn or feature-head");
    }
  } else if (k == "image_size") {
    image_size = parse_number<std::size_t>(key, value);
  } else if (k == "fc_hidden") {
    fc_hidden = parse_number<std::size_t>(key, value);
  } else if (k == "head_hidden") {
    head_hidden = parse_number<std::size_t>(key, value);
  } else if (k == "feature_dim") {
    feature_dim = parse_number<std::size_t>(key, value);
  } else if (k == "dropout") {
    dropout = parse_number<double>(key, value);
  } else if (k == "split_train") {
    split.train = parse_number<double>(key, value);
  } else if (k == "split_val") {
    split.val = parse_number<double>(key, value);
  } else if (k == "split_test") {
    split.test = parse_number<double>(key, value);
  } else if (k == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
  } else if (k == "learning_rate") {
    train.learning_rate = parse_number<double>(key, value);
  } else if (k == "batch_size") {
    train.batch_size = parse_number<std::size_t>(key, value);
  } else if (k == "max_epochs") {
    train.max_epochs = parse_number<std::size_t>(key, value);
  } else if (k == "patience") {
    train.patience = parse_number<std::size_t>(key, value);
  } else if (k == "beta1") {
    train.beta1 = parse_number<double>(key, value);
  } else if (k == "beta2") {
    train.beta2 = parse_number<double>(key, value);
  } else if (k == "epsilon") {
    train.epsilon = parse_number<double>(key, value);
  } else if (k == "augment") {
    augment = parse_bool(key, value);
  } else if (k == "rotation_degrees") {
    augmentation.rotation_degrees = parse_number<double>(key, value);
  } else if (k == "crop_fraction") {
    augmentation.crop_fraction = parse_number<double>(key, value);
  } else if (k == "flip_probability") {
    augmentation.flip_probability = parse_number<double>(key, value);
  } else if (k == "class_weights") {
    if (value == "inverse-frequency") {
      class_weights = ClassWeightMode::kInverseFrequency;
    } else if (value == "uniform") {
      class_weights = ClassWeightMode::kUniform;
    } else {
      throw ConfigError("class_weights must be inverse-frequency or uniform");
    }
  } else if (k == "shap_grid") {
    shap.grid = parse_number<std::size_t>(key, value);
  } else if (k == "shap_budget") {
    shap.budget = parse_number<std::size_t>(key, value);
  } else if (k == "shap_background") {
    if (value == "mean") {
      shap.background = BackgroundMode::kMean;
    } else if (value == "zero") {
      shap.background = BackgroundMode::kZero;
    } else {
      throw ConfigError("shap_background must be mean or zero");
    }
  } else {
    throw ConfigError("unknown config key '" + k + "'");
  }
}

void RunConfig::validate() const {
  if (architecture == Architecture::kCustomCnn) {
    if (data_root.empty()) throw ConfigError("data_root is required");
    if (!std::filesystem::is_directory(data_root)) {
      throw ConfigError("data_root does not exist: " + data_root.string());
    }
    if (image_size < 8 || image_size % 8 != 0) throw ConfigError("image_size must be a positive multiple of 8");
    if (fc_hidden == 0) throw ConfigError("fc_hidden must be >= 1");
  } else {
    if (features.empty()) throw ConfigError("features is required for feature-head");
    if (!std::filesystem::is_regular_file(features)) {
      throw ConfigError("features file does not exist: " + features.string());
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  const double total = split.train + split.val + split.test;
  if (split.train <= 0.0 || split.val <= 0.0 || split.test <= 0.0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  if (shap.grid == 0) throw ConfigError("shap_grid must be >= 1");
  if (shap.budget < 3) throw ConfigError("shap_budget must be >= 3");
  try {
    train.validate();
    augmentation.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "architecture = " << architecture_name(architecture) << "\n";
  out << "data_root = " << data_root.string() << "\n";
  out << "features = " << features.string() << "\n";
  out << "image_size = " << image_size << "\n";
  out << "fc_hidden = " << fc_hidden << "\n";
  out << "head_hidden = " << head_hidden << "\n";
  out << "feature_dim = " << feature_dim << "\n";
  out << "dropout = " << fmt(dropout) << "\n";
  out << "split_train = " << fmt(split.train) << "\n";
  out << "split_val = " << fmt(split.val) << "\n";
  out << "split_test = " << fmt(split.test) << "\n";
  out << "seed = " << seed << "\n";
  out << "learning_rate = " << fmt(train.learning_rate) << "\n";
  out << "batch_size = " << train.batch_size << "\n";
  out << "max_epochs = " << train.max_epochs << "\n";
  out << "patience = " << train.patience << "\n";
  out << "beta1 = " << fmt(train.beta1) << "\n";
  out << "beta2 = " << fmt(train.beta2) << "\n";
  out << "epsilon = " << fmt(train.epsilon) << "\n";
  out << "augment = " << (augment ? "true" : "false") << "\n";
  out << "rotation_degrees = " << fmt(augmentation.rotation_degrees) << "\n";
  out << "crop_fraction = " << fmt(augmentation.crop_fraction) << "\n";
  out << "flip_probability = " << fmt(augmentation.flip_probability) << "\n";
  out << "class_weights = " << class_weight_mode_name(class_weights) << "\n";
  out << "shap_grid = " << shap.grid << "\n";
  out << "shap_budget = " << shap.budget << "\n";
  out << "shap_background = " << background_mode_name(shap.background) << "\n";
  return out.str();
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    cfg.set(key, value);
  }
  if (!base_dir.empty()) {
    if (!cfg.data_root.empty() && cfg.data_root.is_relative()) cfg.data_root = base_dir / cfg.data_root;
    if (!cfg.features.empty() && cfg.features.is_relative()) cfg.features = base_dir / cfg.features;
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.parent_path());
}

}  // namespace xcnn

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "xcnn/augment.hpp"
#include "xcnn/dataset.hpp"
#include "xcnn/trainer.hpp"

namespace xcnn {

enum class Architecture { kCustomCnn, kFeatureHead };
enum class ClassWeightMode { kInverseFrequency, kUniform };
enum class BackgroundMode { kMean, kZero };

struct ShapSettings {
  std::size_t grid = 4;
  std::size_t budget = 2048;
  BackgroundMode background = BackgroundMode::kMean;
};

struct RunConfig {
  std::filesystem::path data_root;
  std::filesystem::path features;  // feature-head mode: CSV `label,f0,f1,...`
  Architecture architecture = Architecture::kCustomCnn;
  std::size_t image_size = 256;
  std::size_t fc_hidden = 5461;
  std::size_t head_hidden = 256;
  std::size_t feature_dim = 0;  // declared width of the feature CSV
  double dropout = 0.5;
  SplitRatios split;
  std::uint64_t seed = 0;
  TrainConfig train;
  bool augment = true;
  AugmentationPolicy augmentation;
  ClassWeightMode class_weights = ClassWeightMode::kInverseFrequency;
  ShapSettings shap;

  /// Checks enumerations, ranges, and that referenced paths exist. Throws ConfigError.
  void validate() const;
  /// `key = value` lines, in a stable order.
  std::string to_text() const;
  /// Applies one key. Throws ConfigError on unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
};

/// Parses `key = value` lines; `#` starts a comment. Relative paths resolve
/// against `base_dir`. Does not validate.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

std::string_view architecture_name(Architecture a);
std::string_view class_weight_mode_name(ClassWeightMode m);
std::string_view background_mode_name(BackgroundMode m);

}  // namespace xcnn

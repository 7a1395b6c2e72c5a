#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xcnn/image.hpp"
#include "xcnn/model.hpp"

namespace xcnn {

/// Per-pixel segment ids (row-major H x W), each in [0, segments).
struct Segmentation {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t segments = 0;
  std::vector<std::uint32_t> labels;

  std::uint32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::vector<std::size_t> pixel_counts() const;
};

/// g x g equal rectangles, numbered row by row. Throws InvalidArgument
/// unless g divides both extents.
Segmentation grid_segment(std::size_t height, std::size_t width, std::size_t grid);
Segmentation grid_segment(const Image& image, std::size_t grid);

/// 1 = segment visible, 0 = masked.
using Coalition = std::vector<std::uint8_t>;

/// Visible segments keep `image` pixels, masked ones take `background`.
/// Throws ShapeError on mismatched shapes or coalition length.
Image apply_coalition(const Image& image, const Segmentation& seg, const Coalition& coalition,
                      const Image& background);
Image apply_coalition(const Image& image, const Segmentation& seg, const Coalition& coalition,
                      float background);

/// Per-channel mean over the images, broadcast to a full image.
Image mean_background(std::span<const Image> images);

/// (M - 1) / (C(M, s) s (M - s)); nullopt for s == 0 and s == M, where the
/// coalition is a hard constraint instead of a weighted row.
std::optional<double> shapley_kernel_weight(std::size_t m, std::size_t s);

using ValueFunction = std::function<double(const Coalition&)>;
/// Values for a batch of coalitions, in order.
using BatchValueFunction = std::function<std::vector<double>(std::span<const Coalition>)>;

inline constexpr std::size_t kMaxExactPlayers = 12;

/// Shapley values by enumerating all 2^M coalitions. Throws BudgetError
/// when M > kMaxExactPlayers.
std::vector<double> exact_shapley(const ValueFunction& v, std::size_t m);

enum class ShapMode { kExhaustive, kSampled };
const char* shap_mode_name(ShapMode mode);

struct ShapOptions {
  std::size_t budget = 2048;  // model evaluations, including full and empty
  std::uint64_t seed = 0;
};

struct ShapResult {
  std::vector<double> phi;
  double base_value = 0.0;  // v(empty)
  double full_value = 0.0;  // v(full)
  ShapMode mode = ShapMode::kExhaustive;
  std::size_t evaluations = 0;
};

/// Shapley-kernel weighted least squares with sum(phi) == v(full) - v(empty)
/// imposed by eliminating the last unknown. All 2^M coalitions are used
/// when they fit the budget; otherwise sizes are enumerated in complementary
/// pairs from the highest kernel weight down while the budget allows, and
/// the rest is sampled (each draw paired with its complement).
ShapResult kernel_shap(const BatchValueFunction& v, std::size_t m, const ShapOptions& options);
ShapResult kernel_shap(const ValueFunction& v, std::size_t m, const ShapOptions& options);

struct AttributionMap {
  std::vector<double> phi;
  double base_value = 0.0;
  double full_value = 0.0;
  std::size_t target_class = 0;
  std::string target_name;
  bool target_predicted = false;  // target chosen as the model's argmax
  ShapMode mode = ShapMode::kExhaustive;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  std::size_t grid = 0;
  std::string background;  // reference description, e.g. "mean" or "zero"
  Segmentation segmentation;

  double phi_sum() const;
};

/// Explains the target-class softmax probability of `model` on `image`
/// (3 x H x W in [0, 1]); masked segments show `background`.
template <typename T>
AttributionMap explain_image(Model<T>& model, const Image& image, const Segmentation& seg,
                             const Image& background, std::size_t target_class,
                             const ShapOptions& options, std::size_t batch_size = 16);

/// Eval-mode class probabilities for one image.
template <typename T>
std::vector<double> class_probabilities(Model<T>& model, const Image& image);

/// Plain `key value` lines, then one `phi <segment> <value>` line per segment.
std::string sidecar_text(const AttributionMap& map);

struct Sidecar {
  std::size_t target_class = 0;
  double base_value = 0.0;
  double full_value = 0.0;
  double phi_sum = 0.0;
  std::vector<double> phi;
};
/// Throws FormatError on malformed text.
Sidecar parse_sidecar(std::string_view text);

}  // namespace xcnn

#pragma once

#include <array>

#include "xcnn/image.hpp"
#include "xcnn/shap.hpp"

namespace xcnn {

inline constexpr std::array<float, 3> kPositiveTint = {255.0f / 255.0f, 0.0f, 82.0f / 255.0f};
inline constexpr std::array<float, 3> kNegativeTint = {0.0f, 139.0f / 255.0f, 251.0f / 255.0f};

struct HeatmapStyle {
  float max_alpha = 0.6f;
  std::size_t legend_height = 0;  // 0 picks max(4, H / 8)
};

/// RGB overlay of `base` with per-segment alpha |phi| / max|phi| * max_alpha:
/// pink where phi > 0, blue where phi < 0, untouched where phi == 0. A legend
/// strip (blue to pink ramp over mid grey) is appended below the image.
Image render_heatmap(const AttributionMap& map, const Image& base, const HeatmapStyle& style = {});

/// Rows [0, H) of a rendered heatmap, i.e. without the legend.
Image heatmap_body(const Image& heatmap, std::size_t height);

}  // namespace xcnn

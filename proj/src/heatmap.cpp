#include "xcnn/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "xcnn/error.hpp"

namespace xcnn {

namespace {

float blend(float pixel, float tint, float alpha) { return (1.0f - alpha) * pixel + alpha * tint; }

}  // namespace

Image render_heatmap(const AttributionMap& map, const Image& base, const HeatmapStyle& style) {
  const Segmentation& seg = map.segmentation;
  if (base.height != seg.height || base.width != seg.width) {
    throw ShapeError("attribution segments do not align with the image");
  }
  if (map.phi.size() != seg.segments) throw ShapeError("phi count differs from segment count");
  if (!(style.max_alpha >= 0.0f && style.max_alpha <= 1.0f)) {
    throw InvalidArgument("max_alpha must be in [0, 1]");
  }
  const Image rgb = to_rgb(base);
  const std::size_t h = rgb.height, w = rgb.width;
  const std::size_t legend = style.legend_height ? style.legend_height : std::max<std::size_t>(4, h / 8);

  double peak = 0.0;
  for (double p : map.phi) peak = std::max(peak, std::abs(p));

  Image out(3, h + legend, w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float v = rgb.at(c, y, x);
        const double p = map.phi[seg.at(y, x)];
        if (peak > 0.0 && p != 0.0) {
          const auto alpha = static_cast<float>(std::abs(p) / peak) * style.max_alpha;
          v = blend(v, p > 0.0 ? kPositiveTint[c] : kNegativeTint[c], alpha);
        }
        out.at(c, y, x) = v;
      }
    }
  }

  // Legend: strongest blue at the left edge, neutral grey in the middle,
  // strongest pink at the right edge.
  for (std::size_t x = 0; x < w; ++x) {
    const double t = w > 1 ? 2.0 * static_cast<double>(x) / static_cast<double>(w - 1) - 1.0 : 0.0;
    const auto alpha = static_cast<float>(std::abs(t)) * style.max_alpha;
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = t == 0.0 ? 0.5f : blend(0.5f, t > 0.0 ? kPositiveTint[c] : kNegativeTint[c], alpha);
      for (std::size_t y = h; y < h + legend; ++y) out.at(c, y, x) = v;
    }
  }
  return out;
}

Image heatmap_body(const Image& heatmap, std::size_t height) {
  if (height > heatmap.height) throw ShapeError("body taller than heatmap");
  Image out(heatmap.channels, height, heatmap.width);
  for (std::size_t c = 0; c < heatmap.channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < heatmap.width; ++x) out.at(c, y, x) = heatmap.at(c, y, x);
    }
  }
  return out;
}

}  // namespace xcnn

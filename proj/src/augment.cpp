#include "xcnn/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "xcnn/error.hpp"
#include "xcnn/model.hpp"

namespace xcnn {

void AugmentationPolicy::validate() const {
  if (!(rotation_degrees >= 0.0 && rotation_degrees <= 180.0)) {
    throw InvalidArgument("rotation range must be in [0, 180] degrees");
  }
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) {
    throw InvalidArgument("crop fraction must be in (0, 1]");
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw InvalidArgument("flip probability must be in [0, 1]");
  }
}

AugmentDraw draw_augmentation(const AugmentationPolicy& policy, std::uint64_t call_seed) {
  std::mt19937_64 rng(mix_seed(policy.seed, call_seed, 0xa09));
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  AugmentDraw d;
  const double u_angle = uniform();
  const double u_flip = uniform();
  d.angle_degrees = policy.rotation_degrees * (2.0 * u_angle - 1.0);
  d.flip = u_flip < policy.flip_probability;
  return d;
}

Image rotate(const Image& image, double degrees) {
  if (degrees == 0.0) return image;
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  Image out(image.channels, image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    const double dy = static_cast<double>(y) - cy;
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dx = static_cast<double>(x) - cx;
      // Inverse mapping: rotate the output coordinate back into the source.
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        out.at(ch, y, x) = sample_bilinear(image, ch, sy, sx);
      }
    }
  }
  return out;
}

Image center_crop_resize(const Image& image, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("crop fraction must be in (0, 1]");
  if (fraction == 1.0) return image;
  const auto crop_h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(image.height * fraction)));
  const auto crop_w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(image.width * fraction)));
  const double y0 = (static_cast<double>(image.height) - static_cast<double>(crop_h)) / 2.0;
  const double x0 = (static_cast<double>(image.width) - static_cast<double>(crop_w)) / 2.0;
  const double sy = static_cast<double>(crop_h) / static_cast<double>(image.height);
  const double sx = static_cast<double>(crop_w) / static_cast<double>(image.width);
  Image out(image.channels, image.height, image.width);
  for (std::size_t ch = 0; ch < image.channels; ++ch) {
    for (std::size_t y = 0; y < image.height; ++y) {
      const double src_y = y0 + (static_cast<double>(y) + 0.5) * sy - 0.5;
      for (std::size_t x = 0; x < image.width; ++x) {
        const double src_x = x0 + (static_cast<double>(x) + 0.5) * sx - 0.5;
        out.at(ch, y, x) = sample_bilinear(image, ch, src_y, src_x);
      }
    }
  }
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (std::size_t ch = 0; ch < image.channels; ++ch) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        out.at(ch, y, x) = image.at(ch, y, image.width - 1 - x);
      }
    }
  }
  return out;
}

Image augment(const Image& image, const AugmentationPolicy& policy, std::uint64_t call_seed) {
  policy.validate();
  const AugmentDraw d = draw_augmentation(policy, call_seed);
  Image out = rotate(image, d.angle_degrees);
  out = center_crop_resize(out, policy.crop_fraction);
  if (d.flip) out = flip_horizontal(out);
  for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Sample augment(const Sample& sample, const AugmentationPolicy& policy, std::uint64_t call_seed) {
  return {augment(sample.image, policy, call_seed), sample.label, sample.source_id};
}

}  // namespace xcnn

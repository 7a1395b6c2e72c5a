#pragma once

#include <cstdint>

#include "xcnn/dataset.hpp"
#include "xcnn/image.hpp"

namespace xcnn {

struct AugmentationPolicy {
  double rotation_degrees = 15.0;  // angle ~ Uniform(-r, +r)
  double crop_fraction = 0.9;      // centre crop side fraction, resized back
  double flip_probability = 0.5;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument for out-of-range fields.
  void validate() const;
  bool is_identity() const {
    return rotation_degrees == 0.0 && crop_fraction == 1.0 && flip_probability == 0.0;
  }
};

struct AugmentDraw {
  double angle_degrees = 0.0;
  bool flip = false;
};

AugmentDraw draw_augmentation(const AugmentationPolicy& policy, std::uint64_t call_seed);

/// Rotation about the image centre; bilinear resampling, replicated borders.
Image rotate(const Image& image, double degrees);
/// Centre crop to `fraction` of each side, resized back to the input extent.
Image center_crop_resize(const Image& image, double fraction);
Image flip_horizontal(const Image& image);

/// Rotate, centre-crop + resize, then flip, with draws determined by
/// (policy.seed, call_seed). Output is clipped to [0, 1].
Image augment(const Image& image, const AugmentationPolicy& policy, std::uint64_t call_seed);
Sample augment(const Sample& sample, const AugmentationPolicy& policy, std::uint64_t call_seed);

}  // namespace xcnn

#include "xcnn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "xcnn/error.hpp"
#include "xcnn/model.hpp"

namespace xcnn {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

}  // namespace

std::vector<SyntheticClass> default_synthetic_classes(std::size_t unit) {
  return {{"Benign", SyntheticShape::kDisk, unit},
          {"Malignant", SyntheticShape::kStar, 4 * unit},
          {"Normal", SyntheticShape::kNone, 4 * unit}};
}

Image render_synthetic(SyntheticShape shape, std::size_t size, std::mt19937_64& rng) {
  Image img(1, size, size);
  const double s = static_cast<double>(size);
  for (auto& v : img.pixels) v = static_cast<float>(0.15 + uniform(rng, -0.05, 0.05));

  // Faint vessel-like lines appear in every class.
  const int lines = 1 + static_cast<int>(rng() % 2);
  for (int l = 0; l < lines; ++l) {
    const double angle = uniform(rng, 0.0, std::numbers::pi);
    const double offset = uniform(rng, -0.3, 0.3) * s;
    const double nx = std::cos(angle), ny = std::sin(angle);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double d = std::abs((x - s / 2) * nx + (y - s / 2) * ny - offset);
        if (d < 0.7) img.at(0, y, x) = std::max(img.at(0, y, x), 0.4f);
      }
    }
  }
  if (shape == SyntheticShape::kNone) return img;

  const double cx = uniform(rng, 0.3, 0.7) * s;
  const double cy = uniform(rng, 0.3, 0.7) * s;
  const double radius = uniform(rng, 0.14, 0.2) * s;
  const int spikes = 5 + static_cast<int>(rng() % 3);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const float brightness = static_cast<float>(uniform(rng, 0.8, 0.95));
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double r = std::hypot(dx, dy);
      double boundary = radius;
      if (shape == SyntheticShape::kStar) {
        // Sharp spikes alternating with a small core.
        const double a = std::atan2(dy, dx) * spikes + phase;
        boundary = radius * (0.35 + 0.9 * std::pow(std::abs(std::cos(a / 2)), 8.0));
      }
      if (r <= boundary) img.at(0, y, x) = brightness;
    }
  }
  return img;
}

void write_synthetic_corpus(const std::filesystem::path& root,
                            const std::vector<SyntheticClass>& classes, std::size_t size,
                            std::uint64_t seed) {
  if (size < 8) throw InvalidArgument("synthetic images must be at least 8 pixels wide");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto dir = root / classes[c].name;
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(mix_seed(seed, c, 0x5e7));
    for (std::size_t i = 0; i < classes[c].count; ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "_%04zu.pgm", i);
      write_image(render_synthetic(classes[c].shape, size, rng), dir / (classes[c].name + name));
    }
  }
}

}  // namespace xcnn

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace xcnn {

/// Planar C x H x W image with float samples, nominally in [0, 1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

// Binary PGM (P5) / PPM (P6), maxval up to 65535. Throws FormatError.
Image decode_pnm(std::string_view bytes);
/// 8-bit P5 for one channel, P6 for three. Samples are clamped and rounded.
std::string encode_pnm(const Image& image);

bool png_supported();
Image decode_png(std::string_view bytes);
std::string encode_png(const Image& image);

/// Dispatches on file signature (P5/P6 or PNG). Throws FormatError.
Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

/// Grayscale is replicated to three channels; RGB passes through.
Image to_rgb(const Image& image);

/// Half-pixel-centre bilinear resampling with edge clamping. Constant images
/// stay constant.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

/// Bilinear sample at fractional (y, x) with replicated borders.
float sample_bilinear(const Image& image, std::size_t channel, double y, double x);

}  // namespace xcnn

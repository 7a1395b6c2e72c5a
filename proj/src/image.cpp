#include "xcnn/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "xcnn/error.hpp"

#ifdef XCNN_HAVE_PNG
#include <png.h>
#endif

namespace xcnn {

namespace {

class PnmHeaderReader {
 public:
  explicit PnmHeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t next_number() {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 30)) throw FormatError("PNM header value too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw FormatError("malformed PNM header");
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FormatError("malformed PNM header terminator");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 2;
};

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Image decode_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("not a binary PGM/PPM file");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  PnmHeaderReader header(bytes);
  const std::size_t width = header.next_number();
  const std::size_t height = header.next_number();
  const std::size_t maxval = header.next_number();
  if (width == 0 || height == 0) throw FormatError("PNM image has zero extent");
  if (maxval == 0 || maxval > 65535) throw FormatError("PNM maxval out of range");
  const std::size_t offset = header.raster_offset();
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t needed = width * height * channels * sample_bytes;
  if (bytes.size() - offset < needed) throw FormatError("PNM raster truncated");

  Image img(channels, height, width);
  const auto* raster = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  const float maxv = static_cast<float>(maxval);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = (y * width + x) * channels + c;
        const unsigned v = sample_bytes == 1 ? raster[i] : (raster[2 * i] << 8) | raster[2 * i + 1];
        img.at(c, y, x) = std::min(1.0f, static_cast<float>(v) / maxv);
      }
    }
  }
  return img;
}

std::string encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw FormatError("PNM output needs 1 or 3 channels");
  }
  std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.push_back(static_cast<char>(quantize(image.at(c, y, x))));
      }
    }
  }
  return out;
}

bool png_supported() {
#ifdef XCNN_HAVE_PNG
  return true;
#else
  return false;
#endif
}

Image decode_png(std::string_view bytes) {
#ifdef XCNN_HAVE_PNG
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw FormatError(std::string("PNG decode failed: ") + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> raster(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raster.data(), 0, nullptr)) {
    png_image_free(&png);
    throw FormatError(std::string("PNG decode failed: ") + png.message);
  }
  Image img(3, png.height, png.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, y, x) = raster[(y * img.width + x) * 3 + c] / 255.0f;
      }
    }
  }
  return img;
#else
  (void)bytes;
  throw FormatError("PNG support not compiled in");
#endif
}

std::string encode_png(const Image& image) {
#ifdef XCNN_HAVE_PNG
  const Image rgb = to_rgb(image);
  std::vector<unsigned char> raster(rgb.width * rgb.height * 3);
  for (std::size_t y = 0; y < rgb.height; ++y) {
    for (std::size_t x = 0; x < rgb.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) raster[(y * rgb.width + x) * 3 + c] = quantize(rgb.at(c, y, x));
    }
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(rgb.width);
  png.height = static_cast<png_uint_32>(rgb.height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, raster.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + png.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, raster.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
#else
  (void)image;
  throw FormatError("PNG support not compiled in");
#endif
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes.substr(1, 3) == "PNG") {
    return decode_png(bytes);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes);
  throw FormatError("unrecognized image format: " + path.string());
}

void write_image(const Image& image, const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  const std::string bytes = ext == ".png" ? encode_png(image) : encode_pnm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) throw FormatError("expected 1 or 3 channels");
  Image out(3, image.height, image.width);
  const std::size_t plane = image.height * image.width;
  for (std::size_t c = 0; c < 3; ++c) {
    std::copy(image.pixels.begin(), image.pixels.end(), out.pixels.begin() + c * plane);
  }
  return out;
}

float sample_bilinear(const Image& image, std::size_t channel, double y, double x) {
  const double max_y = static_cast<double>(image.height - 1);
  const double max_x = static_cast<double>(image.width - 1);
  y = std::clamp(y, 0.0, max_y);
  x = std::clamp(x, 0.0, max_x);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, image.height - 1);
  const std::size_t x1 = std::min(x0 + 1, image.width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = (1.0 - fx) * image.at(channel, y0, x0) + fx * image.at(channel, y0, x1);
  const double bottom = (1.0 - fx) * image.at(channel, y1, x0) + fx * image.at(channel, y1, x1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw FormatError("resize target must be non-empty");
  if (image.height == height && image.width == width) return image;
  Image out(image.channels, height, width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
      for (std::size_t x = 0; x < width; ++x) {
        const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
        out.at(c, y, x) = sample_bilinear(image, c, src_y, src_x);
      }
    }
  }
  return out;
}

}  // namespace xcnn

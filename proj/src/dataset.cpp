#include "xcnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "xcnn/error.hpp"

namespace xcnn {

namespace {

bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".pgm" || ext == ".ppm" || ext == ".png";
}

std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir, bool dirs) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (dirs ? entry.is_directory() : entry.is_regular_file()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

}  // namespace

std::vector<std::size_t> LabeledDataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::string IngestionManifest::to_text() const {
  std::ostringstream out;
  out << "root " << root << '\n';
  std::size_t total = 0;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    out << "class " << c << ' ' << class_names[c] << ' ' << class_counts[c] << '\n';
    total += class_counts[c];
  }
  out << "total " << total << '\n';
  out << "skipped " << skipped.size() << '\n';
  for (const auto& s : skipped) out << "skip " << s.path << '\t' << s.reason << '\n';
  return out.str();
}

LoadResult load_dataset(const std::filesystem::path& root, const LoadOptions& options) {
  if (!std::filesystem::is_directory(root)) {
    throw IngestionError("dataset root is not a directory: " + root.string());
  }
  LoadResult result;
  result.manifest.root = root.string();
  const auto class_dirs = sorted_entries(root, true);
  if (class_dirs.empty()) throw IngestionError("no class directories under " + root.string());

  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    const std::string name = class_dirs[label].filename().string();
    std::size_t count = 0;
    std::size_t candidates = 0;
    for (const auto& file : sorted_entries(class_dirs[label], false)) {
      auto skip = [&](const std::string& reason) {
        result.manifest.skipped.push_back({file.string(), reason});
        if (options.warn) options.warn("skipping " + file.string() + ": " + reason);
      };
      if (!has_image_extension(file)) {
        skip("unsupported extension");
        continue;
      }
      ++candidates;
      try {
        Image img = to_rgb(read_image(file));
        img = resize_bilinear(img, options.size, options.size);
        result.dataset.samples.push_back({std::move(img), label, name + "/" + file.filename().string()});
        ++count;
      } catch (const Error& e) {
        skip(e.what());
      }
    }
    if (candidates == 0) throw IngestionError("class directory '" + name + "' has no image files");
    if (count == 0) throw IngestionError("class directory '" + name + "' has no decodable images");
    result.dataset.class_names.push_back(name);
    result.dataset.class_counts.push_back(count);
  }
  result.manifest.class_names = result.dataset.class_names;
  result.manifest.class_counts = result.dataset.class_counts;
  return result;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "unknown";
}

std::vector<std::size_t> SplitAssignment::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == split) out.push_back(i);
  }
  return out;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  // The small slack keeps products like 120 * 0.15 from landing just below an integer.
  auto part = [n](double ratio) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
  };
  const std::size_t val = part(r.val);
  const std::size_t test = part(r.test);
  return {n - val - test, val, test};
}

SplitAssignment stratified_split(const std::vector<std::size_t>& labels,
                                 const std::vector<std::string>& class_names,
                                 const SplitRatios& ratios, std::uint64_t seed) {
  for (double r : {ratios.train, ratios.val, ratios.test}) {
    if (!(r >= 0.0 && r <= 1.0)) throw SplitError("split ratios must lie in [0, 1]");
  }
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-6) {
    throw SplitError("split ratios must sum to 1");
  }
  const std::size_t k = class_names.size();
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw SplitError("label " + std::to_string(labels[i]) + " out of range");
    members[labels[i]].push_back(i);
  }
  SplitAssignment out;
  out.tags.assign(labels.size(), Split::kTrain);
  out.ratios = ratios;
  out.seed = seed;
  for (std::size_t c = 0; c < k; ++c) {
    auto& idx = members[c];
    if (idx.size() < 3) {
      throw SplitError("class '" + class_names[c] + "' has " + std::to_string(idx.size()) +
                       " samples; at least 3 are required");
    }
    // Fisher-Yates with an explicit draw so the order is library-independent.
    std::mt19937_64 rng(seed ^ (0x5bd1e995ULL * (c + 1)));
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
      std::swap(idx[i], idx[j]);
    }
    const auto sizes = split_sizes(idx.size(), ratios);
    for (std::size_t i = 0; i < sizes[1]; ++i) out.tags[idx[i]] = Split::kVal;
    for (std::size_t i = sizes[1]; i < sizes[1] + sizes[2]; ++i) out.tags[idx[i]] = Split::kTest;
  }
  return out;
}

SplitAssignment stratified_split(const LabeledDataset& dataset, const SplitRatios& ratios,
                                 std::uint64_t seed) {
  return stratified_split(dataset.labels(), dataset.class_names, ratios, seed);
}

namespace {

template <typename T>
void normalize_impl(const Image& image, std::span<T> out) {
  if (image.channels != 3) throw ShapeError("normalize expects a 3-channel image");
  const std::size_t plane = image.height * image.width;
  if (out.size() != 3 * plane) throw ShapeError("normalize output size mismatch");
  for (std::size_t c = 0; c < 3; ++c) {
    const double m = kImageNetMean[c], s = kImageNetStd[c];
    for (std::size_t i = 0; i < plane; ++i) {
      out[c * plane + i] = static_cast<T>((image.pixels[c * plane + i] - m) / s);
    }
  }
}

}  // namespace

void normalize_into(const Image& image, std::span<float> out) { normalize_impl(image, out); }
void normalize_into(const Image& image, std::span<double> out) { normalize_impl(image, out); }

template <typename T>
Tensor<T> normalize(const Image& image) {
  std::vector<T> data(image.pixels.size());
  normalize_impl(image, std::span<T>(data));
  return Tensor<T>({3, image.height, image.width}, std::move(data));
}

template <typename T>
Image denormalize(const Tensor<T>& tensor) {
  if (tensor.dim() != 3 || tensor.extent(0) != 3) throw ShapeError("denormalize expects 3 x H x W");
  Image img(3, tensor.extent(1), tensor.extent(2));
  const std::size_t plane = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      img.pixels[c * plane + i] =
          static_cast<float>(tensor.data()[c * plane + i] * kImageNetStd[c] + kImageNetMean[c]);
    }
  }
  return img;
}

template Tensor<float> normalize<float>(const Image&);
template Tensor<double> normalize<double>(const Image&);
template Image denormalize<float>(const Tensor<float>&);
template Image denormalize<double>(const Tensor<double>&);

std::vector<double> class_weights(const std::vector<std::size_t>& counts,
                                  std::optional<std::size_t> corpus_size) {
  if (counts.empty()) throw InvalidArgument("class_weights needs at least one class");
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw InvalidArgument("class " + std::to_string(c) + " has zero samples; weight undefined");
    }
    total += static_cast<double>(counts[c]);
  }
  if (corpus_size) {
    if (*corpus_size == 0) throw InvalidArgument("corpus size must be positive");
    total = static_cast<double>(*corpus_size);
  }
  const double k = static_cast<double>(counts.size());
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) w[c] = total / (k * static_cast<double>(counts[c]));
  return w;
}

}  // namespace xcnn

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xcnn/image.hpp"
#include "xcnn/tensor.hpp"

namespace xcnn {

struct Sample {
  Image image;  // C x H x W in [0, 1], before normalization
  std::size_t label = 0;
  std::string source_id;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;  // index -> name, lexicographic
  std::vector<std::size_t> class_counts;

  std::size_t num_classes() const { return class_names.size(); }
  std::vector<std::size_t> labels() const;
};

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct IngestionManifest {
  std::string root;
  std::vector<SkippedFile> skipped;
  std::vector<std::string> class_names;
  std::vector<std::size_t> class_counts;

  std::string to_text() const;
};

struct LoadOptions {
  std::size_t size = 256;
  // Receives one message per skipped file; may be empty.
  std::function<void(const std::string&)> warn;
};

struct LoadResult {
  LabeledDataset dataset;
  IngestionManifest manifest;
};

/// Reads `<root>/<ClassName>/*.{pgm,ppm,png}`. Class indices follow the
/// lexicographic order of directory names. Images are converted to RGB,
/// bilinearly resized to size x size, and kept in [0, 1]. Undecodable
/// files are skipped and listed in the manifest; a class directory with no
/// usable image is an IngestionError.
LoadResult load_dataset(const std::filesystem::path& root, const LoadOptions& options = {});

enum class Split : std::uint8_t { kTrain, kVal, kTest };
std::string_view split_name(Split split);

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct SplitAssignment {
  std::vector<Split> tags;  // one per sample
  SplitRatios ratios;
  std::uint64_t seed = 0;

  /// Sample indices carrying `split`, ascending.
  std::vector<std::size_t> indices(Split split) const;
};

/// Per class: shuffle by seed, then floor(n * val) to validation,
/// floor(n * test) to test, and the remainder to train. Classes with fewer
/// than 3 samples are a SplitError naming the class.
SplitAssignment stratified_split(const std::vector<std::size_t>& labels,
                                 const std::vector<std::string>& class_names,
                                 const SplitRatios& ratios, std::uint64_t seed);
SplitAssignment stratified_split(const LabeledDataset& dataset, const SplitRatios& ratios,
                                 std::uint64_t seed);

/// Sizes stratified_split assigns to (train, val, test) for a class of n.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

inline constexpr std::array<double, 3> kImageNetMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd = {0.229, 0.224, 0.225};

/// Per-channel (x - mean) / std with the ImageNet constants; 3 x H x W.
template <typename T>
Tensor<T> normalize(const Image& image);

/// Inverse of normalize.
template <typename T>
Image denormalize(const Tensor<T>& tensor);

/// Writes normalized values of `image` into `out` (3*H*W values).
void normalize_into(const Image& image, std::span<float> out);
void normalize_into(const Image& image, std::span<double> out);

/// Inverse-frequency weights N / (K * n_c). N is the corpus size, which
/// defaults to the sum of the counts; pass it explicitly when the reported
/// total differs from that sum. Throws InvalidArgument on a zero count.
std::vector<double> class_weights(const std::vector<std::size_t>& counts,
                                  std::optional<std::size_t> total = std::nullopt);

}  // namespace xcnn

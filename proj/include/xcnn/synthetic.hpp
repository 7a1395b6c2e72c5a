#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "xcnn/image.hpp"

namespace xcnn {

// Toy stand-ins for scan findings: no lesion, a smooth round lesion, and a
// spiculated lesion, each over a noisy background with faint vessel lines.
enum class SyntheticShape { kNone, kDisk, kStar };

struct SyntheticClass {
  std::string name;
  SyntheticShape shape = SyntheticShape::kNone;
  std::size_t count = 0;
};

/// Benign (disk), Malignant (star), Normal (none) with counts 1:4:4 scaled
/// by `unit`, i.e. the imbalance pattern of the screening corpus.
std::vector<SyntheticClass> default_synthetic_classes(std::size_t unit = 20);

Image render_synthetic(SyntheticShape shape, std::size_t size, std::mt19937_64& rng);

/// Writes `<root>/<name>/<name>_<i>.pgm` grayscale images. Deterministic in seed.
void write_synthetic_corpus(const std::filesystem::path& root,
                            const std::vector<SyntheticClass>& classes, std::size_t size,
                            std::uint64_t seed);

}  // namespace xcnn

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "xcnn/model.hpp"

namespace xcnn {

// Layout (all integers little-endian):
//   8 bytes   magic "XCNNCKPT"
//   u32       format version
//   u32 + N   architecture descriptor text
//   u32 + N   metadata text ("key=value" lines)
//   u64 + 4n  parameter values, float32, storage order
//   u64 + 4n  buffer values (batchnorm running stats), float32
inline constexpr std::string_view kCheckpointMagic = "XCNNCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::size_t epoch = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> class_names;  // optional; no commas
};

struct LoadedCheckpoint {
  Model<float> model;
  CheckpointMetadata metadata;
  std::size_t parameter_values = 0;
  std::size_t buffer_values = 0;
};

std::string encode_checkpoint(const Model<float>& model, const CheckpointMetadata& metadata);

/// Throws FormatError for a bad magic, version, or descriptor, and
/// IntegrityError for truncation or a blob that does not match the descriptor.
LoadedCheckpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Model<float>& model, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xcnn

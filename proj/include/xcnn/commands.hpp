#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "xcnn/error.hpp"

namespace xcnn {

class MissingArtifactsError : public Error {
 public:
  using Error::Error;
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kConfig = 2;
inline constexpr int kTraining = 3;
inline constexpr int kCheckpoint = 4;
inline constexpr int kImage = 5;
inline constexpr int kMissingArtifacts = 6;
}  // namespace exit_code

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> checkpoint;  // default <out>/model.ckpt
  std::optional<std::filesystem::path> image;
  std::optional<std::string> target_class;  // index, class name, or "predicted"
  std::optional<std::size_t> grid;
  std::optional<std::size_t> budget;
  std::vector<std::pair<std::string, std::string>> overrides;  // extra config keys
};

/// Writes curves.csv, model.ckpt, ingestion.txt, and manifest.json into `out`.
int cmd_train(const CommandOptions& options, std::ostream& log, std::ostream& err);
/// Scores the test split; writes metrics.csv, confusion.csv, roc_<class>.csv.
int cmd_evaluate(const CommandOptions& options, std::ostream& log, std::ostream& err);
/// Writes heatmaps/<image>_<class>.ppm and the matching .txt sidecar.
int cmd_explain(const CommandOptions& options, std::ostream& log, std::ostream& err);
/// Writes report.md summarizing the run directory `out`.
int cmd_report(const CommandOptions& options, std::ostream& log, std::ostream& err);

struct SynthOptions {
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::size_t unit = 20;  // minority-class count; the others get 4x
  std::size_t size = 32;
};
/// Generates the three-class synthetic corpus under `out`.
int cmd_synth(const SynthOptions& options, std::ostream& log, std::ostream& err);

/// Markdown summary of a run directory; throws MissingArtifactsError naming
/// every missing artifact.
std::string render_report(const std::filesystem::path& run_dir);

}  // namespace xcnn

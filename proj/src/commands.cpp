#include "xcnn/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"
#include "xcnn/checkpoint.hpp"
#include "xcnn/config.hpp"
#include "xcnn/evaluate.hpp"
#include "xcnn/heatmap.hpp"
#include "xcnn/shap.hpp"
#include "xcnn/synthetic.hpp"

#ifndef XCNN_VERSION
#define XCNN_VERSION "0.0.0"
#endif

namespace xcnn {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

RunConfig resolve_config(const CommandOptions& o, bool required) {
  RunConfig cfg;
  if (o.config) {
    cfg = load_run_config(*o.config);
  } else if (required) {
    throw ConfigError("--config is required");
  }
  for (const auto& [k, v] : o.overrides) cfg.set(k, v);
  if (o.seed) cfg.seed = *o.seed;
  if (o.grid) cfg.shap.grid = *o.grid;
  if (o.budget) cfg.shap.budget = *o.budget;
  cfg.train.seed = cfg.seed;
  cfg.augmentation.seed = cfg.seed;
  return cfg;
}

struct FeatureTable {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
};

// `label,f0,f1,...` with a header row; labels are class names.
FeatureTable read_feature_csv(const fs::path& path, std::size_t declared_dim) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) {
    throw ConfigError("feature CSV must start with a `label,...` header");
  }
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    std::getline(fields, cell, ',');
    names.push_back(cell);
    std::vector<double> row;
    while (std::getline(fields, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError("feature CSV line " + std::to_string(line_no) + ": bad value '" + cell + "'");
      }
    }
    if (row.empty() || (!rows.empty() && row.size() != rows.front().size())) {
      throw ConfigError("feature CSV line " + std::to_string(line_no) + ": inconsistent width");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("feature CSV has no rows");
  if (declared_dim != 0 && rows.front().size() != declared_dim) {
    throw ConfigError("feature CSV width " + std::to_string(rows.front().size()) +
                      " differs from feature_dim " + std::to_string(declared_dim));
  }
  FeatureTable t;
  const std::set<std::string> distinct(names.begin(), names.end());
  t.class_names.assign(distinct.begin(), distinct.end());
  for (const auto& n : names) {
    t.labels.push_back(static_cast<std::size_t>(
        std::lower_bound(t.class_names.begin(), t.class_names.end(), n) - t.class_names.begin()));
  }
  t.rows = std::move(rows);
  return t;
}

// Data, split, and batch source for one run. Not movable: the image source
// refers to `dataset`.
struct Workspace {
  RunConfig cfg;
  LabeledDataset dataset;
  IngestionManifest ingestion;
  bool images = true;
  std::unique_ptr<BatchSource<float>> source;
  std::vector<std::string> class_names;
  std::vector<std::size_t> labels;
  SplitAssignment split;
  Shape input;

  Workspace() = default;
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;
};

std::unique_ptr<Workspace> prepare(const RunConfig& cfg, std::ostream& err) {
  auto ws = std::make_unique<Workspace>();
  ws->cfg = cfg;
  if (cfg.architecture == Architecture::kCustomCnn) {
    LoadOptions lo;
    lo.size = cfg.image_size;
    lo.warn = [&err](const std::string& m) { err << "warning: " << m << "\n"; };
    LoadResult loaded = load_dataset(cfg.data_root, lo);
    ws->dataset = std::move(loaded.dataset);
    ws->ingestion = std::move(loaded.manifest);
    ws->class_names = ws->dataset.class_names;
    ws->labels = ws->dataset.labels();
    std::optional<AugmentationPolicy> policy;
    if (cfg.augment) policy = cfg.augmentation;
    ws->source = std::make_unique<ImageBatchSource<float>>(ws->dataset, policy);
    ws->input = {3, cfg.image_size, cfg.image_size};
  } else {
    ws->images = false;
    FeatureTable t = read_feature_csv(cfg.features, cfg.feature_dim);
    ws->class_names = t.class_names;
    ws->labels = t.labels;
    ws->input = {t.rows.front().size()};
    ws->source = std::make_unique<FeatureBatchSource<float>>(std::move(t.rows), t.labels,
                                                             ws->class_names.size());
  }
  ws->split = stratified_split(ws->labels, ws->class_names, cfg.split, cfg.seed);
  return ws;
}

std::vector<double> training_weights(const Workspace& ws) {
  const std::size_t k = ws.class_names.size();
  if (ws.cfg.class_weights == ClassWeightMode::kUniform) return std::vector<double>(k, 1.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i : ws.split.indices(Split::kTrain)) ++counts[ws.labels[i]];
  return class_weights(counts);
}

json config_json(const RunConfig& cfg) {
  json out = json::object();
  std::istringstream in(cfg.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

void update_manifest(const fs::path& dir, const std::string& stage, json entry) {
  const fs::path path = dir / "manifest.json";
  json manifest = json::object();
  if (fs::exists(path)) {
    try {
      manifest = json::parse(read_file(path));
    } catch (const json::exception&) {
      manifest = json::object();
    }
  }
  manifest["software"] = {{"name", "xcnn"}, {"version", XCNN_VERSION}};
  manifest["stages"][stage] = std::move(entry);
  write_file(path, manifest.dump(2) + "\n");
}

bool is_config_failure(const std::exception& e) {
  return dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const IngestionError*>(&e) ||
         dynamic_cast<const SplitError*>(&e) || dynamic_cast<const InvalidArgument*>(&e) ||
         dynamic_cast<const fs::filesystem_error*>(&e);
}

fs::path checkpoint_path(const CommandOptions& o) {
  return o.checkpoint ? *o.checkpoint : o.out / "model.ckpt";
}

std::string fmt6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(split_csv_line(line));
  }
  return rows;
}

std::string md_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += " " + c + " |";
  return out + "\n";
}

std::string md_rule(std::size_t n) {
  std::string out = "|";
  for (std::size_t i = 0; i < n; ++i) out += " --- |";
  return out + "\n";
}

}  // namespace

int cmd_train(const CommandOptions& options, std::ostream& log, std::ostream& err) {
  Stopwatch clock;
  RunConfig cfg;
  std::unique_ptr<Workspace> ws;
  try {
    cfg = resolve_config(options, true);
    cfg.validate();
    ws = prepare(cfg, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return is_config_failure(e) || dynamic_cast<const FormatError*>(&e) ? exit_code::kConfig
                                                                        : exit_code::kFailure;
  }

  const std::size_t k = ws->class_names.size();
  const std::uint64_t init_seed = mix_seed(cfg.seed, 0x1417);
  Model<float> model = cfg.architecture == Architecture::kCustomCnn
                           ? build_custom_cnn<float>(ws->input, k, cfg.fc_hidden, cfg.dropout, init_seed)
                           : attach_head<float>(ws->input[0], cfg.head_hidden, k, cfg.dropout, init_seed);
  const auto weights = training_weights(*ws);
  const auto train_idx = ws->split.indices(Split::kTrain);
  const auto val_idx = ws->split.indices(Split::kVal);

  TrainHooks<float> hooks;
  hooks.on_epoch = [&log](const EpochRecord& r) {
    log << "epoch " << r.epoch << " train_loss " << fmt6(r.train_loss) << " train_acc "
        << fmt6(r.train_acc) << " val_loss " << fmt6(r.val_loss) << " val_acc " << fmt6(r.val_acc)
        << "\n";
  };
  TrainRun<float> run;
  try {
    run = train(model, *ws->source, train_idx, val_idx, weights, cfg.train, hooks);
  } catch (const TrainingAborted& e) {
    err << "error: training aborted: " << e.what() << " (after " << e.records().size()
        << " completed epochs)\n";
    return exit_code::kTraining;
  } catch (const NumericError& e) {
    err << "error: training aborted: " << e.what() << "\n";
    return exit_code::kTraining;
  } catch (const std::exception& e) {
    err << "error: training failed: " << e.what() << "\n";
    return exit_code::kTraining;
  }

  try {
    fs::create_directories(options.out);
    std::vector<std::string> outputs = {"curves.csv", "model.ckpt"};
    write_file(options.out / "curves.csv", curves_csv(run.records));
    CheckpointMetadata meta;
    meta.epoch = run.best_epoch;
    meta.val_loss = run.best_val_loss;
    meta.class_names = ws->class_names;
    save_checkpoint(model, meta, options.out / "model.ckpt");
    if (ws->images) {
      write_file(options.out / "ingestion.txt", ws->ingestion.to_text());
      outputs.emplace_back("ingestion.txt");
    }
    json entry;
    entry["config"] = config_json(cfg);
    entry["seeds"] = {{"seed", cfg.seed}, {"split", cfg.seed}, {"init", init_seed}};
    entry["outputs"] = outputs;
    entry["epochs_run"] = run.records.size();
    entry["best_epoch"] = run.best_epoch;
    entry["stopped_early"] = run.stopped_early;
    entry["split_sizes"] = {{"train", train_idx.size()},
                            {"val", val_idx.size()},
                            {"test", ws->split.indices(Split::kTest).size()}};
    entry["seconds"] = clock.seconds();
    update_manifest(options.out, "train", std::move(entry));
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kFailure;
  }
  log << "best epoch " << run.best_epoch << " val_loss " << fmt6(run.best_val_loss) << "\n";
  log << "wrote " << (options.out / "model.ckpt").string() << "\n";
  return exit_code::kOk;
}

int cmd_evaluate(const CommandOptions& options, std::ostream& log, std::ostream& err) {
  Stopwatch clock;
  RunConfig cfg;
  std::unique_ptr<Workspace> ws;
  try {
    cfg = resolve_config(options, true);
    cfg.validate();
    ws = prepare(cfg, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return is_config_failure(e) || dynamic_cast<const FormatError*>(&e) ? exit_code::kConfig
                                                                        : exit_code::kFailure;
  }

  const fs::path ckpt = checkpoint_path(options);
  std::optional<LoadedCheckpoint> loaded;
  try {
    loaded.emplace(load_checkpoint(ckpt));
  } catch (const std::exception& e) {
    err << "error: checkpoint " << ckpt.string() << ": " << e.what() << "\n";
    return exit_code::kCheckpoint;
  }
  Model<float>& model = loaded->model;
  if (model.spec().input != ws->input || model.spec().classes != ws->class_names.size()) {
    err << "error: checkpoint architecture (input " << shape_str(model.spec().input) << ", "
        << model.spec().classes << " classes) does not match the data (input "
        << shape_str(ws->input) << ", " << ws->class_names.size() << " classes)\n";
    return exit_code::kCheckpoint;
  }

  try {
    const auto test_idx = ws->split.indices(Split::kTest);
    const MetricsReport report = evaluate(model, *ws->source, test_idx, ws->class_names);
    fs::create_directories(options.out);
    std::vector<std::string> outputs;
    for (const auto& p : write_metrics_artifacts(report, options.out)) {
      outputs.push_back(p.filename().string());
    }
    json entry;
    entry["config"] = config_json(cfg);
    entry["seeds"] = {{"seed", cfg.seed}, {"split", cfg.seed}};
    entry["checkpoint"] = ckpt.string();
    entry["split"] = "test";
    entry["samples"] = test_idx.size();
    entry["outputs"] = outputs;
    entry["seconds"] = clock.seconds();
    update_manifest(options.out, "evaluate", std::move(entry));
    log << "test samples " << test_idx.size() << " accuracy " << fmt6(report.prf.accuracy)
        << " macro_f1 " << fmt6(report.prf.macro_f1) << "\n";
  } catch (const std::exception& e) {
    err << "error: evaluation failed: " << e.what() << "\n";
    return exit_code::kFailure;
  }
  return exit_code::kOk;
}

int cmd_explain(const CommandOptions& options, std::ostream& log, std::ostream& err) {
  Stopwatch clock;
  RunConfig cfg;
  try {
    cfg = resolve_config(options, false);
    if (options.config) cfg.validate();
    if (!options.image) throw ConfigError("--image is required");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kConfig;
  }

  const fs::path ckpt = checkpoint_path(options);
  std::optional<LoadedCheckpoint> loaded;
  try {
    loaded.emplace(load_checkpoint(ckpt));
  } catch (const std::exception& e) {
    err << "error: checkpoint " << ckpt.string() << ": " << e.what() << "\n";
    return exit_code::kCheckpoint;
  }
  Model<float>& model = loaded->model;
  const Shape& input = model.spec().input;
  if (input.size() != 3 || input[0] != 3) {
    err << "error: checkpoint " << ckpt.string() << " is not an image model (input "
        << shape_str(input) << ")\n";
    return exit_code::kCheckpoint;
  }
  const std::size_t size_h = input[1], size_w = input[2];
  const std::size_t k = model.spec().classes;

  Image image;
  try {
    image = resize_bilinear(to_rgb(read_image(*options.image)), size_h, size_w);
  } catch (const std::exception& e) {
    err << "error: cannot decode image " << options.image->string() << ": " << e.what() << "\n";
    return exit_code::kImage;
  }

  std::vector<std::string> names = loaded->metadata.class_names;
  Image background(3, size_h, size_w, 0.0f);
  std::string background_name = "zero";
  try {
    if (options.config && cfg.shap.background == BackgroundMode::kMean &&
        cfg.architecture == Architecture::kCustomCnn) {
      cfg.image_size = size_h;
      const auto ws = prepare(cfg, err);
      std::vector<Image> train_images;
      for (std::size_t i : ws->split.indices(Split::kTrain)) train_images.push_back(ws->dataset.samples[i].image);
      background = mean_background(train_images);
      background_name = "mean";
      if (names.empty()) names = ws->class_names;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kConfig;
  }
  if (names.size() != k) {
    names.clear();
    for (std::size_t c = 0; c < k; ++c) names.push_back("class" + std::to_string(c));
  }

  std::size_t target = 0;
  bool predicted = false;
  const std::string requested = options.target_class.value_or("predicted");
  try {
    if (requested == "predicted") {
      const auto probs = class_probabilities(model, image);
      target = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      predicted = true;
    } else if (auto it = std::find(names.begin(), names.end(), requested); it != names.end()) {
      target = static_cast<std::size_t>(it - names.begin());
    } else {
      std::size_t used = 0;
      const unsigned long v = std::stoul(requested, &used);
      if (used != requested.size() || v >= k) throw ConfigError("");
      target = v;
    }
  } catch (const std::exception&) {
    err << "error: unknown target class '" << requested << "'\n";
    return exit_code::kConfig;
  }

  try {
    const Segmentation seg = grid_segment(size_h, size_w, cfg.shap.grid);
    ShapOptions so;
    so.budget = cfg.shap.budget;
    so.seed = cfg.seed;
    AttributionMap map = explain_image(model, image, seg, background, target, so);
    map.target_name = names[target];
    map.target_predicted = predicted;
    map.grid = cfg.shap.grid;
    map.background = background_name;

    const fs::path dir = options.out / "heatmaps";
    fs::create_directories(dir);
    const std::string stem = options.image->stem().string() + "_" + names[target];
    write_image(render_heatmap(map, image), dir / (stem + ".ppm"));
    write_file(dir / (stem + ".txt"), sidecar_text(map));

    json entry;
    entry["config"] = config_json(cfg);
    entry["seeds"] = {{"seed", cfg.seed}};
    entry["checkpoint"] = ckpt.string();
    entry["image"] = options.image->string();
    entry["target_class"] = target;
    entry["mode"] = shap_mode_name(map.mode);
    entry["outputs"] = {"heatmaps/" + stem + ".ppm", "heatmaps/" + stem + ".txt"};
    entry["seconds"] = clock.seconds();
    update_manifest(options.out, "explain", std::move(entry));
    log << "target " << names[target] << " (" << target << ")" << (predicted ? " predicted" : "")
        << " base " << fmt6(map.base_value) << " full " << fmt6(map.full_value) << " sum_phi "
        << fmt6(map.phi_sum()) << "\n";
    log << "wrote " << (dir / (stem + ".ppm")).string() << "\n";
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kConfig;
  } catch (const BudgetError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kConfig;
  } catch (const std::exception& e) {
    err << "error: explanation failed: " << e.what() << "\n";
    return exit_code::kFailure;
  }
  return exit_code::kOk;
}

std::string render_report(const fs::path& run_dir) {
  std::vector<std::string> missing;
  for (const char* name : {"curves.csv", "metrics.csv", "confusion.csv"}) {
    if (!fs::is_regular_file(run_dir / name)) missing.emplace_back(name);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw MissingArtifactsError("missing artifacts in " + run_dir.string() + ": " + list);
  }
  const auto curves = read_csv(run_dir / "curves.csv");
  const auto metrics = read_csv(run_dir / "metrics.csv");
  const auto confusion = read_csv(run_dir / "confusion.csv");

  std::string out = "# Run report\n\n## Training\n\n";
  std::size_t best_row = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 1; r < curves.size(); ++r) {
    if (curves[r].size() < 5) throw FormatError("curves.csv row " + std::to_string(r) + " is short");
    const double v = std::stod(curves[r][3]);
    if (v < best) {
      best = v;
      best_row = r;
    }
  }
  out += "Epochs run: " + std::to_string(curves.empty() ? 0 : curves.size() - 1) + "\n\n";
  if (best_row) {
    out += "Best epoch: " + curves[best_row][0] + " (validation loss " + curves[best_row][3] +
           ", validation accuracy " + curves[best_row][4] + ")\n\n";
  }
  if (!curves.empty()) {
    out += md_row(curves.front()) + md_rule(curves.front().size());
    for (std::size_t r = 1; r < curves.size(); ++r) out += md_row(curves[r]);
  }

  out += "\n## Test metrics\n\n";
  if (!metrics.empty()) {
    out += md_row(metrics.front()) + md_rule(metrics.front().size());
    for (std::size_t r = 1; r < metrics.size(); ++r) out += md_row(metrics[r]);
  }
  out += "\n## Confusion matrix\n\nRows are true classes, columns predicted classes.\n\n";
  if (!confusion.empty()) {
    out += md_row(confusion.front()) + md_rule(confusion.front().size());
    for (std::size_t r = 1; r < confusion.size(); ++r) out += md_row(confusion[r]);
  }

  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), run_dir).generic_string();
    if (rel == "report.md") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  out += "\n## Files\n\n";
  for (const auto& f : files) out += "- `" + f + "`\n";
  return out;
}

int cmd_report(const CommandOptions& options, std::ostream& log, std::ostream& err) {
  try {
    const std::string text = render_report(options.out);
    write_file(options.out / "report.md", text);
    log << "wrote " << (options.out / "report.md").string() << "\n";
  } catch (const MissingArtifactsError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kMissingArtifacts;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kFailure;
  }
  return exit_code::kOk;
}

int cmd_synth(const SynthOptions& options, std::ostream& log, std::ostream& err) {
  try {
    if (options.out.empty()) throw ConfigError("--out is required");
    if (options.unit == 0 || options.size < 8) throw ConfigError("unit must be >= 1 and size >= 8");
    const auto classes = default_synthetic_classes(options.unit);
    write_synthetic_corpus(options.out, classes, options.size, options.seed);
    for (const auto& c : classes) log << c.name << " " << c.count << "\n";
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kFailure;
  }
  return exit_code::kOk;
}

}  // namespace xcnn

#include <iostream>

#include "CLI11.hpp"
#include "xcnn/commands.hpp"

namespace {

void add_common(CLI::App* cmd, xcnn::CommandOptions& o, std::string& out) {
  cmd->add_option("--config", o.config, "Run configuration file (key = value lines)");
  cmd->add_option("--out", out, "Run directory")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Seed; overrides the config value");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xcnn: CNN training, evaluation, and SHAP explanations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", XCNN_VERSION_STRING);

  xcnn::CommandOptions o;
  std::string out = ".";
  std::vector<std::string> sets;

  auto* train = app.add_subcommand("train", "Train a model and write curves.csv and model.ckpt");
  add_common(train, o, out);
  train->add_option("--set", sets, "Extra config entries as key=value");

  auto* evaluate = app.add_subcommand("evaluate", "Score the test split of a trained model");
  add_common(evaluate, o, out);
  evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint (default <out>/model.ckpt)");
  evaluate->add_option("--set", sets, "Extra config entries as key=value");

  auto* explain = app.add_subcommand("explain", "Write a SHAP heatmap for one image");
  add_common(explain, o, out);
  explain->add_option("--checkpoint", o.checkpoint, "Checkpoint (default <out>/model.ckpt)");
  explain->add_option("--image", o.image, "Image to explain (PGM, PPM, or PNG)");
  explain->add_option("--target-class", o.target_class,
                      "Class index, class name, or 'predicted' (default)");
  explain->add_option("--grid", o.grid, "Segments per side");
  explain->add_option("--budget", o.budget, "Model evaluations for KernelSHAP");
  explain->add_option("--set", sets, "Extra config entries as key=value");

  auto* report = app.add_subcommand("report", "Summarize a run directory as report.md");
  report->add_option("--out", out, "Run directory")->capture_default_str();

  xcnn::SynthOptions so;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic three-class corpus");
  synth->add_option("--out", synth_out, "Corpus root")->required();
  synth->add_option("--seed", so.seed, "Seed")->capture_default_str();
  synth->add_option("--unit", so.unit, "Minority-class count (others get 4x)")->capture_default_str();
  synth->add_option("--size", so.size, "Image side in pixels")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : xcnn::exit_code::kConfig;
  }

  o.out = out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << s << "'\n";
      return xcnn::exit_code::kConfig;
    }
    o.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }

  if (*train) return xcnn::cmd_train(o, std::cout, std::cerr);
  if (*evaluate) return xcnn::cmd_evaluate(o, std::cout, std::cerr);
  if (*explain) return xcnn::cmd_explain(o, std::cout, std::cerr);
  if (*report) return xcnn::cmd_report(o, std::cout, std::cerr);
  so.out = synth_out;
  return xcnn::cmd_synth(so, std::cout, std::cerr);
}

#include "xcnn/commands.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "xcnn/config.hpp"
#include "xcnn/shap.hpp"

namespace xcnn {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

TEST(ConfigTest, ParseOverridesAndErrors) {
  const RunConfig cfg = parse_run_config(
      "# comment\ndata_root = corpus\nimage_size = 32  # trailing\nlearning_rate=0.001\nshap_background = zero\n",
      "/base");
  EXPECT_EQ(cfg.data_root, fs::path("/base/corpus"));
  EXPECT_EQ(cfg.image_size, 32u);
  EXPECT_EQ(cfg.train.learning_rate, 0.001);
  EXPECT_EQ(cfg.shap.background, BackgroundMode::kZero);
  EXPECT_EQ(cfg.train.patience, 10u);
  EXPECT_THROW(parse_run_config("bogus = 1\n", ""), ConfigError);
  EXPECT_THROW(parse_run_config("image_size = big\n", ""), ConfigError);
  EXPECT_THROW(parse_run_config("no equals sign\n", ""), ConfigError);
  const RunConfig back = parse_run_config(cfg.to_text(), "");
  EXPECT_EQ(back.to_text(), cfg.to_text());
}

// One small trained run shared by the command tests.
class CommandsTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cmd");
    std::ostringstream log, err;
    ASSERT_EQ(cmd_synth({root() / "corpus", 3, 10, 16}, log, err), 0) << err.str();
    spit(root() / "run.cfg",
         "data_root = corpus\nimage_size = 16\nfc_hidden = 8\nmax_epochs = 3\npatience = 2\nseed = 4\n"
         "shap_grid = 2\nshap_budget = 64\n");
    ASSERT_EQ(cmd_train(opts(root() / "run"), log, err), 0) << err.str();
    ASSERT_EQ(cmd_evaluate(opts(root() / "run"), log, err), 0) << err.str();
  }
  static void TearDownTestSuite() { delete dir_; }

  static fs::path root() { return dir_->path(); }
  static CommandOptions opts(const fs::path& out) {
    CommandOptions o;
    o.config = root() / "run.cfg";
    o.out = out;
    return o;
  }
  static fs::path any_image() { return root() / "corpus" / "Benign" / "Benign_0000.pgm"; }

  std::ostringstream log_, err_;

 private:
  static TempDir* dir_;
};

TempDir* CommandsTest::dir_ = nullptr;

TEST_F(CommandsTest, TrainWritesArtifactsDeterministically) {
  const fs::path run = root() / "run";
  for (const char* f : {"curves.csv", "model.ckpt", "manifest.json", "ingestion.txt"}) {
    EXPECT_TRUE(fs::exists(run / f)) << f;
  }
  std::istringstream curves(slurp(run / "curves.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(curves, line)) ++rows;
  EXPECT_GE(rows, 2u);
  EXPECT_LE(rows, 4u);

  ASSERT_EQ(cmd_train(opts(root() / "again"), log_, err_), 0) << err_.str();
  EXPECT_EQ(slurp(run / "curves.csv"), slurp(root() / "again" / "curves.csv"));
  EXPECT_EQ(slurp(run / "model.ckpt"), slurp(root() / "again" / "model.ckpt"));
}

TEST_F(CommandsTest, EvaluateIsConsistent) {
  const fs::path run = root() / "run";
  EXPECT_TRUE(fs::exists(run / "metrics.csv"));
  EXPECT_TRUE(fs::exists(run / "confusion.csv"));
  for (const char* c : {"Benign", "Malignant", "Normal"}) {
    const std::string roc = slurp(run / (std::string("roc_") + c + ".csv"));
    std::istringstream in(roc);
    std::string line;
    std::getline(in, line);
    double prev = -1.0;
    while (std::getline(in, line)) {
      const double fpr = std::stod(line.substr(0, line.find(',')));
      EXPECT_GE(fpr, prev);
      prev = fpr;
    }
  }
}

TEST_F(CommandsTest, MissingDatasetRootIsConfigErrorWithoutOutputs) {
  spit(root() / "bad.cfg", "data_root = nowhere\n");
  CommandOptions o;
  o.config = root() / "bad.cfg";
  o.out = root() / "bad_out";
  EXPECT_EQ(cmd_train(o, log_, err_), exit_code::kConfig);
  EXPECT_FALSE(fs::exists(o.out / "curves.csv"));
  o.config = root() / "absent.cfg";
  EXPECT_EQ(cmd_train(o, log_, err_), exit_code::kConfig);
}

TEST_F(CommandsTest, CorruptCheckpointIsExit4) {
  const fs::path dir = root() / "corrupt";
  fs::create_directories(dir);
  const std::string bytes = slurp(root() / "run" / "model.ckpt");
  spit(dir / "model.ckpt", bytes.substr(0, bytes.size() - 10));
  EXPECT_EQ(cmd_evaluate(opts(dir), log_, err_), exit_code::kCheckpoint);
  EXPECT_NE(err_.str().find("truncated"), std::string::npos);
}

TEST_F(CommandsTest, ExplainWritesHeatmapAndSidecar) {
  CommandOptions o = opts(root() / "run");
  o.image = any_image();
  o.target_class = "0";
  ASSERT_EQ(cmd_explain(o, log_, err_), 0) << err_.str();
  o.target_class = "Malignant";
  ASSERT_EQ(cmd_explain(o, log_, err_), 0) << err_.str();
  const fs::path hm = root() / "run" / "heatmaps";
  EXPECT_TRUE(fs::exists(hm / "Benign_0000_Benign.ppm"));
  const Sidecar a = parse_sidecar(slurp(hm / "Benign_0000_Benign.txt"));
  const Sidecar b = parse_sidecar(slurp(hm / "Benign_0000_Malignant.txt"));
  EXPECT_EQ(a.target_class, 0u);
  EXPECT_EQ(b.target_class, 1u);
  EXPECT_EQ(a.phi.size(), 4u);
  EXPECT_NEAR(a.phi_sum, a.full_value - a.base_value, 1e-9);

  o.target_class = "predicted";
  ASSERT_EQ(cmd_explain(o, log_, err_), 0);
  EXPECT_NE(log_.str().find("predicted"), std::string::npos);
}

TEST_F(CommandsTest, ExplainErrorCodes) {
  CommandOptions o = opts(root() / "run");
  spit(root() / "junk.pgm", "P5\n4 4\n255\n");
  o.image = root() / "junk.pgm";
  EXPECT_EQ(cmd_explain(o, log_, err_), exit_code::kImage);
  o.image = any_image();
  o.target_class = "Nonexistent";
  EXPECT_EQ(cmd_explain(o, log_, err_), exit_code::kConfig);
  o.target_class.reset();
  o.checkpoint = root() / "missing.ckpt";
  EXPECT_EQ(cmd_explain(o, log_, err_), exit_code::kCheckpoint);
}

TEST_F(CommandsTest, ReportIsVerbatimAndIdempotent) {
  CommandOptions o;
  o.out = root() / "run";
  ASSERT_EQ(cmd_report(o, log_, err_), 0) << err_.str();
  const std::string first = slurp(o.out / "report.md");
  ASSERT_EQ(cmd_report(o, log_, err_), 0);
  EXPECT_EQ(slurp(o.out / "report.md"), first);
  std::istringstream metrics(slurp(o.out / "metrics.csv"));
  std::string line;
  while (std::getline(metrics, line)) {
    if (line.rfind("macro,", 0) != 0) continue;
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    for (int i = 0; i < 3; ++i) {
      std::getline(cells, cell, ',');
      EXPECT_NE(first.find(cell), std::string::npos) << cell;
    }
  }
}

TEST_F(CommandsTest, ReportOnEmptyDirIsExit6) {
  CommandOptions o;
  o.out = root() / "empty_run";
  fs::create_directories(o.out);
  EXPECT_EQ(cmd_report(o, log_, err_), exit_code::kMissingArtifacts);
  EXPECT_NE(err_.str().find("curves.csv"), std::string::npos);
}

}  // namespace
}  // namespace xcnn

#include "xcnn/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "xcnn/adam.hpp"
#include "xcnn/loss.hpp"
#include "xcnn/model.hpp"
#include "xcnn/ops.hpp"

namespace xcnn {
namespace {

TEST(LossTest, WeightedHandExample) {
  // Logits whose softmax is (0.7, 0.2, 0.1).
  const Tensord logits({1, 3}, {std::log(0.7), std::log(0.2), std::log(0.1)});
  const std::vector<std::size_t> labels = {1};
  const std::vector<double> w = {1.0, 2.0, 1.0};
  EXPECT_NEAR(weighted_cross_entropy(logits, labels, w).item(), 1.6094, 1e-4);
}

TEST(LossTest, UniformWeightsEqualMeanAndShiftInvariance) {
  std::mt19937_64 rng(1);
  const Tensord logits = testing::random_tensor<double>({5, 3}, rng, -3, 3);
  const std::vector<std::size_t> labels = {0, 1, 2, 2, 1};
  double mean = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits.data()[i * 3 + k]);
    mean += -(logits.data()[i * 3 + labels[i]] - std::log(z)) / 5.0;
  }
  const std::vector<double> ones = {1.0, 1.0, 1.0}, threes = {3.0, 3.0, 3.0};
  EXPECT_NEAR(weighted_cross_entropy(logits, labels, ones).item(), mean, 1e-12);
  EXPECT_NEAR(weighted_cross_entropy(logits, labels, threes).item(), mean, 1e-12);
  const Tensord shifted = add(logits, Tensord({3}, {100.0, 100.0, 100.0}));
  EXPECT_NEAR(weighted_cross_entropy(shifted, labels, ones).item(), mean, 1e-10);
  const std::vector<std::size_t> bad = {0, 1, 3, 2, 1};
  EXPECT_THROW(weighted_cross_entropy(logits, bad, ones), InvalidArgument);
}

TEST(AdamTest, ZeroGradientIsNoOp) {
  Tensord theta({2}, {1.5, -2.0}, true);
  std::vector<Tensord> params = {theta};
  AdamState<double> state;
  adam_step<double>(params, state, AdamConfig{});
  EXPECT_EQ(theta.data()[0], 1.5);
  EXPECT_EQ(theta.data()[1], -2.0);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Tensord theta({1}, {1.0}, true);
  sum(mul(theta, theta)).backward();
  std::vector<Tensord> params = {theta};
  AdamState<double> state;
  adam_step<double>(params, state, AdamConfig{});
  EXPECT_NEAR(theta.data()[0], 0.99, 1e-6);
}

TEST(AdamTest, ConvergesOnQuadratic) {
  Tensord theta({1}, {1.0}, true);
  std::vector<Tensord> params = {theta};
  AdamState<double> state;
  for (int i = 0; i < 1000; ++i) {
    theta.zero_grad();
    sum(mul(theta, theta)).backward();
    adam_step<double>(params, state, AdamConfig{});
  }
  EXPECT_LT(std::abs(theta.data()[0]), 1e-2);
}

TEST(AdamTest, ZeroLearningRateAndNonFinite) {
  Tensord theta({1}, {1.0}, true);
  sum(mul(theta, theta)).backward();
  std::vector<Tensord> params = {theta};
  AdamState<double> state;
  AdamConfig cfg;
  cfg.learning_rate = 0.0;
  adam_step<double>(params, state, cfg);
  EXPECT_EQ(theta.data()[0], 1.0);
  theta.mutable_grad()[0] = std::nan("");
  EXPECT_THROW(adam_step<double>(params, state, AdamConfig{}), NumericError);
  EXPECT_EQ(theta.data()[0], 1.0);
}

TEST(EarlyStoppingTest, ScriptedSequence) {
  EarlyStopping es(2);
  const std::vector<double> losses = {1.0, 0.9, 0.95, 0.96, 0.97};
  std::size_t stopped_after = 0;
  for (std::size_t e = 1; e <= losses.size(); ++e) {
    es.update(e, losses[e - 1]);
    if (es.should_stop()) {
      stopped_after = e;
      break;
    }
  }
  EXPECT_EQ(stopped_after, 4u);
  EXPECT_EQ(es.best_epoch(), 2u);
}

// Two well-separated Gaussian blobs in feature space.
struct Blobs {
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> train, val;
};

Blobs make_blobs(std::uint64_t seed, std::size_t n = 60) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.5);
  Blobs b;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    const double c = y ? 2.0 : -2.0;
    b.features.push_back({c + noise(rng), -c + noise(rng), noise(rng), noise(rng)});
    b.labels.push_back(y);
    (i % 5 == 0 ? b.val : b.train).push_back(i);
  }
  return b;
}

TEST(TrainerTest, RunsAllEpochsWhenImproving) {
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.patience = 10;
  Model<double> model = attach_head<double>(2, 0, 2, 0.0, 1);
  FeatureBatchSource<double> data({{0, 0}}, {0}, 2);
  const std::vector<std::size_t> train_idx = {0};
  const std::vector<double> weights = {1.0, 1.0};
  double next = 1.0;
  TrainHooks<double> hooks;
  hooks.validate = [&](Model<double>&, std::size_t) { return EpochScore{next -= 0.1, 0.5}; };
  const TrainRun<double> run = train(model, data, train_idx, train_idx, weights, cfg, hooks);
  EXPECT_EQ(run.records.size(), 4u);
  EXPECT_EQ(run.best_epoch, 4u);
  EXPECT_FALSE(run.stopped_early);
}

TEST(TrainerTest, ScriptedEarlyStopRestoresBestState) {
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.patience = 2;
  const Blobs b = make_blobs(1);
  Model<double> model = attach_head<double>(4, 0, 2, 0.0, 1);
  FeatureBatchSource<double> data(b.features, b.labels, 2);
  const std::vector<double> weights = {1.0, 1.0};
  const std::vector<double> losses = {1.0, 0.9, 0.95, 0.96, 0.97};
  ModelState<double> at_epoch2;
  TrainHooks<double> hooks;
  hooks.validate = [&](Model<double>& m, std::size_t epoch) {
    if (epoch == 2) at_epoch2 = m.state();
    return EpochScore{losses[epoch - 1], 0.0};
  };
  const TrainRun<double> run = train(model, data, b.train, b.val, weights, cfg, hooks);
  EXPECT_EQ(run.records.size(), 4u);
  EXPECT_TRUE(run.stopped_early);
  EXPECT_EQ(run.best_epoch, 2u);
  EXPECT_EQ(model.state(), at_epoch2);
}

TEST(TrainerTest, DeterministicRecords) {
  const Blobs b = make_blobs(2);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.seed = 5;
  const std::vector<double> weights = {1.0, 1.0};
  auto run_once = [&] {
    Model<float> model = attach_head<float>(4, 6, 2, 0.5, 3);
    FeatureBatchSource<float> data(b.features, b.labels, 2);
    return train(model, data, b.train, b.val, weights, cfg).records;
  };
  EXPECT_EQ(run_once(), run_once());
}

TEST(TrainerTest, SeparableProblemLearnsForMostSeeds) {
  std::size_t good = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Blobs b = make_blobs(100 + seed);
    TrainConfig cfg;
    cfg.max_epochs = 20;
    cfg.seed = seed;
    Model<float> model = attach_head<float>(4, 0, 2, 0.0, seed);
    FeatureBatchSource<float> data(b.features, b.labels, 2);
    const std::vector<double> weights = {1.0, 1.0};
    train(model, data, b.train, b.val, weights, cfg);
    if (score_split<float>(model, data, b.val, weights, 8).accuracy >= 0.9) ++good;
  }
  EXPECT_GE(good, 9u);
}

TEST(TrainerTest, RecalibrationUsesExactSplitStatistics) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  LabeledDataset ds;
  ds.class_names = {"a", "b"};
  ds.class_counts = {3, 2};
  for (std::size_t i = 0; i < 5; ++i) {
    Sample s{Image(3, 4, 4), i % 2, std::to_string(i)};
    for (auto& v : s.image.pixels) v = u(rng);
    ds.samples.push_back(std::move(s));
  }
  ImageBatchSource<double> data(ds, std::nullopt);
  const std::vector<std::size_t> idx = {0, 1, 2, 3, 4};
  // Batchnorm first (statistics of the raw inputs) and after a conv.
  const std::vector<ArchitectureSpec> specs = {
      {{3, 4, 4}, 2, {LayerSpec::batchnorm2d(3), LayerSpec::flatten(), LayerSpec::linear(48, 2)}},
      {{3, 4, 4}, 2,
       {LayerSpec::conv2d(3, 2, 1), LayerSpec::batchnorm2d(2), LayerSpec::relu(), LayerSpec::flatten(),
        LayerSpec::linear(32, 2)}}};
  for (const auto& spec : specs) {
    Model<double> model(spec, 3);
    const std::size_t bn = spec.layers[0].kind == LayerKind::kBatchNorm2d ? 0 : 1;
    Tensord input = data.inputs(idx, false, 0);
    if (bn == 1) {
      model.forward(input, 0, [&](std::size_t layer, const Tensord& out) {
        if (layer == 0) input = out;
      });
    }
    const std::size_t c = input.extent(1), plane = input.extent(2) * input.extent(3);
    recalibrate_batchnorm(model, data, idx, 2);
    EXPECT_EQ(model.mode(), Mode::kTrain);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mean = 0.0, var = 0.0;
      for (std::size_t s = 0; s < 5; ++s) {
        for (std::size_t k = 0; k < plane; ++k) mean += input.data()[(s * c + ch) * plane + k];
      }
      mean /= static_cast<double>(5 * plane);
      for (std::size_t s = 0; s < 5; ++s) {
        for (std::size_t k = 0; k < plane; ++k) {
          const double d = input.data()[(s * c + ch) * plane + k] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(5 * plane - 1);
      EXPECT_NEAR(model.buffers()[0].values[ch], mean, 1e-12);
      EXPECT_NEAR(model.buffers()[1].values[ch], var, 1e-12);
    }
  }
}

TEST(TrainerTest, CurvesCsvFormat) {
  const std::vector<EpochRecord> records = {{1, 0.5, 0.75, 0.25, 1.0}};
  const std::string csv = curves_csv(records);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,train_acc,val_loss,val_acc");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

}  // namespace
}  // namespace xcnn

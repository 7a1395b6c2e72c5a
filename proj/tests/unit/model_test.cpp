#include "xcnn/model.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "test_util.hpp"
#include "xcnn/adam.hpp"
#include "xcnn/checkpoint.hpp"
#include "xcnn/gradcheck.hpp"
#include "xcnn/layers.hpp"
#include "xcnn/loss.hpp"
#include "xcnn/ops.hpp"

namespace xcnn {
namespace {

using testing::random_tensor;
using testing::TempDir;

TEST(ParameterAuditTest, CustomCnnMatchesTable) {
  const ParameterAudit audit = audit_parameters(custom_cnn_spec());
  std::vector<std::size_t> conv_linear, bn;
  for (const auto& row : audit.per_layer) {
    (row.kind == LayerKind::kBatchNorm2d ? bn : conv_linear).push_back(row.count);
  }
  EXPECT_EQ(conv_linear, (std::vector<std::size_t>{168, 660, 3488, 178951509, 16386}));
  EXPECT_EQ(bn, (std::vector<std::size_t>{12, 24, 64}));
  EXPECT_EQ(audit.conv_linear, 168u + 660 + 3488 + 178951509 + 16386);
  EXPECT_EQ(audit.batchnorm_affine, 100u);
  EXPECT_EQ(audit.all, audit.conv_linear + audit.batchnorm_affine);
}

TEST(ParameterAuditTest, Heads) {
  EXPECT_EQ(audit_parameters(head_spec(2048, 256, 3)).trainable, 525315u);
  EXPECT_EQ(audit_parameters(head_spec(4, 0, 3)).trainable, 15u);
  EXPECT_EQ(attach_head<double>(4, 0, 3).count_parameters(ParamFilter::kTrainable), 15u);
}

TEST(ShapeTest, CustomCnnPropagation) {
  const auto shapes = propagate_shapes(custom_cnn_spec());
  ASSERT_EQ(shapes.size(), 16u);
  EXPECT_EQ(shapes[0], (Shape{6, 256, 256}));
  EXPECT_EQ(shapes[3], (Shape{6, 128, 128}));
  EXPECT_EQ(shapes[4], (Shape{12, 128, 128}));
  EXPECT_EQ(shapes[7], (Shape{12, 64, 64}));
  EXPECT_EQ(shapes[8], (Shape{32, 64, 64}));
  EXPECT_EQ(shapes[11], (Shape{32, 32, 32}));
  EXPECT_EQ(shapes[12], (Shape{32768}));
  EXPECT_EQ(shapes[13], (Shape{5461}));
  EXPECT_EQ(shapes[15], (Shape{3}));
}

TEST(ShapeTest, RejectsIncompatibleLayers) {
  ArchitectureSpec spec{{3, 8, 8}, 3, {LayerSpec::conv2d(4, 6, 3, 1, 1)}};
  EXPECT_THROW(propagate_shapes(spec), ShapeError);
  spec.layers = {LayerSpec::flatten(), LayerSpec::linear(192, 2)};
  EXPECT_THROW(propagate_shapes(spec), ShapeError);  // final extent is not the class count
  EXPECT_THROW(validate_layer(LayerSpec::dropout(1.0)), InvalidArgument);
}

TEST(ModelTest, FullSizeForwardGivesThreeLogits) {
  Model<float> model = build_custom_cnn<float>();
  model.set_mode(Mode::kEval);
  NoGradGuard no_grad;
  const Tensorf y = model.forward(Tensorf::full({1, 3, 256, 256}, 0.1f));
  EXPECT_EQ(y.shape(), (Shape{1, 3}));
  EXPECT_EQ(model.count_parameters(ParamFilter::kAll), 178972311u);
}

TEST(ModelTest, DescriptorRoundTrip) {
  const ArchitectureSpec spec = custom_cnn_spec({3, 32, 32}, 3, 64, 0.25);
  EXPECT_EQ(parse_descriptor(to_descriptor(spec)), spec);
}

TEST(ModelTest, IdentityLinearPassesInputThrough) {
  const Tensord x({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensord w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensord y = linear(x, w, Tensord::zeros({3}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
  EXPECT_THROW(linear(x, Tensord::zeros({4, 4}), Tensord::zeros({4})), ShapeError);
}

TEST(ModelTest, SmallCnnGradientCheckWide) {
  Model<double> model = build_custom_cnn<double>({3, 8, 8}, 3, 5, 0.5, 3);
  std::mt19937_64 rng(3);
  const Tensord x = random_tensor<double>({2, 3, 8, 8}, rng);
  const std::vector<std::size_t> labels = {0, 2};
  const std::vector<double> weights = {1.0, 2.0, 0.5};
  Model<long double> wide = model.cast<long double>();
  const Tensor<long double> xw(x.shape(), std::vector<long double>(x.data().begin(), x.data().end()));
  std::vector<Tensor<long double>> wide_params = wide.trainable_parameters();
  // Train mode: batch statistics and a fixed dropout mask.
  struct Loss {
    Model<double>& model;
    Model<long double>& wide;
    std::vector<Tensor<long double>>& wide_params;
    const Tensord& x;
    const Tensor<long double>& xw;
    const std::vector<std::size_t>& labels;
    const std::vector<double>& weights;
    Tensord operator()(std::vector<Tensord>&) const {
      return weighted_cross_entropy(model.forward(x, 21), labels, weights);
    }
    Tensor<long double> operator()(std::vector<Tensor<long double>>& leaves) const {
      for (std::size_t k = 0; k < leaves.size(); ++k) {
        std::ranges::copy(leaves[k].data(), wide_params[k].mutable_data().begin());
      }
      return weighted_cross_entropy(wide.forward(xw, 21), labels, weights);
    }
  };
  const auto result = gradient_check_wide(Loss{model, wide, wide_params, x, xw, labels, weights},
                                          model.trainable_parameters());
  EXPECT_LT(result.worst, 1e-6);
  EXPECT_GT(result.checked, 9 * (result.checked + result.skipped) / 10);
}

TEST(ModelTest, FreezingKeepsBackboneBitExact) {
  Model<double> backbone = build_custom_cnn<double>({3, 8, 8}, 3, 4, 0.0, 1);
  Model<double> model = attach_head(backbone, 5, 3, 0.0, 2);
  std::size_t head = 0;
  for (const auto& p : model.parameters()) {
    if (!model.layer_frozen(p.layer)) head += p.tensor.numel();
  }
  EXPECT_EQ(model.count_parameters(ParamFilter::kTrainable), head);
  EXPECT_LT(head, model.count_parameters(ParamFilter::kAll));

  const ModelState<double> before = model.state();
  std::mt19937_64 rng(5);
  const Tensord x = random_tensor<double>({4, 3, 8, 8}, rng);
  const std::vector<std::size_t> labels = {0, 1, 2, 0};
  const std::vector<double> weights = {1.0, 1.0, 1.0};
  weighted_cross_entropy(model.forward(x, 9), labels, weights).backward();
  std::vector<Tensord> trainable = model.trainable_parameters();
  AdamState<double> state;
  adam_step<double>(trainable, state, AdamConfig{});
  const ModelState<double> after = model.state();
  bool head_moved = false;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& p = model.parameters()[i];
    if (model.layer_frozen(p.layer)) {
      EXPECT_EQ(before.parameters[i], after.parameters[i]) << p.name;
      EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
    } else if (before.parameters[i] != after.parameters[i]) {
      head_moved = true;
    }
  }
  EXPECT_TRUE(head_moved);
}

TEST(CheckpointTest, RoundTripIsBitExactAndStable) {
  Model<float> model = build_custom_cnn<float>({3, 16, 16}, 3, 7, 0.5, 11);
  model.buffers()[0].values[0] = 0.375f;
  const CheckpointMetadata meta{4, 0.5, {"Benign", "Malignant", "Normal"}};
  const std::string bytes = encode_checkpoint(model, meta);
  LoadedCheckpoint loaded = decode_checkpoint(bytes);
  EXPECT_EQ(loaded.model.state(), model.state());
  EXPECT_EQ(loaded.model.spec(), model.spec());
  EXPECT_EQ(loaded.metadata.epoch, 4u);
  EXPECT_EQ(loaded.metadata.class_names, meta.class_names);
  EXPECT_EQ(encode_checkpoint(loaded.model, loaded.metadata), bytes);

  TempDir dir("ckpt");
  save_checkpoint(model, meta, dir.path() / "a.ckpt");
  LoadedCheckpoint again = load_checkpoint(dir.path() / "a.ckpt");
  save_checkpoint(again.model, again.metadata, dir.path() / "b.ckpt");
  std::ifstream a(dir.path() / "a.ckpt", std::ios::binary), b(dir.path() / "b.ckpt", std::ios::binary);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(CheckpointTest, CorruptionIsDetected) {
  Model<float> model = build_custom_cnn<float>({3, 8, 8}, 3, 4);
  const std::string bytes = encode_checkpoint(model, {});
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IntegrityError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), IntegrityError);
  std::string bad = bytes;
  bad[0] = 'Y';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), IntegrityError);
}

TEST(SeedTest, MixSeedSeparatesStreams) {
  EXPECT_EQ(mix_seed(1, 2), mix_seed(1, 2));
  EXPECT_NE(mix_seed(1, 2), mix_seed(1, 3));
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 2));
}

}  // namespace
}  // namespace xcnn

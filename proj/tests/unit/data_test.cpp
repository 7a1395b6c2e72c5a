#include "xcnn/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "xcnn/augment.hpp"
#include "xcnn/image.hpp"
#include "xcnn/synthetic.hpp"

namespace xcnn {
namespace {

using testing::TempDir;

Image random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Image img(c, h, w);
  for (auto& p : img.pixels) p = dist(rng);
  return img;
}

std::vector<std::size_t> labels_for(const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], c);
  return labels;
}

TEST(SplitTest, ScreeningCorpusSizes) {
  const std::vector<std::size_t> counts = {416, 120, 561};
  const std::array<std::array<std::size_t, 3>, 3> expected = {
      {{292, 62, 62}, {84, 18, 18}, {393, 84, 84}}};
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(split_sizes(counts[c], {}), expected[c]);

  const auto labels = labels_for(counts);
  const SplitAssignment a = stratified_split(labels, {"Benign", "Malignant", "Normal"}, {}, 7);
  std::array<std::array<std::size_t, 3>, 3> tally{};
  for (std::size_t i = 0; i < labels.size(); ++i) ++tally[labels[i]][static_cast<std::size_t>(a.tags[i])];
  EXPECT_EQ(tally, expected);
}

TEST(SplitTest, DegenerateRatiosAndDeterminism) {
  const auto labels = labels_for({5, 6, 7});
  const std::vector<std::string> names = {"a", "b", "c"};
  const SplitAssignment all_train = stratified_split(labels, names, {1.0, 0.0, 0.0}, 1);
  EXPECT_EQ(all_train.indices(Split::kTrain).size(), labels.size());
  EXPECT_EQ(stratified_split(labels, names, {}, 3).tags, stratified_split(labels, names, {}, 3).tags);
  EXPECT_NE(stratified_split(labels_for({40, 40, 40}), names, {}, 3).tags,
            stratified_split(labels_for({40, 40, 40}), names, {}, 4).tags);
}

TEST(SplitTest, TinyClassNamesTheClass) {
  try {
    stratified_split(labels_for({5, 2, 5}), {"a", "tiny", "c"}, {}, 0);
    FAIL() << "expected SplitError";
  } catch (const SplitError& e) {
    EXPECT_NE(std::string(e.what()).find("tiny"), std::string::npos);
  }
}

TEST(ClassWeightsTest, InverseFrequency) {
  // The screening corpus is reported as 1197 images although its class
  // counts sum to 1097; N is the reported size.
  const auto w = class_weights({416, 120, 561}, 1197);
  EXPECT_NEAR(w[0], 0.9591, 5e-5);
  EXPECT_NEAR(w[1], 3.3250, 5e-5);
  EXPECT_NEAR(w[2], 0.7112, 5e-5);
  EXPECT_NEAR(w[0] * 416 + w[1] * 120 + w[2] * 561, 1197.0, 1e-9);
  const auto own = class_weights({416, 120, 561});
  EXPECT_NEAR(own[0] * 416 + own[1] * 120 + own[2] * 561, 1097.0, 1e-9);
  EXPECT_EQ(class_weights({10, 10, 10}), (std::vector<double>{1.0, 1.0, 1.0}));
  EXPECT_THROW(class_weights({3, 0, 1}), InvalidArgument);
}

TEST(NormalizeTest, ConstantsAndInverse) {
  Image img(3, 1, 2);
  img.at(0, 0, 0) = 0.485f;
  img.at(2, 0, 1) = 1.0f;
  const Tensord t = normalize<double>(img);
  EXPECT_NEAR(t.data()[0], 0.0, 1e-7);
  EXPECT_NEAR(t.data()[5], 2.64, 1e-6);
  const Image orig = random_image(3, 4, 5, 2);
  const Image back = denormalize(normalize<double>(orig));
  for (std::size_t i = 0; i < orig.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], orig.pixels[i], 1e-6);
}

TEST(ResizeTest, ExtentAndConstants) {
  const Image up = resize_bilinear(random_image(3, 128, 128, 1), 256, 256);
  EXPECT_EQ(up.height, 256u);
  EXPECT_EQ(up.width, 256u);
  const Image gray = resize_bilinear(Image(1, 13, 7, 0.5f), 40, 29);
  for (float p : gray.pixels) EXPECT_EQ(p, 0.5f);
}

TEST(AugmentTest, NullPolicyIsIdentity) {
  const Image img = random_image(3, 16, 16, 3);
  AugmentationPolicy policy{0.0, 1.0, 0.0, 5};
  EXPECT_EQ(augment(img, policy, 17), img);
}

TEST(AugmentTest, FlipIsInvolution) {
  const Image img = random_image(3, 9, 12, 4);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  EXPECT_NE(flip_horizontal(img), img);
}

TEST(AugmentTest, SmallRotationRoundTrip) {
  // Smooth content so that two bilinear resamplings stay close.
  Image img(1, 64, 64);
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      img.at(0, y, x) = 0.5f + 0.25f * static_cast<float>(std::sin(0.1 * static_cast<double>(x)) *
                                                          std::cos(0.13 * static_cast<double>(y)));
    }
  }
  const Image back = rotate(rotate(img, 15.0), -15.0);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 16; y < 48; ++y) {
    for (std::size_t x = 16; x < 48; ++x) {
      sum += std::abs(back.at(0, y, x) - img.at(0, y, x));
      ++n;
    }
  }
  EXPECT_LT(sum / static_cast<double>(n), 0.02);
}

TEST(AugmentTest, DrawsAreSeededAndBounded) {
  AugmentationPolicy policy;
  policy.seed = 9;
  const Image img = random_image(3, 20, 20, 6);
  EXPECT_EQ(augment(img, policy, 3), augment(img, policy, 3));
  for (std::uint64_t s = 0; s < 200; ++s) {
    const AugmentDraw d = draw_augmentation(policy, s);
    EXPECT_LE(std::abs(d.angle_degrees), 15.0);
  }
  const Image out = augment(img, policy, 3);
  for (float p : out.pixels) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f);
  }
  policy.crop_fraction = 0.0;
  EXPECT_THROW(policy.validate(), InvalidArgument);
}

TEST(PnmTest, RoundTripAndErrors) {
  Image rgb(3, 5, 4);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<float>(i % 256) / 255.0f;
  EXPECT_EQ(decode_pnm(encode_pnm(rgb)), rgb);
  Image gray(1, 3, 3, 128.0f / 255.0f);
  EXPECT_EQ(decode_pnm(encode_pnm(gray)), gray);
  EXPECT_EQ(encode_pnm(decode_pnm(encode_pnm(rgb))), encode_pnm(rgb));
  EXPECT_THROW(decode_pnm("P5\n2 2\n255\nab"), FormatError);
  EXPECT_THROW(decode_pnm("hello"), FormatError);
}

TEST(DatasetTest, LexicographicClassesAndResize) {
  TempDir dir("ds");
  write_synthetic_corpus(dir.path(), {{"Normal", SyntheticShape::kNone, 3}, {"Benign", SyntheticShape::kDisk, 3},
                                      {"Malignant", SyntheticShape::kStar, 4}},
                         24, 1);
  std::ofstream(dir.path() / "Normal" / "broken.pgm") << "not an image";
  std::vector<std::string> warnings;
  LoadOptions opts;
  opts.size = 32;
  opts.warn = [&](const std::string& m) { warnings.push_back(m); };
  const LoadResult r = load_dataset(dir.path(), opts);
  EXPECT_EQ(r.dataset.class_names, (std::vector<std::string>{"Benign", "Malignant", "Normal"}));
  EXPECT_EQ(r.dataset.class_counts, (std::vector<std::size_t>{3, 4, 3}));
  EXPECT_EQ(r.manifest.skipped.size(), 1u);
  EXPECT_EQ(warnings.size(), 1u);
  for (const auto& s : r.dataset.samples) {
    EXPECT_EQ(s.image.channels, 3u);
    EXPECT_EQ(s.image.height, 32u);
    EXPECT_EQ(s.image.width, 32u);
  }
}

TEST(DatasetTest, EmptyClassIsIngestionError) {
  TempDir dir("empty");
  write_synthetic_corpus(dir.path(), {{"A", SyntheticShape::kNone, 2}}, 16, 1);
  std::filesystem::create_directories(dir.path() / "B");
  EXPECT_THROW(load_dataset(dir.path()), IngestionError);
}

TEST(SyntheticTest, DeterministicAndImbalanced) {
  const auto classes = default_synthetic_classes(20);
  ASSERT_EQ(classes.size(), 3u);
  EXPECT_EQ(classes[0].count * 4, classes[1].count);
  EXPECT_EQ(classes[1].count, classes[2].count);
  std::mt19937_64 a(3), b(3);
  EXPECT_EQ(render_synthetic(SyntheticShape::kStar, 32, a), render_synthetic(SyntheticShape::kStar, 32, b));
}

}  // namespace
}  // namespace xcnn

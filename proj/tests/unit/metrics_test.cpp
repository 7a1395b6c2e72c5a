#include "xcnn/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"
#include "xcnn/evaluate.hpp"
#include "xcnn/model.hpp"

namespace xcnn {
namespace {

using Labels = std::vector<std::size_t>;

TEST(ConfusionTest, HandTally) {
  const ConfusionMatrix cm = confusion_matrix(Labels{0, 0, 1, 1, 2, 2}, Labels{0, 1, 1, 1, 2, 2}, 3);
  EXPECT_EQ(cm.counts, (std::vector<std::size_t>{1, 1, 0, 0, 2, 0, 0, 0, 2}));
  const ConfusionMatrix perfect = confusion_matrix(Labels{2, 0, 2, 1}, Labels{2, 0, 2, 1}, 3);
  EXPECT_EQ(perfect.counts, (std::vector<std::size_t>{1, 0, 0, 0, 1, 0, 0, 0, 2}));
  const ConfusionMatrix empty = confusion_matrix(Labels{}, Labels{}, 3);
  EXPECT_EQ(empty.total(), 0u);
  EXPECT_THROW(confusion_matrix(Labels{0, 3}, Labels{0, 1}, 3), InvalidArgument);
  EXPECT_THROW(confusion_matrix(Labels{0}, Labels{0, 1}, 3), InvalidArgument);
}

TEST(PrfTest, HandArithmetic) {
  ConfusionMatrix cm = confusion_matrix(Labels{}, Labels{}, 3);
  cm.counts = {2, 0, 0, 1, 1, 0, 0, 0, 2};
  const PrfReport r = macro_prf1(cm);
  EXPECT_NEAR(r.per_class[0].precision, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(r.per_class[1].precision, 1.0);
  EXPECT_EQ(r.per_class[1].recall, 0.5);
  EXPECT_NEAR(r.per_class[0].f1, 0.8, 1e-12);
  EXPECT_NEAR(r.per_class[1].f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.macro_f1, 0.8222, 5e-5);
  EXPECT_NEAR(r.accuracy, 5.0 / 6.0, 1e-15);
}

TEST(PrfTest, DegenerateClass) {
  const PrfReport r = macro_prf1(confusion_matrix(Labels{0, 1, 0}, Labels{0, 1, 0}, 3));
  EXPECT_TRUE(r.per_class[2].degenerate);
  EXPECT_EQ(r.per_class[2].precision, 0.0);
  EXPECT_EQ(r.per_class[2].recall, 0.0);
  EXPECT_EQ(r.per_class[2].f1, 0.0);
  EXPECT_FALSE(r.per_class[0].degenerate);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(PrfTest, MatchesBruteForceOnRandomLabels) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng() % 4, n = rng() % 50;
    Labels t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng() % k;
      p[i] = rng() % k;
    }
    const PrfReport r = macro_prf1(confusion_matrix(t, p, k));
    double mf1 = 0.0;
    std::size_t correct = 0;
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += t[i] == c && p[i] == c;
        fp += t[i] != c && p[i] == c;
        fn += t[i] == c && p[i] != c;
      }
      const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      const double f1 = tp ? static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
      EXPECT_EQ(r.per_class[c].precision, prec);
      EXPECT_EQ(r.per_class[c].recall, rec);
      EXPECT_EQ(r.per_class[c].f1, f1);
      mf1 += f1;
    }
    for (std::size_t i = 0; i < n; ++i) correct += t[i] == p[i];
    EXPECT_NEAR(r.macro_f1, mf1 / static_cast<double>(k), 1e-15);
    if (n) {
      EXPECT_EQ(r.accuracy, static_cast<double>(correct) / static_cast<double>(n));
    }
  }
}

TEST(AucTest, HandExamples) {
  using S = std::vector<double>;
  using P = std::vector<std::uint8_t>;
  EXPECT_EQ(roc_curve_auc(S{0.9, 0.8, 0.3, 0.7}, P{1, 1, 0, 0}).auc, 1.0);
  const RocCurve c = roc_curve_auc(S{0.8, 0.4, 0.6, 0.2}, P{1, 1, 0, 0});
  EXPECT_EQ(c.auc, 0.75);
  EXPECT_EQ(c.auc_numerator, 6u);
  EXPECT_EQ(c.auc_denominator, 8u);
  EXPECT_EQ(roc_curve_auc(S{0.5, 0.5, 0.5, 0.5, 0.5}, P{1, 0, 1, 0, 0}).auc, 0.5);
  EXPECT_THROW(roc_curve_auc(S{0.1, 0.2}, P{1, 1}), UndefinedAucError);
}

TEST(AucTest, EqualsPairwiseStatisticExactly) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 100;
    std::vector<double> s(n);
    std::vector<std::uint8_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 10) / 10.0;  // plenty of ties
      pos[i] = rng() % 2;
    }
    pos[0] = 1;
    pos[1] = 0;
    std::uint64_t twice_wins = 0, p = 0, q = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p += pos[i];
      q += !pos[i];
      if (!pos[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (pos[j]) continue;
        twice_wins += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
      }
    }
    const RocCurve c = roc_curve_auc(s, pos);
    // a/b == x/y with integer cross-multiplication.
    EXPECT_EQ(c.auc_numerator * (2 * p * q), twice_wins * c.auc_denominator);
    for (std::size_t i = 1; i < c.points.size(); ++i) {
      EXPECT_GE(c.points[i].fpr, c.points[i - 1].fpr);
      EXPECT_GE(c.points[i].tpr, c.points[i - 1].tpr);
    }
    EXPECT_EQ(c.points.back().fpr, 1.0);
    EXPECT_EQ(c.points.back().tpr, 1.0);
  }
}

TEST(ReportTest, OracleAndUniformModels) {
  const Labels truth = {0, 1, 2, 0, 1, 2};
  std::vector<std::vector<double>> oracle, uniform;
  for (auto t : truth) {
    std::vector<double> row(3, 0.0);
    row[t] = 1.0;
    oracle.push_back(row);
    uniform.push_back({1.0 / 3, 1.0 / 3, 1.0 / 3});
  }
  const MetricsReport good = build_report(truth, oracle, {"a", "b", "c"});
  EXPECT_EQ(good.prf.accuracy, 1.0);
  EXPECT_EQ(good.prf.macro_f1, 1.0);
  for (const auto& roc : good.roc) EXPECT_EQ(roc->auc, 1.0);
  const MetricsReport flat = build_report(truth, uniform, {"a", "b", "c"});
  EXPECT_NEAR(flat.prf.accuracy, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(flat.confusion.at(1, 0), 2u);
}

TEST(ReportTest, UniformLogitModelThroughEvaluate) {
  Model<double> model = attach_head<double>(2, 0, 3, 0.0, 1);
  for (auto& p : model.parameters()) {
    for (auto& v : p.tensor.mutable_data()) v = 0.0;
  }
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 9; ++i) {
    features.push_back({static_cast<double>(i), 1.0});
    labels.push_back(i % 3);
  }
  FeatureBatchSource<double> data(features, labels, 3);
  const Labels idx = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  const MetricsReport r = evaluate<double>(model, data, idx, {"a", "b", "c"});
  EXPECT_NEAR(r.prf.accuracy, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(r.prf.accuracy, static_cast<double>(r.confusion.trace()) / static_cast<double>(r.confusion.total()));
}

TEST(ReportTest, CsvLayout) {
  const MetricsReport r = build_report(Labels{0, 1, 1}, {{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}}, {"neg", "pos"});
  EXPECT_EQ(confusion_csv(r.confusion), "true\\predicted,neg,pos\nneg,1,0\npos,1,1\n");
  const std::string m = metrics_csv(r);
  EXPECT_EQ(m.substr(0, m.find('\n')), "class,precision,recall,f1,auc,support,degenerate");
  EXPECT_NE(m.find("\nmacro,"), std::string::npos);
  EXPECT_NE(m.find("\naccuracy,0.666667,"), std::string::npos);
  const std::string roc = roc_csv(*r.roc[1]);
  EXPECT_EQ(roc.substr(0, roc.find('\n')), "fpr,tpr,threshold");
  testing::TempDir dir("metrics");
  EXPECT_EQ(write_metrics_artifacts(r, dir.path()).size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "roc_pos.csv"));
}

}  // namespace
}  // namespace xcnn

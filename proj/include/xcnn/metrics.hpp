#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace xcnn {

/// K x K counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> counts;
  std::vector<std::string> class_names;

  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * k + predicted]; }
  std::size_t total() const;
  std::size_t trace() const;
};

/// Throws InvalidArgument on unequal lengths or labels >= k.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> predicted, std::size_t k,
                                 std::vector<std::string> class_names = {});

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // true samples of this class
  // Set when a denominator was empty (TP+FP, TP+FN, or P+R) and 0 was used.
  bool degenerate = false;
};

struct PrfReport {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  bool accuracy_degenerate = false;
};

/// Macro values are unweighted means over all classes, degenerate ones
/// included at 0.
PrfReport macro_prf1(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the origin
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
  // auc == auc_numerator / auc_denominator exactly, denominator 2 * P * N.
  std::uint64_t auc_numerator = 0;
  std::uint64_t auc_denominator = 1;
};

/// One-vs-rest ROC by a descending sweep over distinct scores; tied scores
/// enter in one step. Trapezoidal AUC, kept as an exact ratio of counts.
/// Throws UndefinedAucError unless both classes are present.
RocCurve roc_curve_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

struct MetricsReport {
  std::vector<std::string> class_names;
  ConfusionMatrix confusion;
  PrfReport prf;
  std::vector<std::optional<RocCurve>> roc;  // empty when AUC is undefined for the class
};

/// Assembles the report from true labels and per-sample class probabilities.
/// Predictions are row argmax with the lowest index winning ties.
MetricsReport build_report(std::span<const std::size_t> truth,
                           const std::vector<std::vector<double>>& probabilities,
                           std::vector<std::string> class_names);

std::string confusion_csv(const ConfusionMatrix& cm);
/// `class,precision,recall,f1,auc,support,degenerate` rows, then a `macro`
/// row and an `accuracy` row.
std::string metrics_csv(const MetricsReport& report);
/// `fpr,tpr,threshold` rows.
std::string roc_csv(const RocCurve& curve);

/// Writes confusion.csv, metrics.csv, and roc_<class>.csv into `dir`;
/// returns the paths written.
std::vector<std::filesystem::path> write_metrics_artifacts(const MetricsReport& report,
                                                           const std::filesystem::path& dir);

}  // namespace xcnn

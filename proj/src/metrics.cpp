#include "xcnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "xcnn/error.hpp"

namespace xcnn {

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < k; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> predicted, std::size_t k,
                                 std::vector<std::string> class_names) {
  if (truth.size() != predicted.size()) {
    throw InvalidArgument("true and predicted label lists differ in length");
  }
  if (k == 0) throw InvalidArgument("confusion matrix needs at least one class");
  ConfusionMatrix cm;
  cm.k = k;
  cm.counts.assign(k * k, 0);
  if (class_names.empty()) {
    for (std::size_t c = 0; c < k; ++c) class_names.push_back(std::to_string(c));
  }
  if (class_names.size() != k) throw InvalidArgument("class name count differs from k");
  cm.class_names = std::move(class_names);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= k || predicted[i] >= k) {
      throw InvalidArgument("label out of range at position " + std::to_string(i));
    }
    ++cm.counts[truth[i] * k + predicted[i]];
  }
  return cm;
}

PrfReport macro_prf1(const ConfusionMatrix& cm) {
  PrfReport r;
  const std::size_t k = cm.k;
  r.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = cm.at(c, c), col = 0, row = 0;
    for (std::size_t j = 0; j < k; ++j) {
      col += cm.at(j, c);
      row += cm.at(c, j);
    }
    ClassMetrics& m = r.per_class[c];
    m.support = row;
    if (col == 0) {
      m.degenerate = true;
    } else {
      m.precision = static_cast<double>(tp) / static_cast<double>(col);
    }
    if (row == 0) {
      m.degenerate = true;
    } else {
      m.recall = static_cast<double>(tp) / static_cast<double>(row);
    }
    if (m.precision + m.recall == 0.0) {
      m.degenerate = true;
    } else {
      // 2PR / (P + R) in count form, so the value is rounded only once.
      m.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(row + col);
    }
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  if (k > 0) {
    r.macro_precision /= static_cast<double>(k);
    r.macro_recall /= static_cast<double>(k);
    r.macro_f1 /= static_cast<double>(k);
  }
  const std::size_t total = cm.total();
  if (total == 0) {
    r.accuracy_degenerate = true;
  } else {
    r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  }
  return r;
}

RocCurve roc_curve_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw InvalidArgument("scores and labels differ in length");
  std::uint64_t p = 0;
  for (auto v : positive) p += v ? 1 : 0;
  const std::uint64_t n = scores.size() - p;
  if (p == 0 || n == 0) {
    throw UndefinedAucError("AUC needs at least one positive and one negative sample");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0, fp = 0, twice_area = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    const std::uint64_t tp_before = tp, fp_before = fp;
    while (i < order.size() && scores[order[i]] == s) {
      if (positive[order[i]]) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    twice_area += (fp - fp_before) * (tp + tp_before);
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n),
                            static_cast<double>(tp) / static_cast<double>(p), s});
  }
  curve.auc_numerator = twice_area;
  curve.auc_denominator = 2 * p * n;
  curve.auc = static_cast<double>(twice_area) / static_cast<double>(curve.auc_denominator);
  return curve;
}

MetricsReport build_report(std::span<const std::size_t> truth,
                           const std::vector<std::vector<double>>& probabilities,
                           std::vector<std::string> class_names) {
  if (truth.size() != probabilities.size()) throw InvalidArgument("labels and scores differ in length");
  const std::size_t k = class_names.size();
  std::vector<std::size_t> predicted(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto& row = probabilities[i];
    if (row.size() != k) throw InvalidArgument("probability row width differs from class count");
    predicted[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  MetricsReport report;
  report.class_names = class_names;
  report.confusion = confusion_matrix(truth, predicted, k, std::move(class_names));
  report.prf = macro_prf1(report.confusion);
  report.roc.resize(k);
  std::vector<double> scores(truth.size());
  std::vector<std::uint8_t> positive(truth.size());
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < truth.size(); ++i) {
      scores[i] = probabilities[i][c];
      positive[i] = truth[i] == c ? 1 : 0;
    }
    try {
      report.roc[c] = roc_curve_auc(scores, positive);
    } catch (const UndefinedAucError&) {
      report.roc[c].reset();
    }
  }
  return report;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string out = "true\\predicted";
  for (const auto& name : cm.class_names) out += "," + name;
  out += "\n";
  for (std::size_t i = 0; i < cm.k; ++i) {
    out += cm.class_names[i];
    for (std::size_t j = 0; j < cm.k; ++j) out += "," + std::to_string(cm.at(i, j));
    out += "\n";
  }
  return out;
}

std::string metrics_csv(const MetricsReport& report) {
  std::string out = "class,precision,recall,f1,auc,support,degenerate\n";
  const auto& prf = report.prf;
  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (std::size_t c = 0; c < report.class_names.size(); ++c) {
    const auto& m = prf.per_class[c];
    std::string auc = "undefined";
    if (report.roc[c]) {
      auc = fmt(report.roc[c]->auc);
      auc_sum += report.roc[c]->auc;
      ++auc_count;
    }
    out += report.class_names[c] + "," + fmt(m.precision) + "," + fmt(m.recall) + "," + fmt(m.f1) +
           "," + auc + "," + std::to_string(m.support) + "," + (m.degenerate ? "1" : "0") + "\n";
  }
  const std::string macro_auc = auc_count ? fmt(auc_sum / static_cast<double>(auc_count)) : "undefined";
  out += "macro," + fmt(prf.macro_precision) + "," + fmt(prf.macro_recall) + "," + fmt(prf.macro_f1) +
         "," + macro_auc + "," + std::to_string(report.confusion.total()) + ",0\n";
  out += "accuracy," + fmt(prf.accuracy) + ",,,," + std::to_string(report.confusion.total()) + "," +
         (prf.accuracy_degenerate ? "1" : "0") + "\n";
  return out;
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : curve.points) out += fmt(p.fpr) + "," + fmt(p.tpr) + "," + fmt(p.threshold) + "\n";
  return out;
}

std::vector<std::filesystem::path> write_metrics_artifacts(const MetricsReport& report,
                                                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  written.push_back(dir / "confusion.csv");
  write_file(written.back(), confusion_csv(report.confusion));
  written.push_back(dir / "metrics.csv");
  write_file(written.back(), metrics_csv(report));
  for (std::size_t c = 0; c < report.class_names.size(); ++c) {
    if (!report.roc[c]) continue;
    written.push_back(dir / ("roc_" + report.class_names[c] + ".csv"));
    write_file(written.back(), roc_csv(*report.roc[c]));
  }
  return written;
}

}  // namespace xcnn

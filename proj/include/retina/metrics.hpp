#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "retina/errors.hpp"

namespace retina::metrics {

// label 0 iff score <= threshold
inline int binary_decision(double score, double threshold = 0.5) {
  if (score < 0.0 || score > 1.0 || !std::isfinite(score)) {
    fail(Errc::ScoreOutOfRange, "score " + std::to_string(score) + " outside [0,1]");
  }
  return score <= threshold ? 0 : 1;
}

// Ties break toward the lowest index.
inline int argmax_decision(const std::vector<double>& probs) {
  if (probs.empty()) fail(Errc::EmptyVector, "argmax over empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return static_cast<int>(best);
}

struct ConfusionMatrix {
  int k = 0;
  std::vector<long long> cells;  // row-major, rows = true class, cols = predicted

  long long& at(int t, int p) { return cells[static_cast<std::size_t>(t) * k + p]; }
  long long at(int t, int p) const { return cells[static_cast<std::size_t>(t) * k + p]; }

  long long total() const { return std::accumulate(cells.begin(), cells.end(), 0LL); }
  long long trace() const {
    long long s = 0;
    for (int c = 0; c < k; ++c) s += at(c, c);
    return s;
  }
  double accuracy() const {
    const long long n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
  }
  long long row_sum(int t) const {
    long long s = 0;
    for (int p = 0; p < k; ++p) s += at(t, p);
    return s;
  }
  long long col_sum(int p) const {
    long long s = 0;
    for (int t = 0; t < k; ++t) s += at(t, p);
    return s;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& y_true,
                                        const std::vector<int>& y_pred, int k) {
  if (y_true.size() != y_pred.size()) {
    fail(Errc::LengthMismatch, "y_true and y_pred differ in length");
  }
  ConfusionMatrix cm;
  cm.k = k;
  cm.cells.assign(static_cast<std::size_t>(k) * k, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= k || y_pred[i] < 0 || y_pred[i] >= k) {
      fail(Errc::LabelOutOfRange, "sample " + std::to_string(i));
    }
    ++cm.at(y_true[i], y_pred[i]);
  }
  return cm;
}

// Zero-denominator classes yield 0 with the matching flag set, so sparse
// matrices still evaluate.
struct PrecisionRecallF1 {
  std::vector<double> precision, recall, f1;
  std::vector<bool> precision_degenerate, recall_degenerate;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  double weighted_precision = 0.0, weighted_recall = 0.0, weighted_f1 = 0.0;
};

inline PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm) {
  if (cm.k <= 0 || cm.total() == 0) fail(Errc::EmptyMatrix, "no evaluated samples");
  PrecisionRecallF1 out;
  const double total = static_cast<double>(cm.total());
  for (int c = 0; c < cm.k; ++c) {
    const long long col = cm.col_sum(c);
    const long long row = cm.row_sum(c);
    const double tp = static_cast<double>(cm.at(c, c));
    const bool p_deg = col == 0;
    const bool r_deg = row == 0;
    const double p = p_deg ? 0.0 : tp / static_cast<double>(col);
    const double r = r_deg ? 0.0 : tp / static_cast<double>(row);
    const double f = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    out.precision.push_back(p);
    out.recall.push_back(r);
    out.f1.push_back(f);
    out.precision_degenerate.push_back(p_deg);
    out.recall_degenerate.push_back(r_deg);
    out.macro_precision += p;
    out.macro_recall += r;
    out.macro_f1 += f;
    const double weight = static_cast<double>(row) / total;
    out.weighted_precision += weight * p;
    out.weighted_recall += weight * r;
    out.weighted_f1 += weight * f;
  }
  out.macro_precision /= cm.k;
  out.macro_recall /= cm.k;
  out.macro_f1 /= cm.k;
  return out;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;

  bool empty() const { return points.empty(); }
};

// Sweeps all distinct score thresholds in descending order; a sample is
// predicted positive when its score >= threshold. Anchored at (0,0) with an
// infinite threshold and guaranteed to end at (1,1).
inline RocCurve roc_curve(const std::vector<double>& scores, const std::vector<bool>& positives) {
  if (scores.size() != positives.size()) {
    fail(Errc::LengthMismatch, "scores and labels differ in length");
  }
  long long p_total = 0, n_total = 0;
  for (bool b : positives) (b ? p_total : n_total)++;
  if (p_total == 0 || n_total == 0) {
    fail(Errc::DegenerateLabels, "need at least one positive and one negative");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  long long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      if (positives[order[i]]) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n_total),
                            static_cast<double>(tp) / static_cast<double>(p_total), t});
  }
  return curve;
}

// Trapezoidal area; equals the pairwise-ordering statistic with half credit
// for ties.
inline double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

struct MulticlassAuc {
  double micro = 0.0;
  double macro = 0.0;
  std::vector<RocCurve> per_class;   // empty curve for skipped classes
  std::vector<double> per_class_auc;  // NaN for skipped classes
  std::vector<int> skipped_classes;   // absent from y_true, skipped in macro
};

// One-vs-rest binarization. Micro pools every (sample, class) indicator;
// macro averages the defined per-class AUCs.
inline MulticlassAuc multiclass_auc(const std::vector<std::vector<double>>& probs,
                                    const std::vector<int>& y_true) {
  if (probs.empty()) fail(Errc::EmptyVector, "no samples");
  if (probs.size() != y_true.size()) fail(Errc::LengthMismatch, "probs vs labels");
  const std::size_t k = probs[0].size();
  if (k < 2) fail(Errc::ShapeMismatch, "need at least two classes");
  for (const auto& row : probs) {
    if (row.size() != k) fail(Errc::ShapeMismatch, "ragged probability matrix");
    double sum = std::accumulate(row.begin(), row.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-6) {
      fail(Errc::ScoreOutOfRange, "probability row sums to " + std::to_string(sum));
    }
  }

  MulticlassAuc out;
  std::vector<double> flat_scores;
  std::vector<bool> flat_positives;
  flat_scores.reserve(probs.size() * k);
  flat_positives.reserve(probs.size() * k);

  double macro_sum = 0.0;
  int macro_count = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> scores(probs.size());
    std::vector<bool> positives(probs.size());
    bool any_pos = false, any_neg = false;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i][c];
      positives[i] = y_true[i] == static_cast<int>(c);
      (positives[i] ? any_pos : any_neg) = true;
      flat_scores.push_back(scores[i]);
      flat_positives.push_back(positives[i]);
    }
    if (!any_pos || !any_neg) {
      out.per_class.emplace_back();
      out.per_class_auc.push_back(std::numeric_limits<double>::quiet_NaN());
      out.skipped_classes.push_back(static_cast<int>(c));
      continue;
    }
    RocCurve curve = roc_curve(scores, positives);
    const double a = auc(curve);
    out.per_class.push_back(std::move(curve));
    out.per_class_auc.push_back(a);
    macro_sum += a;
    ++macro_count;
  }
  if (macro_count == 0) fail(Errc::DegenerateLabels, "every class is degenerate");
  out.macro = macro_sum / macro_count;
  out.micro = auc(roc_curve(flat_scores, flat_positives));
  return out;
}

// Pointwise-average of the defined per-class curves on the union FPR grid.
// Plot aid only; the macro AUC value is the mean of per-class areas.
inline RocCurve macro_average_curve(const MulticlassAuc& mc) {
  std::vector<double> grid;
  for (const auto& curve : mc.per_class) {
    for (const auto& pt : curve.points) grid.push_back(pt.fpr);
  }
  if (grid.empty()) return {};
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  auto tpr_at = [](const RocCurve& curve, double fpr) {
    // linear interpolation along the staircase
    double prev_f = 0.0, prev_t = 0.0;
    for (const auto& pt : curve.points) {
      if (pt.fpr >= fpr) {
        if (pt.fpr == prev_f) return std::max(prev_t, pt.tpr);
        const double w = (fpr - prev_f) / (pt.fpr - prev_f);
        return prev_t + w * (pt.tpr - prev_t);
      }
      prev_f = pt.fpr;
      prev_t = pt.tpr;
    }
    return 1.0;
  };

  RocCurve avg;
  int defined = 0;
  for (const auto& curve : mc.per_class) {
    if (!curve.empty()) ++defined;
  }
  for (double f : grid) {
    double sum = 0.0;
    for (const auto& curve : mc.per_class) {
      if (!curve.empty()) sum += tpr_at(curve, f);
    }
    avg.points.push_back({f, sum / defined, std::numeric_limits<double>::quiet_NaN()});
  }
  return avg;
}

struct EvalReport {
  int k = 0;
  double accuracy = 0.0;
  PrecisionRecallF1 prf;
  double micro_auc = 0.0;
  double macro_auc = 0.0;
  ConfusionMatrix confusion;
  std::vector<RocCurve> per_class_roc;
  RocCurve micro_roc;
  RocCurve macro_roc;
  std::vector<int> skipped_classes;
};

inline RocCurve roc_micro_curve(const std::vector<std::vector<double>>& probs,
                                const std::vector<int>& y_true) {
  std::vector<double> scores;
  std::vector<bool> positives;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    for (std::size_t c = 0; c < probs[i].size(); ++c) {
      scores.push_back(probs[i][c]);
      positives.push_back(y_true[i] == static_cast<int>(c));
    }
  }
  return roc_curve(scores, positives);
}

namespace detail {

inline EvalReport evaluate_probs(const std::vector<std::vector<double>>& probs,
                                 const std::vector<int>& y_true,
                                 const std::vector<int>& y_pred, int k) {
  EvalReport report;
  report.k = k;
  report.confusion = confusion_matrix(y_true, y_pred, k);
  report.accuracy = report.confusion.accuracy();
  report.prf = precision_recall_f1(report.confusion);

  MulticlassAuc mc = multiclass_auc(probs, y_true);
  report.micro_auc = mc.micro;
  report.macro_auc = mc.macro;
  report.micro_roc = roc_micro_curve(probs, y_true);
  report.macro_roc = macro_average_curve(mc);
  report.per_class_roc = std::move(mc.per_class);
  report.skipped_classes = std::move(mc.skipped_classes);
  return report;
}

}  // namespace detail

// Binary task: sigmoid scores thresholded at 0.5; AUCs computed over the
// one-hot [1-s, s] expansion so micro and macro are defined uniformly.
inline EvalReport evaluate_binary(const std::vector<double>& scores,
                                  const std::vector<int>& y_true, double threshold = 0.5) {
  if (scores.size() != y_true.size()) fail(Errc::LengthMismatch, "scores vs labels");
  if (scores.empty()) fail(Errc::EmptyVector, "no samples");
  std::vector<std::vector<double>> probs(scores.size());
  std::vector<int> y_pred(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    y_pred[i] = binary_decision(scores[i], threshold);
    probs[i] = {1.0 - scores[i], scores[i]};
  }
  return detail::evaluate_probs(probs, y_true, y_pred, 2);
}

// Multi-class task: argmax decisions over probability rows.
inline EvalReport evaluate_multiclass(const std::vector<std::vector<double>>& probs,
                                      const std::vector<int>& y_true) {
  if (probs.empty()) fail(Errc::EmptyVector, "no samples");
  const int k = static_cast<int>(probs[0].size());
  std::vector<int> y_pred(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) y_pred[i] = argmax_decision(probs[i]);
  return detail::evaluate_probs(probs, y_true, y_pred, k);
}

// ---------------------------------------------------------------------------
// Serialization. The metrics table reuses the published row naming so runs
// can be laid side by side with the reference tables.

inline const std::array<const char*, 6>& table_metric_names() {
  static const std::array<const char*, 6> names = {
      "Test Accuracy", "Precision", "Recall",
      "Micro Average AUC", "Macro Average AUC", "F1-Score"};
  return names;
}

inline nlohmann::json curve_to_json(const RocCurve& curve) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& pt : curve.points) {
    pts.push_back({{"fpr", pt.fpr}, {"tpr", pt.tpr}, {"threshold", pt.threshold}});
  }
  return pts;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["classes"] = report.k;
  j["accuracy"] = report.accuracy;
  j["per_class"] = {
      {"precision", report.prf.precision},
      {"recall", report.prf.recall},
      {"f1", report.prf.f1},
      {"precision_degenerate", report.prf.precision_degenerate},
      {"recall_degenerate", report.prf.recall_degenerate},
  };
  j["macro"] = {{"precision", report.prf.macro_precision},
                {"recall", report.prf.macro_recall},
                {"f1", report.prf.macro_f1}};
  j["weighted"] = {{"precision", report.prf.weighted_precision},
                   {"recall", report.prf.weighted_recall},
                   {"f1", report.prf.weighted_f1}};
  j["micro_auc"] = report.micro_auc;
  j["macro_auc"] = report.macro_auc;
  j["confusion"] = nlohmann::json::array();
  for (int t = 0; t < report.k; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int p = 0; p < report.k; ++p) row.push_back(report.confusion.at(t, p));
    j["confusion"].push_back(row);
  }
  j["skipped_classes"] = report.skipped_classes;
  j["roc"] = nlohmann::json::object();
  for (int c = 0; c < report.k; ++c) {
    j["roc"]["class_" + std::to_string(c)] = curve_to_json(report.per_class_roc[c]);
  }
  j["roc"]["micro"] = curve_to_json(report.micro_roc);
  j["roc"]["macro"] = curve_to_json(report.macro_roc);
  return j;
}

// Six fixed rows: Test Accuracy, Precision, Recall, Micro Average AUC,
// Macro Average AUC, F1-Score. Precision/Recall/F1 are the macro averages;
// the JSON report carries per-class and weighted variants as well.
inline void write_table_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << "Metric,Value\n";
  const double values[6] = {report.accuracy,  report.prf.macro_precision,
                            report.prf.macro_recall, report.micro_auc,
                            report.macro_auc, report.prf.macro_f1};
  const auto& names = table_metric_names();
  out.setf(std::ios::fixed);
  out.precision(6);
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << names[i] << ',' << values[i] << '\n';
  }
}

inline void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << "true\\pred";
  for (int p = 0; p < cm.k; ++p) out << ',' << p;
  out << '\n';
  for (int t = 0; t < cm.k; ++t) {
    out << t;
    for (int p = 0; p < cm.k; ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
}

inline void write_roc_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << "series,fpr,tpr,threshold\n";
  out.precision(10);
  auto dump = [&](const std::string& series, const RocCurve& curve) {
    for (const auto& pt : curve.points) {
      out << series << ',' << pt.fpr << ',' << pt.tpr << ',';
      if (std::isfinite(pt.threshold)) {
        out << pt.threshold;
      } else if (std::isnan(pt.threshold)) {
        out << "";
      } else {
        out << "inf";
      }
      out << '\n';
    }
  };
  for (int c = 0; c < report.k; ++c) {
    dump("class_" + std::to_string(c), report.per_class_roc[c]);
  }
  dump("micro", report.micro_roc);
  dump("macro", report.macro_roc);
}

}  // namespace retina::metrics

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "minedetect/error.hpp"
#include "minedetect/flow_model.hpp"

namespace minedetect {

struct ConfusionMatrix {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  /// The same matrix seen from the other class.
  ConfusionMatrix swapped() const { return {tn, fn, fp, tp}; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassMetrics {
  double tp_rate = 0.0;
  double fp_rate = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  double mcc = 0.0;
  double roc_area = 0.0;
  double prc_area = 0.0;
  // Set when some ratio was 0/0 and reported as 0.
  bool undefined_cells = false;
};

inline ConfusionMatrix confusion(std::span<const Label> y_true, std::span<const Label> y_pred,
                                 Label positive = Label::Miner) {
  if (y_true.size() != y_pred.size())
    throw Error(Errc::LengthMismatch, std::to_string(y_true.size()) + " truths vs " + std::to_string(y_pred.size()) + " predictions");
  if (y_true.empty()) throw Error(Errc::EmptyInput, "confusion over zero instances");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool t = y_true[i] == positive, p = y_pred[i] == positive;
    if (t && p) ++m.tp;
    else if (!t && p) ++m.fp;
    else if (t && !p) ++m.fn;
    else ++m.tn;
  }
  return m;
}

namespace detail {
inline double ratio(double num, double den, bool& undefined) {
  if (den == 0.0) {
    undefined = true;
    return 0.0;
  }
  return num / den;
}
}  // namespace detail

/// Threshold metrics for the positive class; roc/prc areas are left at 0.
inline ClassMetrics class_metrics(const ConfusionMatrix& m) {
  if (m.total() == 0) throw Error(Errc::EmptyMatrix, "confusion matrix is empty");
  const double tp = static_cast<double>(m.tp), fp = static_cast<double>(m.fp);
  const double fn = static_cast<double>(m.fn), tn = static_cast<double>(m.tn);
  ClassMetrics c;
  bool& u = c.undefined_cells;
  c.tp_rate = detail::ratio(tp, tp + fn, u);
  c.fp_rate = detail::ratio(fp, fp + tn, u);
  c.precision = detail::ratio(tp, tp + fp, u);
  c.recall = c.tp_rate;
  c.f_measure = detail::ratio(2.0 * c.precision * c.recall, c.precision + c.recall, u);
  const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  c.mcc = std::clamp(detail::ratio(tp * tn - fp * fn, den, u), -1.0, 1.0);
  return c;
}

/// F-measure from precision and recall alone.
inline double f_measure(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline double accuracy(const ConfusionMatrix& m) {
  if (m.total() == 0) throw Error(Errc::EmptyMatrix, "confusion matrix is empty");
  return static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
}

namespace detail {
inline std::pair<std::size_t, std::size_t> check_scored(std::span<const double> scores, std::span<const Label> labels,
                                                        Label positive) {
  if (scores.size() != labels.size()) throw Error(Errc::LengthMismatch, "scores and labels differ in length");
  std::size_t pos = 0;
  for (auto l : labels) pos += l == positive;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw Error(Errc::DegenerateLabels, "need at least one positive and one negative");
  return {pos, neg};
}
}  // namespace detail

/// Area under the ROC curve via the rank-sum statistic; tied scores receive
/// their average rank, which credits positive/negative ties with 1/2.
inline double roc_auc(std::span<const double> scores, std::span<const Label> labels, Label positive = Label::Miner) {
  auto [pos, neg] = detail::check_scored(scores, labels, positive);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == positive) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

/// Area under the precision-recall curve. Thresholds sweep the distinct
/// scores from high to low; each recall increment is weighted by the
/// precision reached at that threshold (step interpolation).
inline double prc_auc(std::span<const double> scores, std::span<const Label> labels, Label positive = Label::Miner) {
  auto [pos, neg] = detail::check_scored(scores, labels, positive);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] == positive;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  (void)neg;
  return area;
}

/// Support-weighted mean of every metric.
inline ClassMetrics weighted_average(std::span<const std::pair<ClassMetrics, double>> per_class) {
  double total = 0.0;
  for (const auto& [_, s] : per_class) {
    if (s < 0.0) throw Error(Errc::ZeroSupport, "negative support");
    total += s;
  }
  if (per_class.empty() || total == 0.0) throw Error(Errc::ZeroSupport, "supports sum to zero");
  ClassMetrics out;
  for (const auto& [m, s] : per_class) {
    const double w = s / total;
    out.tp_rate += w * m.tp_rate;
    out.fp_rate += w * m.fp_rate;
    out.precision += w * m.precision;
    out.recall += w * m.recall;
    out.f_measure += w * m.f_measure;
    out.mcc += w * m.mcc;
    out.roc_area += w * m.roc_area;
    out.prc_area += w * m.prc_area;
    out.undefined_cells = out.undefined_cells || (s > 0.0 && m.undefined_cells);
  }
  return out;
}

/// A per-class metric table: NotMiner row, Miner row and the weighted average.
struct MetricTable {
  ConfusionMatrix matrix;  // oriented with Miner as the positive class
  ClassMetrics not_miner;
  ClassMetrics miner;
  ClassMetrics average;
  double accuracy = 0.0;
  std::size_t instances = 0;
};

/// Builds the table from truths, hard predictions and Miner scores. Score
/// areas need both classes present in `y_true`; otherwise they stay 0.
inline MetricTable metric_table(std::span<const Label> y_true, std::span<const Label> y_pred,
                                std::span<const double> miner_scores) {
  MetricTable t;
  t.matrix = confusion(y_true, y_pred, Label::Miner);
  t.instances = y_true.size();
  t.miner = class_metrics(t.matrix);
  t.not_miner = class_metrics(t.matrix.swapped());
  t.accuracy = accuracy(t.matrix);

  const bool both = t.matrix.tp + t.matrix.fn > 0 && t.matrix.tn + t.matrix.fp > 0;
  if (both) {
    std::vector<double> inverted(miner_scores.begin(), miner_scores.end());
    for (auto& s : inverted) s = 1.0 - s;
    t.miner.roc_area = roc_auc(miner_scores, y_true, Label::Miner);
    t.miner.prc_area = prc_auc(miner_scores, y_true, Label::Miner);
    t.not_miner.roc_area = roc_auc(inverted, y_true, Label::NotMiner);
    t.not_miner.prc_area = prc_auc(inverted, y_true, Label::NotMiner);
  }
  const std::pair<ClassMetrics, double> rows[] = {
      {t.not_miner, static_cast<double>(t.matrix.tn + t.matrix.fp)},
      {t.miner, static_cast<double>(t.matrix.tp + t.matrix.fn)}};
  t.average = weighted_average(rows);
  return t;
}

/// CSV with the columns Class, TP Rate, FP Rate, Precision, Recall,
/// F Measure, MCC, ROC Area, PRC Area and rows Not Miner, Miner, Avg.
inline std::string metric_table_csv(const MetricTable& t) {
  std::string out = "Class,TP Rate,FP Rate,Precision,Recall,F Measure,MCC,ROC Area,PRC Area\n";
  auto row = [&](const char* name, const ClassMetrics& m) {
    out += name;
    for (double v : {m.tp_rate, m.fp_rate, m.precision, m.recall, m.f_measure, m.mcc, m.roc_area, m.prc_area})
      out += ',' + text::format_double(v);
    out += '\n';
  };
  row("Not Miner", t.not_miner);
  row("Miner", t.miner);
  row("Avg.", t.average);
  return out;
}

}  // namespace minedetect

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsbn/errors.hpp"

namespace tsbn {

struct ConfusionCounts {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long total() const { return tp + fp + tn + fn; }
};

// A sample is predicted positive iff its score >= threshold.
inline ConfusionCounts confusion(const std::vector<double>& scores,
                                 const std::vector<int>& labels,
                                 double threshold = 0.5) {
  if (scores.size() != labels.size())
    throw InvalidInput("confusion: scores/labels length mismatch");
  if (scores.empty()) throw InvalidInput("confusion: empty input");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw InvalidInput("confusion: label outside {0,1}");
    bool pred = scores[i] >= threshold;
    if (labels[i] == 1)
      (pred ? c.tp : c.fn) += 1;
    else
      (pred ? c.fp : c.tn) += 1;
  }
  return c;
}

// Diagnostic metrics for one evaluation. Metrics whose denominator is
// zero are left unset rather than reported as 0, so degenerate folds are
// visible. ROC points are (FPR, TPR), from (0,0) to (1,1).
struct MetricsReport {
  std::optional<double> accuracy, sensitivity, specificity, youden, f1, auc;
  std::vector<std::pair<double, double>> roc;
  // Raw predictions kept for pooled cross-validation reporting.
  std::vector<double> scores;
  std::vector<int> labels;
};

inline MetricsReport compute_metrics(const ConfusionCounts& c) {
  if (c.total() < 1) throw InvalidInput("compute_metrics: empty counts");
  MetricsReport r;
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fn > 0)
    r.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (c.tn + c.fp > 0)
    r.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (r.sensitivity && r.specificity)
    r.youden = *r.sensitivity + *r.specificity - 1.0;
  if (2 * c.tp + c.fp + c.fn > 0)
    r.f1 = static_cast<double>(2 * c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return r;
}

// ROC by sweeping a threshold over the distinct scores (descending) and
// AUC as the rank statistic: the probability that a random positive
// outscores a random negative, ties counting one half. The rank form
// equals the trapezoidal area under the returned curve.
inline std::pair<std::vector<std::pair<double, double>>, double> roc_auc(
    const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw InvalidInput("roc_auc: scores/labels length mismatch");
  long pos = 0, neg = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw InvalidInput("roc_auc: label outside {0,1}");
    (y == 1 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0)
    throw UndefinedMetric("roc_auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  std::vector<std::pair<double, double>> roc;
  roc.reserve(scores.size() + 1);
  roc.emplace_back(0.0, 0.0);
  long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    roc.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                     static_cast<double>(tp) / static_cast<double>(pos));
  }

  // Mann-Whitney U via average ranks over the ascending order.
  std::vector<std::size_t> asc(order.rbegin(), order.rend());
  double rank_sum_pos = 0.0;
  std::size_t j = 0;
  while (j < asc.size()) {
    std::size_t k = j;
    double s = scores[asc[j]];
    while (k < asc.size() && scores[asc[k]] == s) ++k;
    double avg_rank = 0.5 * (static_cast<double>(j + 1) + static_cast<double>(k));
    for (std::size_t t = j; t < k; ++t)
      if (labels[asc[t]] == 1) rank_sum_pos += avg_rank;
    j = k;
  }
  double auc = (rank_sum_pos - 0.5 * static_cast<double>(pos) *
                                   static_cast<double>(pos + 1)) /
               (static_cast<double>(pos) * static_cast<double>(neg));
  return {std::move(roc), auc};
}

// Full evaluation of one prediction set at the given threshold.
inline MetricsReport evaluate_predictions(const std::vector<double>& scores,
                                          const std::vector<int>& labels,
                                          double threshold = 0.5) {
  MetricsReport r = compute_metrics(confusion(scores, labels, threshold));
  bool pos = false, neg = false;
  for (int y : labels) (y == 1 ? pos : neg) = true;
  if (pos && neg) {
    auto [roc, auc] = roc_auc(scores, labels);
    r.roc = std::move(roc);
    r.auc = auc;
  }
  r.scores = scores;
  r.labels = labels;
  return r;
}

struct FoldStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample std (N-1); 0 when only one defined fold
  int defined_folds = 0;
};

// Cross-validation aggregate: per-metric mean +/- std over the folds in
// which the metric was defined, plus a pooled report over the
// concatenated fold predictions (this is where the pooled F1 and the
// pooled ROC live).
struct CvReport {
  std::vector<MetricsReport> folds;
  std::map<std::string, FoldStat> stats;
  MetricsReport pooled;
};

inline CvReport aggregate_folds(const std::vector<MetricsReport>& folds) {
  if (folds.empty()) throw InvalidInput("aggregate_folds: empty fold list");
  if (folds.size() < 2)
    throw InvalidInput("aggregate_folds: need at least 2 folds");
  CvReport cv;
  cv.folds = folds;

  const std::pair<std::string, std::optional<double> MetricsReport::*> fields[] = {
      {"accuracy", &MetricsReport::accuracy},
      {"sensitivity", &MetricsReport::sensitivity},
      {"specificity", &MetricsReport::specificity},
      {"youden", &MetricsReport::youden},
      {"f1", &MetricsReport::f1},
      {"auc", &MetricsReport::auc},
  };
  for (const auto& [name, member] : fields) {
    std::vector<double> vals;
    for (const auto& f : folds)
      if (f.*member) vals.push_back(*(f.*member));
    if (vals.empty()) continue;
    FoldStat st;
    st.defined_folds = static_cast<int>(vals.size());
    st.mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
              static_cast<double>(vals.size());
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - st.mean) * (v - st.mean);
      st.stddev = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    }
    cv.stats[name] = st;
  }

  std::vector<double> all_scores;
  std::vector<int> all_labels;
  for (const auto& f : folds) {
    all_scores.insert(all_scores.end(), f.scores.begin(), f.scores.end());
    all_labels.insert(all_labels.end(), f.labels.begin(), f.labels.end());
  }
  if (!all_scores.empty())
    cv.pooled = evaluate_predictions(all_scores, all_labels);
  return cv;
}

}  // namespace tsbn

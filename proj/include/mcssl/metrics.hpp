#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mcssl/tensor.hpp"

namespace mcssl {

// All metric arithmetic is double precision regardless of model dtype.

// Non-interpolated average precision. Items are ranked by descending score
// with ties broken by original index (stable sort); AP accumulates
// precision-at-k over the positive ranks, which equals sum (R_k - R_{k-1}) P_k.
// Zero positives -> 0 (callers exclude such classes from mAP).
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<uint8_t>& targets) {
  if (scores.size() != targets.size())
    throw std::invalid_argument("average_precision: size mismatch");
  int64_t n = static_cast<int64_t>(scores.size());
  int64_t positives = 0;
  for (uint8_t t : targets) positives += t ? 1 : 0;
  if (positives == 0) return 0.0;
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
  });
  double ap = 0;
  int64_t hits = 0;
  for (int64_t k = 0; k < n; ++k) {
    if (!targets[static_cast<size_t>(order[static_cast<size_t>(k)])]) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return ap / static_cast<double>(positives);
}

struct MetricReport {
  double map = 0;  // mean of per-class AP over classes with >= 1 positive
  double cp = 0, cr = 0, cf1 = 0;  // macro precision / recall / F1
  double op = 0, or_ = 0, of1 = 0; // micro precision / recall / F1
  std::vector<double> per_class_ap;
  std::vector<uint8_t> class_has_positives;
};

inline double f1_of(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

// probs and targets are B x C; a prediction is positive when prob > threshold.
// CP/CR average per-class precision/recall (0 when a denominator is empty);
// OP/OR pool counts over all classes.
inline MetricReport multilabel_metrics(const TensorD& probs, const TensorD& targets,
                                       double threshold = 0.5) {
  if (!probs.same_shape(targets))
    throw std::invalid_argument("multilabel_metrics: shape mismatch");
  int64_t b = probs.rows(), c = probs.cols();
  MetricReport rep;
  rep.per_class_ap.resize(static_cast<size_t>(c), 0.0);
  rep.class_has_positives.resize(static_cast<size_t>(c), 0);
  double macro_p = 0, macro_r = 0;
  int64_t tp_all = 0, pred_all = 0, pos_all = 0;
  int64_t classes_with_pos = 0;
  double ap_sum = 0;
  std::vector<double> col_scores(static_cast<size_t>(b));
  std::vector<uint8_t> col_targets(static_cast<size_t>(b));
  for (int64_t j = 0; j < c; ++j) {
    int64_t tp = 0, pred = 0, pos = 0;
    for (int64_t i = 0; i < b; ++i) {
      bool t = targets.at(i, j) > 0.5;
      bool pr = probs.at(i, j) > threshold;
      col_scores[static_cast<size_t>(i)] = probs.at(i, j);
      col_targets[static_cast<size_t>(i)] = t ? 1 : 0;
      tp += (t && pr) ? 1 : 0;
      pred += pr ? 1 : 0;
      pos += t ? 1 : 0;
    }
    macro_p += pred > 0 ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
    macro_r += pos > 0 ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
    tp_all += tp;
    pred_all += pred;
    pos_all += pos;
    double ap = average_precision(col_scores, col_targets);
    rep.per_class_ap[static_cast<size_t>(j)] = ap;
    if (pos > 0) {
      rep.class_has_positives[static_cast<size_t>(j)] = 1;
      ++classes_with_pos;
      ap_sum += ap;
    }
  }
  rep.cp = c > 0 ? macro_p / static_cast<double>(c) : 0.0;
  rep.cr = c > 0 ? macro_r / static_cast<double>(c) : 0.0;
  rep.cf1 = f1_of(rep.cp, rep.cr);
  rep.op = pred_all > 0 ? static_cast<double>(tp_all) / static_cast<double>(pred_all) : 0.0;
  rep.or_ = pos_all > 0 ? static_cast<double>(tp_all) / static_cast<double>(pos_all) : 0.0;
  rep.of1 = f1_of(rep.op, rep.or_);
  rep.map = classes_with_pos > 0 ? ap_sum / static_cast<double>(classes_with_pos) : 0.0;
  return rep;
}

// Fraction of rows whose argmax equals the label; first index wins ties.
inline double top1_accuracy(const TensorD& logits, const std::vector<int64_t>& labels) {
  if (logits.rows() != static_cast<int64_t>(labels.size()))
    throw std::invalid_argument("top1_accuracy: row/label count mismatch");
  if (logits.rows() == 0) return 0.0;
  int64_t correct = 0;
  for (int64_t i = 0; i < logits.rows(); ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    correct += best == labels[static_cast<size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace mcssl

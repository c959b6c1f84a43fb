#pragma once

// Detection metrics (AUROC, F1) and the geometric diagnostics: normalized
// centroid shift and linear CKA against one-hot label encodings.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "orthoprobe/common.hpp"

namespace orthoprobe {

// Mann-Whitney form: P(score_pos > score_neg) + 0.5 P(tie), via mid-ranks.
// Ranks are kept doubled so the U statistic is an exact integer.
inline double auroc(std::span<const double> scores, Labels labels) {
  if (scores.size() != labels.size()) throw ContractError("auroc: score/label length mismatch");
  require_both_classes<MetricError>(labels, "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::int64_t twice_rank_sum_pos = 0;
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // 1-based ranks i+1 .. j+1 share the mid-rank (i + j + 2) / 2
    const auto twice_mid = static_cast<std::int64_t>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) {
        twice_rank_sum_pos += twice_mid;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  const std::int64_t twice_u = twice_rank_sum_pos - n_pos * (n_pos + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * n_pos * n_neg);
}

struct BinaryCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct EvalReport {
  double auroc = 0.5;
  double f1 = 0.0;
  double threshold = 0.5;
  BinaryCounts counts;
  std::size_t num_samples = 0;
};

inline constexpr double kDefaultF1Threshold = 0.5;

// Predicted positive iff score >= threshold. F1 = 2TP / (2TP + FP + FN),
// 0 when the denominator vanishes.
inline EvalReport f1_at_threshold(std::span<const double> scores, Labels labels, double threshold = kDefaultF1Threshold) {
  if (scores.size() != labels.size()) throw ContractError("f1: score/label length mismatch");
  EvalReport r;
  r.threshold = threshold;
  r.num_samples = scores.size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++r.counts.tp;
    else if (pred) ++r.counts.fp;
    else if (truth) ++r.counts.fn;
    else ++r.counts.tn;
  }
  const auto den = 2 * r.counts.tp + r.counts.fp + r.counts.fn;
  r.f1 = den == 0 ? 0.0 : 2.0 * static_cast<double>(r.counts.tp) / static_cast<double>(den);
  return r;
}

inline EvalReport evaluate_scores(std::span<const double> scores, Labels labels, double threshold = kDefaultF1Threshold) {
  EvalReport r = f1_at_threshold(scores, labels, threshold);
  r.auroc = auroc(scores, labels);
  return r;
}

inline constexpr double kSigmaFloor = 1e-8;

// |mu_src - mu_tgt| / sigma_bar, where sigma_bar is the mean over dimensions
// of the per-dimension population std of the concatenated sample.
inline double centroid_shift(const LayerRef& src, const LayerRef& tgt) {
  if (src.rows() == 0 || tgt.rows() == 0) throw ContractError("centroid_shift: both sets must be non-empty");
  if (src.cols() != tgt.cols()) throw ContractError("centroid_shift: dimension mismatch");
  const Eigen::Index d = src.cols();
  const double ns = static_cast<double>(src.rows());
  const double nt = static_cast<double>(tgt.rows());
  Eigen::VectorXd mu_s = Eigen::VectorXd::Zero(d), mu_t = Eigen::VectorXd::Zero(d);
  for (Eigen::Index i = 0; i < src.rows(); ++i) mu_s += src.row(i).transpose().cast<double>();
  for (Eigen::Index i = 0; i < tgt.rows(); ++i) mu_t += tgt.row(i).transpose().cast<double>();
  mu_s /= ns;
  mu_t /= nt;
  const Eigen::VectorXd pooled_mean = (mu_s * ns + mu_t * nt) / (ns + nt);
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(d);
  auto accumulate = [&](const LayerRef& x) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) ss += (x.row(i).transpose().cast<double>() - pooled_mean).cwiseAbs2();
  };
  accumulate(src);
  accumulate(tgt);
  const double sigma_bar = std::max((ss / (ns + nt)).cwiseSqrt().mean(), kSigmaFloor);
  return (mu_s - mu_t).norm() / sigma_bar;
}

namespace detail {

inline Eigen::MatrixXd centered(const Eigen::MatrixXd& x) { return x.rowwise() - x.colwise().mean(); }

// |A' B|_F^2 computed on whichever side is smaller.
inline double cross_frobenius_sq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() * b.cols() <= a.rows() * (a.cols() + b.cols())) return (a.transpose() * b).squaredNorm();
  // |A'B|_F^2 = tr(A A' B B')
  const Eigen::MatrixXd ka = a * a.transpose();
  const Eigen::MatrixXd kb = b * b.transpose();
  return (ka.array() * kb.array()).sum();
}

}  // namespace detail

// |Xc' Yc|_F^2 / (|Xc' Xc|_F |Yc' Yc|_F), columns centered.
inline double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) throw ContractError("linear_cka: row counts differ");
  if (x.rows() < 2) throw MetricError("linear_cka: need at least 2 samples");
  const Eigen::MatrixXd xc = detail::centered(x);
  const Eigen::MatrixXd yc = detail::centered(y);
  const double xx = std::sqrt(detail::cross_frobenius_sq(xc, xc));
  const double yy = std::sqrt(detail::cross_frobenius_sq(yc, yc));
  if (!(xx > 0.0) || !(yy > 0.0)) throw MetricError("linear_cka: zero-variance input");
  const double xy = detail::cross_frobenius_sq(xc, yc);
  return std::clamp(xy / (xx * yy), 0.0, 1.0);
}

inline double linear_cka(const LayerRef& x, const Eigen::MatrixXd& y) { return linear_cka(Eigen::MatrixXd(x.cast<double>()), y); }

// One column per distinct value, in ascending value order.
inline Eigen::MatrixXd one_hot(std::span<const int> values) {
  std::map<int, Eigen::Index> column;
  for (int v : values) column.emplace(v, 0);
  Eigen::Index next = 0;
  for (auto& [v, c] : column) c = next++;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(values.size()), next);
  for (std::size_t i = 0; i < values.size(); ++i) out(static_cast<Eigen::Index>(i), column[values[i]]) = 1.0;
  return out;
}

inline Eigen::MatrixXd one_hot(Labels labels) {
  std::vector<int> v(labels.begin(), labels.end());
  return one_hot(std::span<const int>(v));
}

struct CkaCell {
  std::string representation;
  std::string regime;
  double cka_hall = 0.0;
  double cka_domain = 0.0;
  std::optional<double> selectivity;  // hall / domain, when domain > 0
  std::size_t num_features = 0;
};

struct CkaInput {
  std::string representation;
  std::string regime;
  Eigen::MatrixXd features;
};

inline std::vector<CkaCell> cka_alignment_suite(const std::vector<CkaInput>& inputs, std::span<const int> hall_labels,
                                                std::span<const int> domain_labels) {
  const Eigen::MatrixXd yh = one_hot(hall_labels);
  const Eigen::MatrixXd yd = one_hot(domain_labels);
  std::vector<CkaCell> cells;
  for (const auto& in : inputs) {
    CkaCell c{in.representation, in.regime, linear_cka(in.features, yh), linear_cka(in.features, yd), std::nullopt,
              static_cast<std::size_t>(in.features.cols())};
    if (c.cka_domain > 0.0) c.selectivity = c.cka_hall / c.cka_domain;
    cells.push_back(std::move(c));
  }
  return cells;
}

}  // namespace orthoprobe

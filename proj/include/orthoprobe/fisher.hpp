#pragma once

// Fisher-criterion scoring of layers and neurons, Diversity-Penalized Fisher
// (DPF) greedy layer selection, the cumulative-alpha neuron rule, and
// the baseline layer-selection strategies used by the ablation.
//
// All statistics use the diagonal (per-dimension) variance approximation and
// population variances, accumulated in float64.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "orthoprobe/common.hpp"
#include "orthoprobe/representations.hpp"

namespace orthoprobe {

inline constexpr double kFisherEpsilon = 1e-8;

struct ClassStats {
  std::vector<double> mu0, mu1;
  std::vector<double> var0, var1;
  std::size_t n0 = 0;
  std::size_t n1 = 0;
};

inline ClassStats fit_class_stats(const LayerRef& x, Labels labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ContractError("fit_class_stats: label count != row count");
  require_both_classes<StatisticsError>(labels, "fit_class_stats");
  const auto d = static_cast<std::size_t>(x.cols());
  ClassStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), std::vector<double>(d, 0.0),
               std::vector<double>(d, 0.0), 0, 0};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto& mu = labels[static_cast<std::size_t>(i)] ? s.mu1 : s.mu0;
    (labels[static_cast<std::size_t>(i)] ? s.n1 : s.n0)++;
    for (std::size_t j = 0; j < d; ++j) mu[j] += x(i, static_cast<Eigen::Index>(j));
  }
  for (std::size_t j = 0; j < d; ++j) {
    s.mu0[j] /= static_cast<double>(s.n0);
    s.mu1[j] /= static_cast<double>(s.n1);
  }
  // two-pass variance
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const bool pos = labels[static_cast<std::size_t>(i)] != 0;
    const auto& mu = pos ? s.mu1 : s.mu0;
    auto& var = pos ? s.var1 : s.var0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dev = x(i, static_cast<Eigen::Index>(j)) - mu[j];
      var[j] += dev * dev;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    s.var0[j] /= static_cast<double>(s.n0);
    s.var1[j] /= static_cast<double>(s.n1);
  }
  return s;
}

// |mu1 - mu0|^2 / (sum_j var1_j + sum_j var0_j + epsilon).
// With epsilon = 0 and zero variance, returns +inf when the means differ.
inline double fisher_score(const ClassStats& s, double epsilon = kFisherEpsilon) {
  double num = 0.0;
  double den = epsilon;
  for (std::size_t j = 0; j < s.mu0.size(); ++j) {
    const double diff = s.mu1[j] - s.mu0[j];
    num += diff * diff;
    den += s.var0[j] + s.var1[j];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

inline std::vector<double> neuron_fisher_scores(const ClassStats& s, double epsilon = kFisherEpsilon) {
  std::vector<double> f(s.mu0.size());
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double diff = s.mu1[j] - s.mu0[j];
    const double den = s.var1[j] + s.var0[j] + epsilon;
    f[j] = den == 0.0 ? (diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity()) : diff * diff / den;
  }
  return f;
}

inline std::vector<double> neuron_fisher_scores(const LayerRef& x, Labels labels, double epsilon = kFisherEpsilon) {
  return neuron_fisher_scores(fit_class_stats(x, labels), epsilon);
}

// Smallest score-descending prefix whose cumulative score reaches
// alpha * total. Ties rank the lower index first. Returned ascending.
inline std::vector<std::uint32_t> alpha_threshold_select(std::span<const double> f, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("alpha must lie in (0, 1]");
  std::vector<std::uint32_t> order(f.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return f[a] > f[b]; });
  double total = 0.0;
  for (auto j : order) {
    if (!(f[j] >= 0.0) || std::isinf(f[j])) throw SelectionError("neuron scores must be finite and non-negative");
    total += f[j];
  }
  if (!(total > 0.0)) throw SelectionError("all neuron Fisher scores are zero; nothing to select");
  const double target = alpha * total;
  std::vector<std::uint32_t> chosen;
  double cum = 0.0;
  for (auto j : order) {
    chosen.push_back(j);
    cum += f[j];
    if (cum >= target) break;
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

struct LayerScoreTable {
  FeatureSet feature_set = FeatureSet::Orthogonal;
  std::vector<double> scores;                        // Score(l), one per layer
  std::vector<std::vector<double>> mean_directions;  // label-pooled mean of the penalty source at l
};

inline std::vector<double> column_means(const LayerRef& x) {
  std::vector<double> m(static_cast<std::size_t>(x.cols()), 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) m[static_cast<std::size_t>(j)] += x(i, j);
  for (auto& v : m) v /= static_cast<double>(x.rows());
  return m;
}

// Score(l) is the mean Fisher score over the feature set's sources: F(v_perp)
// for the orthogonal set, (F(hQ) + F(v_perp)) / 2 for the joint set.
inline LayerScoreTable score_layers(const RepresentationBank& bank, Labels labels, FeatureSet fs,
                                    double epsilon = kFisherEpsilon) {
  const auto layout = slot_layout(fs);
  const auto sources = layout.sources();
  LayerScoreTable t;
  t.feature_set = fs;
  t.scores.reserve(bank.num_layers());
  t.mean_directions.reserve(bank.num_layers());
  for (std::size_t l = 0; l < bank.num_layers(); ++l) {
    double sum = 0.0;
    for (auto src : sources) sum += fisher_score(fit_class_stats(bank.view(src, l), labels), epsilon);
    t.scores.push_back(sum / static_cast<double>(sources.size()));
    t.mean_directions.push_back(column_means(bank.view(layout.penalty_source(), l)));
  }
  return t;
}

inline double abs_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::min(1.0, std::abs(ab) / std::sqrt(aa * bb));
}

// Greedy DPF: each step picks argmax Score(l) * (1 - lambda * max_s |cos|)
// over unselected layers; ties go to the lower layer index. Returned in pick
// order.
inline std::vector<std::size_t> dpf_select(const LayerScoreTable& t, std::size_t k, double lambda) {
  const std::size_t num_layers = t.scores.size();
  if (k == 0 || k > num_layers) {
    throw ContractError("dpf_select: K = " + std::to_string(k) + " outside [1, " + std::to_string(num_layers) + "]");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("dpf_select: lambda must lie in [0, 1]");
  if (t.mean_directions.size() != num_layers) throw ContractError("dpf_select: missing mean directions");

  std::vector<std::size_t> picked;
  std::vector<bool> taken(num_layers, false);
  std::vector<double> max_cos(num_layers, 0.0);
  while (picked.size() < k) {
    std::size_t best = num_layers;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < num_layers; ++l) {
      if (taken[l]) continue;
      const double s = picked.empty() ? t.scores[l] : t.scores[l] * (1.0 - lambda * max_cos[l]);
      if (s > best_score) {
        best_score = s;
        best = l;
      }
    }
    if (best == num_layers) {  // every candidate scored NaN (inf * 0)
      best = static_cast<std::size_t>(std::find(taken.begin(), taken.end(), false) - taken.begin());
    }
    taken[best] = true;
    picked.push_back(best);
    for (std::size_t l = 0; l < num_layers; ++l) {
      if (!taken[l]) max_cos[l] = std::max(max_cos[l], abs_cosine(t.mean_directions[l], t.mean_directions[best]));
    }
  }
  return picked;
}

// ---- baseline layer-selection strategies -----------------------------------

enum class LayerStrategy : std::uint8_t { Dpf, PureFisher, LastN, Uniform, Random };

inline std::string_view layer_strategy_name(LayerStrategy s) {
  switch (s) {
    case LayerStrategy::Dpf: return "dpf";
    case LayerStrategy::PureFisher: return "pure-fisher";
    case LayerStrategy::LastN: return "last-n";
    case LayerStrategy::Uniform: return "uniform";
    case LayerStrategy::Random: return "random";
  }
  return "?";
}

inline LayerStrategy parse_layer_strategy(std::string_view s) {
  for (auto v : {LayerStrategy::Dpf, LayerStrategy::PureFisher, LayerStrategy::LastN, LayerStrategy::Uniform, LayerStrategy::Random}) {
    if (layer_strategy_name(v) == s) return v;
  }
  throw ConfigError("unknown layer strategy '" + std::string(s) + "'");
}

inline void check_budget(std::size_t k, std::size_t num_layers) {
  if (k == 0 || k > num_layers) {
    throw ContractError("layer budget K = " + std::to_string(k) + " outside [1, " + std::to_string(num_layers) + "]");
  }
}

inline std::vector<std::size_t> last_n_layers(std::size_t num_layers, std::size_t k) {
  check_budget(k, num_layers);
  std::vector<std::size_t> out(k);
  std::iota(out.begin(), out.end(), num_layers - k);
  return out;
}

// round(i * (L - 1) / (K - 1)); L = 40, K = 5 gives [0, 10, 20, 29, 39].
inline std::vector<std::size_t> uniform_layers(std::size_t num_layers, std::size_t k) {
  check_budget(k, num_layers);
  if (k == 1) return {0};
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back(static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(num_layers - 1) / static_cast<double>(k - 1))));
  }
  return out;
}

inline std::vector<std::size_t> random_layers(std::size_t num_layers, std::size_t k, std::uint64_t seed) {
  check_budget(k, num_layers);
  std::vector<std::size_t> all(num_layers);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace orthoprobe

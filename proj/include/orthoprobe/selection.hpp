#pragma once

// Single-pass fit of the selection state on training data: layer scoring,
// layer choice, per-layer neuron sets, standardization statistics.

#include <algorithm>
#include <vector>

#include "orthoprobe/artifact.hpp"
#include "orthoprobe/features.hpp"
#include "orthoprobe/fisher.hpp"

namespace orthoprobe {

inline std::vector<std::size_t> choose_layers(const LayerScoreTable& table, const SelectionConfig& cfg, std::size_t k) {
  const std::size_t num_layers = table.scores.size();
  switch (cfg.layer_strategy) {
    case LayerStrategy::Dpf: return dpf_select(table, k, cfg.lambda);
    case LayerStrategy::PureFisher: return dpf_select(table, k, 0.0);
    case LayerStrategy::LastN: return last_n_layers(num_layers, k);
    case LayerStrategy::Uniform: return uniform_layers(num_layers, k);
    case LayerStrategy::Random: return random_layers(num_layers, k, derive_seed(cfg.seed, 0x6c617972ULL));
  }
  throw ContractError("unknown layer strategy");
}

// `bank` must hold training samples only. The budget K is clamped to L.
inline SelectionArtifact fit_selection(const RepresentationBank& bank, const SelectionConfig& cfg) {
  const Labels labels = bank.labels();
  require_both_classes<StatisticsError>(labels, "fit_selection");
  if (cfg.k == 0) throw ConfigError("layer budget K must be >= 1");
  if (needs_random_projection(cfg.feature_set) && bank.num_layers() > 0) {
    (void)bank.view(FeatureSource::RandomOrthogonal, 0);  // throws if the bank was built without them
  }

  SelectionArtifact a;
  a.config = cfg;
  a.num_layers = bank.num_layers();
  a.hidden_dim = bank.hidden_dim();

  const auto table = score_layers(bank, labels, cfg.feature_set, cfg.epsilon);
  a.layer_scores = table.scores;
  const std::size_t k = std::min(cfg.k, bank.num_layers());

  const auto layout = slot_layout(cfg.feature_set);
  for (std::size_t l : choose_layers(table, cfg, k)) {
    SelectedLayer s;
    s.layer = l;
    if (layout.question_slot) {
      const auto f = neuron_fisher_scores(bank.view(*layout.question_slot, l), labels, cfg.epsilon);
      s.q_neurons = alpha_threshold_select(f, cfg.alpha);
    }
    if (layout.deviation_slot) {
      const auto f = neuron_fisher_scores(bank.view(*layout.deviation_slot, l), labels, cfg.epsilon);
      s.v_neurons = alpha_threshold_select(f, cfg.alpha);
    }
    a.layers.push_back(std::move(s));
  }

  column_mean_std(gather_raw(bank, a), a.feature_mean, a.feature_std);
  a.validate();
  return a;
}

}  // namespace orthoprobe

#pragma once

// Synthetic hidden states with planted geometry.
//
// Per layer l and sample i (domain k, label y):
//   hQ     = m_common + shift * m_k + question_spread * z
//   h_par* = question_norm * (align_base + shift * (g_k + align_jitter * zeta)) * hQ/|hQ|
//   s      = signal_strength * (2y - 1) * w/|w|,  w = u - (u.hQ_S / |hQ_S|^2) hQ_S
//   hA     = h_par* + s + noise_std * eps
//
// m_common and m_k have norm question_norm; g_k ~ N(0, 1) is a per-domain
// offset of the question-aligned coefficient; u is a fixed unit vector on the
// layer's signal neurons S and hQ_S is hQ restricted to S, so s is supported
// on S and exactly orthogonal to hQ. Domain variation therefore lives along
// the question direction, and with shift = 0 every domain has the same
// distribution.
//
// Random draws do not depend on the strengths: changing signal_strength or
// noise_std under one seed rescales the same underlying noise.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoprobe/dataset.hpp"

namespace orthoprobe {

struct SynthConfig {
  std::size_t num_samples = 2000;
  std::size_t num_layers = 12;
  std::size_t hidden_dim = 64;
  std::vector<std::size_t> signal_layers;               // default {L/6, 7L/12}
  std::vector<std::vector<std::uint32_t>> signal_neurons;  // default: drawn per layer
  std::size_t neurons_per_signal_layer = 10;
  double signal_strength = 0.7;
  double domain_shift_strength = 1.0;
  double noise_std = 0.7;
  double hallucination_rate = 0.5;
  std::size_t num_domains = 4;
  std::uint64_t seed = 42;

  double question_norm = 4.0;
  double question_spread = 1.0;
  double align_base = 1.0;
  double align_jitter = 1.0;
  std::string model_name = "synthetic";
};

struct SynthGroundTruth {
  std::vector<std::size_t> signal_layers;
  std::vector<std::vector<std::uint32_t>> signal_neurons;  // parallel to signal_layers
  std::vector<std::vector<double>> signal_directions;      // u per signal layer (length d)
  std::vector<LayerMatrix> planted_signal;               // s per signal layer, N x d
  LayerMatrix aligned_coefficient;                       // N x L planted coefficient of hQ/|hQ|

  // Position of `layer` in signal_layers, or npos.
  std::size_t signal_slot(std::size_t layer) const {
    auto it = std::find(signal_layers.begin(), signal_layers.end(), layer);
    return it == signal_layers.end() ? static_cast<std::size_t>(-1) : static_cast<std::size_t>(it - signal_layers.begin());
  }
};

struct SynthResult {
  HiddenStateDataset dataset;
  SynthGroundTruth truth;
};

// Fills defaults and checks ranges; throws ConfigError.
inline SynthConfig resolve_synth_config(SynthConfig c) {
  if (c.num_samples == 0 || c.num_layers == 0 || c.hidden_dim == 0) throw ConfigError("synth: N, L and d must be positive");
  if (c.num_domains == 0 || c.num_domains > 256) throw ConfigError("synth: num_domains must lie in [1, 256]");
  if (!(c.hallucination_rate > 0.0 && c.hallucination_rate < 1.0)) throw ConfigError("synth: hallucination_rate must lie in (0, 1)");
  if (c.signal_strength < 0.0 || c.domain_shift_strength < 0.0 || c.noise_std < 0.0 || c.question_spread < 0.0 ||
      c.align_jitter < 0.0 || !(c.question_norm > 0.0)) {
    throw ConfigError("synth: strengths and scales must be non-negative");
  }
  if (c.signal_layers.empty()) {
    std::set<std::size_t> pick = {c.num_layers / 6, (7 * c.num_layers) / 12};
    c.signal_layers.assign(pick.begin(), pick.end());
  }
  std::set<std::size_t> uniq(c.signal_layers.begin(), c.signal_layers.end());
  if (uniq.size() != c.signal_layers.size()) throw ConfigError("synth: duplicate signal layer");
  for (auto l : c.signal_layers) {
    if (l >= c.num_layers) throw ConfigError("synth: signal layer " + std::to_string(l) + " out of range");
  }
  if (c.hidden_dim < 2) throw ConfigError("synth: orthogonal planting needs d >= 2");
  if (c.signal_neurons.empty()) {
    const std::size_t m = std::min(c.neurons_per_signal_layer, c.hidden_dim);
    for (std::size_t s = 0; s < c.signal_layers.size(); ++s) {
      std::vector<std::uint32_t> all(c.hidden_dim);
      std::iota(all.begin(), all.end(), 0u);
      Rng rng(derive_seed(c.seed, 0x6e6575ULL, c.signal_layers[s]));
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(m);
      std::sort(all.begin(), all.end());
      c.signal_neurons.push_back(std::move(all));
    }
  }
  if (c.signal_neurons.size() != c.signal_layers.size()) throw ConfigError("synth: one neuron set per signal layer required");
  for (auto& set : c.signal_neurons) {
    std::sort(set.begin(), set.end());
    if (std::adjacent_find(set.begin(), set.end()) != set.end()) throw ConfigError("synth: duplicate signal neuron");
    if (set.size() < 2) throw ConfigError("synth: orthogonal planting needs >= 2 signal neurons per layer");
    if (set.back() >= c.hidden_dim) throw ConfigError("synth: signal neuron out of range");
  }
  return c;
}

inline SynthResult generate(const SynthConfig& raw) {
  const SynthConfig c = resolve_synth_config(raw);
  const std::size_t n = c.num_samples, num_layers = c.num_layers, d = c.hidden_dim, nd = c.num_domains;

  SynthResult r;
  auto& ds = r.dataset;
  ds.model_name = c.model_name;
  ds.num_samples = n;
  ds.num_layers = num_layers;
  ds.hidden_dim = d;
  ds.labels.resize(n);
  ds.domain_ids.resize(n);
  ds.hq.assign(n * num_layers * d, 0.0f);
  ds.ha.assign(n * num_layers * d, 0.0f);

  auto& gt = r.truth;
  gt.signal_layers = c.signal_layers;
  gt.signal_neurons = c.signal_neurons;
  gt.aligned_coefficient = LayerMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(num_layers));
  for (std::size_t s = 0; s < c.signal_layers.size(); ++s) {
    gt.planted_signal.push_back(LayerMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)));
  }

  // Layer structure: common question mean, per-domain offsets, signal direction.
  std::normal_distribution<double> normal(0.0, 1.0);
  auto scaled_gaussian = [&](Rng& rng, double norm) {
    std::vector<double> v(d);
    double n2 = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      n2 += x * x;
    }
    for (auto& x : v) x *= norm / std::sqrt(n2);
    return v;
  };
  std::vector<std::vector<double>> common(num_layers);
  std::vector<std::vector<std::vector<double>>> domain_offset(num_layers);
  std::vector<std::vector<double>> domain_coef(num_layers);
  gt.signal_directions.resize(c.signal_layers.size());
  for (std::size_t l = 0; l < num_layers; ++l) {
    Rng rng(derive_seed(c.seed, 0x4c4159ULL, l));
    common[l] = scaled_gaussian(rng, c.question_norm);
    for (std::size_t k = 0; k < nd; ++k) domain_offset[l].push_back(scaled_gaussian(rng, c.question_norm));
    for (std::size_t k = 0; k < nd; ++k) domain_coef[l].push_back(normal(rng));
    const std::size_t slot = gt.signal_slot(l);
    if (slot != static_cast<std::size_t>(-1)) {
      std::vector<double> u(d, 0.0);
      double n2 = 0.0;
      // random signs, comparable magnitudes: every planted neuron carries real Fisher mass
      for (auto j : c.signal_neurons[slot]) {
        u[j] = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * (0.75 + 0.5 * uniform01(rng));
        n2 += u[j] * u[j];
      }
      for (auto& x : u) x /= std::sqrt(n2);
      gt.signal_directions[slot] = std::move(u);
    }
  }

  std::vector<double> q(d), a(d);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(c.seed, 0x53414dULL, i));
    const std::size_t k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(nd)) % nd;
    const int y = uniform01(rng) < c.hallucination_rate ? 1 : 0;
    ds.labels[i] = static_cast<std::uint8_t>(y);
    ds.domain_ids[i] = static_cast<std::uint8_t>(k);
    for (std::size_t l = 0; l < num_layers; ++l) {
      double qq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        q[j] = common[l][j] + c.domain_shift_strength * domain_offset[l][k][j] + c.question_spread * normal(rng);
        qq += q[j] * q[j];
      }
      const double qnorm = std::sqrt(qq);
      const double zeta = normal(rng);
      const double coef = c.question_norm * (c.align_base + c.domain_shift_strength * (domain_coef[l][k] + c.align_jitter * zeta));
      gt.aligned_coefficient(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = static_cast<float>(coef);
      for (std::size_t j = 0; j < d; ++j) a[j] = coef * q[j] / qnorm + c.noise_std * normal(rng);

      const std::size_t slot = gt.signal_slot(l);
      if (slot != static_cast<std::size_t>(-1)) {
        const auto& u = gt.signal_directions[slot];
        const auto& support = c.signal_neurons[slot];
        double uq = 0.0, qs2 = 0.0;
        for (auto j : support) {
          uq += u[j] * q[j];
          qs2 += q[j] * q[j];
        }
        std::vector<double> w(support.size());
        double w2 = 0.0;
        for (std::size_t t = 0; t < support.size(); ++t) {
          const auto j = support[t];
          w[t] = u[j] - (qs2 > 0.0 ? uq / qs2 : 0.0) * q[j];
          w2 += w[t] * w[t];
        }
        if (w2 > 0.0) {
          const double scale = c.signal_strength * (2.0 * y - 1.0) / std::sqrt(w2);
          for (std::size_t t = 0; t < support.size(); ++t) {
            const double s = scale * w[t];
            a[support[t]] += s;
            gt.planted_signal[slot](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(support[t])) = static_cast<float>(s);
          }
        }
      }
      const std::size_t off = ds.offset(i, l);
      for (std::size_t j = 0; j < d; ++j) {
        ds.hq[off + j] = static_cast<float>(q[j]);
        ds.ha[off + j] = static_cast<float>(a[j]);
      }
    }
  }
  return r;
}

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"num_samples", c.num_samples},
          {"num_layers", c.num_layers},
          {"hidden_dim", c.hidden_dim},
          {"signal_layers", c.signal_layers},
          {"signal_neurons", c.signal_neurons},
          {"signal_strength", format_exact(c.signal_strength)},
          {"domain_shift_strength", format_exact(c.domain_shift_strength)},
          {"noise_std", format_exact(c.noise_std)},
          {"hallucination_rate", format_exact(c.hallucination_rate)},
          {"num_domains", c.num_domains},
          {"seed", c.seed},
          {"question_norm", format_exact(c.question_norm)},
          {"question_spread", format_exact(c.question_spread)},
          {"align_base", format_exact(c.align_base)},
          {"align_jitter", format_exact(c.align_jitter)},
          {"model_name", c.model_name}};
}

// Planted layers/neurons plus a digest of the planted components.
inline nlohmann::json ground_truth_json(const SynthConfig& raw, const SynthGroundTruth& gt) {
  const SynthConfig c = resolve_synth_config(raw);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t s = 0; s < gt.signal_layers.size(); ++s) {
    const auto& m = gt.planted_signal[s];
    const std::string_view bytes(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
    nlohmann::json dir = nlohmann::json::array();
    for (auto j : gt.signal_neurons[s]) dir.push_back(format_exact(gt.signal_directions[s][j]));
    layers.push_back({{"layer", gt.signal_layers[s]},
                      {"neurons", gt.signal_neurons[s]},
                      {"direction_on_neurons", dir},
                      {"planted_signal_fnv1a", hex64(fnv1a(bytes))},
                      {"planted_signal_mean_norm", format_exact(static_cast<double>(m.rowwise().norm().mean()))}});
  }
  const std::string_view coef(reinterpret_cast<const char*>(gt.aligned_coefficient.data()),
                              static_cast<std::size_t>(gt.aligned_coefficient.size()) * sizeof(float));
  return {{"format", "orthoprobe-synth-truth"},
          {"config", to_json(c)},
          {"signal", layers},
          {"aligned_coefficient_fnv1a", hex64(fnv1a(coef))}};
}

}  // namespace orthoprobe

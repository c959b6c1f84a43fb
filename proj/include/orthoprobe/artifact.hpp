#pragma once

// Fitted selection state and its JSON form. Floating-point arrays are written
// as shortest round-trip decimal strings so a reload is exact.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoprobe/dataset.hpp"
#include "orthoprobe/fisher.hpp"
#include "orthoprobe/representations.hpp"

namespace orthoprobe {

struct SelectionConfig {
  std::size_t k = 15;
  double lambda = 1.0;
  double alpha = 0.9;
  double epsilon = kFisherEpsilon;
  FeatureSet feature_set = FeatureSet::Orthogonal;
  LayerStrategy layer_strategy = LayerStrategy::Dpf;
  std::uint64_t seed = 42;
};

struct SelectedLayer {
  std::size_t layer = 0;
  std::vector<std::uint32_t> q_neurons;  // N_Q; empty when the set has no question slot
  std::vector<std::uint32_t> v_neurons;  // N_v (deviation slot)
};

struct SelectionArtifact {
  SelectionConfig config;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::vector<double> layer_scores;   // Score(l) over all layers
  std::vector<SelectedLayer> layers;  // pick order
  std::vector<double> feature_mean;   // per assembled column
  std::vector<double> feature_std;    // per assembled column, floored

  std::vector<std::size_t> layer_indices() const {
    std::vector<std::size_t> out;
    for (const auto& s : layers) out.push_back(s.layer);
    return out;
  }

  std::size_t num_features() const {
    std::size_t n = 0;
    for (const auto& s : layers) n += s.q_neurons.size() + s.v_neurons.size();
    return n;
  }

  void validate() const {
    const auto layout = slot_layout(config.feature_set);
    std::vector<bool> seen(num_layers, false);
    for (const auto& s : layers) {
      if (s.layer >= num_layers || seen[s.layer]) throw ValidationError("artifact: layer index duplicated or out of range");
      seen[s.layer] = true;
      auto check = [&](const std::vector<std::uint32_t>& set, bool used, const char* name) {
        if (used && set.empty()) throw ValidationError(std::string("artifact: empty ") + name + " neuron set");
        if (!used && !set.empty()) throw ValidationError(std::string("artifact: unexpected ") + name + " neuron set");
        for (std::size_t k = 0; k < set.size(); ++k) {
          if (set[k] >= hidden_dim || (k > 0 && set[k] <= set[k - 1])) {
            throw ValidationError(std::string("artifact: ") + name + " neuron indices must be ascending and < d");
          }
        }
      };
      check(s.q_neurons, layout.question_slot.has_value(), "Q");
      check(s.v_neurons, layout.deviation_slot.has_value(), "deviation");
    }
    if (feature_mean.size() != num_features() || feature_std.size() != num_features()) {
      throw ValidationError("artifact: standardization arrays do not match the feature count");
    }
  }
};

namespace detail {

inline nlohmann::json exact_array(const std::vector<double>& v) {
  auto arr = nlohmann::json::array();
  for (double x : v) arr.push_back(format_exact(x));
  return arr;
}

inline std::vector<double> parse_exact_array(const nlohmann::json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(parse_exact(x.get<std::string>()));
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const SelectionConfig& c) {
  return {{"k", c.k},
          {"lambda", format_exact(c.lambda)},
          {"alpha", format_exact(c.alpha)},
          {"epsilon", format_exact(c.epsilon)},
          {"feature_set", feature_set_name(c.feature_set)},
          {"layer_strategy", layer_strategy_name(c.layer_strategy)},
          {"seed", c.seed}};
}

inline SelectionConfig selection_config_from_json(const nlohmann::json& j) {
  SelectionConfig c;
  c.k = j.at("k").get<std::size_t>();
  c.lambda = parse_exact(j.at("lambda").get<std::string>());
  c.alpha = parse_exact(j.at("alpha").get<std::string>());
  c.epsilon = parse_exact(j.at("epsilon").get<std::string>());
  c.feature_set = parse_feature_set(j.at("feature_set").get<std::string>());
  c.layer_strategy = parse_layer_strategy(j.at("layer_strategy").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const SelectionArtifact& a) {
  const auto layout = slot_layout(a.config.feature_set);
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& s : a.layers) layers.push_back({{"layer", s.layer}, {"q_neurons", s.q_neurons}, {"v_neurons", s.v_neurons}});
  return {{"format", "orthoprobe-selection"},
          {"version", 1},
          {"config", to_json(a.config)},
          {"slots",
           {{"q", layout.question_slot ? std::string(source_code(*layout.question_slot)) : std::string()},
            {"v", layout.deviation_slot ? std::string(source_code(*layout.deviation_slot)) : std::string()}}},
          {"num_layers", a.num_layers},
          {"hidden_dim", a.hidden_dim},
          {"layer_scores", detail::exact_array(a.layer_scores)},
          {"layers", layers},
          {"num_features", a.num_features()},
          {"standardization", {{"mean", detail::exact_array(a.feature_mean)}, {"std", detail::exact_array(a.feature_std)}}}};
}

inline SelectionArtifact selection_artifact_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "orthoprobe-selection" || j.at("version") != 1) throw FormatError("not a version-1 selection artifact");
    SelectionArtifact a;
    a.config = selection_config_from_json(j.at("config"));
    a.num_layers = j.at("num_layers").get<std::size_t>();
    a.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    a.layer_scores = detail::parse_exact_array(j.at("layer_scores"));
    for (const auto& s : j.at("layers")) {
      a.layers.push_back({s.at("layer").get<std::size_t>(), s.at("q_neurons").get<std::vector<std::uint32_t>>(),
                          s.at("v_neurons").get<std::vector<std::uint32_t>>()});
    }
    a.feature_mean = detail::parse_exact_array(j.at("standardization").at("mean"));
    a.feature_std = detail::parse_exact_array(j.at("standardization").at("std"));
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed selection artifact: ") + e.what());
  }
}

inline std::string serialize_artifact(const SelectionArtifact& a) { return to_json(a).dump(2) + "\n"; }

inline void write_artifact(const SelectionArtifact& a, const std::filesystem::path& path) {
  detail::write_file_bytes(path, serialize_artifact(a));
}

inline SelectionArtifact read_artifact(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return selection_artifact_from_json(j);
}

}  // namespace orthoprobe

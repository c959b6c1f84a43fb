#pragma once

// Named per-layer representations the selection and assembly stages read:
// the raw question/answer states, both decomposition components, and the
// random-direction control used by the feature ablation.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "orthoprobe/dataset.hpp"
#include "orthoprobe/decomposition.hpp"

namespace orthoprobe {

enum class FeatureSource : std::uint8_t {
  Question,          // hQ
  Answer,            // hA
  Orthogonal,        // v_perp
  Parallel,          // h_par
  RandomOrthogonal,  // hA minus its component along a random unit vector
};

inline std::string_view source_code(FeatureSource s) {
  switch (s) {
    case FeatureSource::Question: return "Q";
    case FeatureSource::Answer: return "A";
    case FeatureSource::Orthogonal: return "V";
    case FeatureSource::Parallel: return "P";
    case FeatureSource::RandomOrthogonal: return "R";
  }
  return "?";
}

inline FeatureSource parse_source_code(std::string_view s) {
  if (s == "Q") return FeatureSource::Question;
  if (s == "A") return FeatureSource::Answer;
  if (s == "V") return FeatureSource::Orthogonal;
  if (s == "P") return FeatureSource::Parallel;
  if (s == "R") return FeatureSource::RandomOrthogonal;
  throw FormatError("unknown feature source code '" + std::string(s) + "'");
}

// Probe input variants plus the ablation feature combinations. Each set has
// an optional question slot and an optional deviation slot; the deviation
// slot also supplies the DPF diversity direction.
enum class FeatureSet : std::uint8_t {
  Orthogonal,     // H_{V_perp}
  Joint,          // H_{Q (+) V_perp}
  QuestionOnly,   // ablation
  AnswerOnly,     // ablation
  QuestionAnswer, // ablation: hQ and hA concatenated, no projection
  RandomProjection,
  ParallelOnly,   // diagnostics only
};

struct SlotLayout {
  std::optional<FeatureSource> question_slot;
  std::optional<FeatureSource> deviation_slot;

  // Sources in column order within a layer.
  std::vector<FeatureSource> sources() const {
    std::vector<FeatureSource> out;
    if (question_slot) out.push_back(*question_slot);
    if (deviation_slot) out.push_back(*deviation_slot);
    return out;
  }
  // The source whose layer mean feeds the diversity penalty.
  FeatureSource penalty_source() const { return deviation_slot ? *deviation_slot : *question_slot; }
};

inline SlotLayout slot_layout(FeatureSet fs) {
  switch (fs) {
    case FeatureSet::Orthogonal: return {std::nullopt, FeatureSource::Orthogonal};
    case FeatureSet::Joint: return {FeatureSource::Question, FeatureSource::Orthogonal};
    case FeatureSet::QuestionOnly: return {FeatureSource::Question, std::nullopt};
    case FeatureSet::AnswerOnly: return {std::nullopt, FeatureSource::Answer};
    case FeatureSet::QuestionAnswer: return {FeatureSource::Question, FeatureSource::Answer};
    case FeatureSet::RandomProjection: return {std::nullopt, FeatureSource::RandomOrthogonal};
    case FeatureSet::ParallelOnly: return {std::nullopt, FeatureSource::Parallel};
  }
  throw ContractError("unknown feature set");
}

inline constexpr std::array<std::pair<FeatureSet, std::string_view>, 7> kFeatureSetNames = {{
    {FeatureSet::Orthogonal, "orthogonal"},
    {FeatureSet::Joint, "joint"},
    {FeatureSet::QuestionOnly, "q-only"},
    {FeatureSet::AnswerOnly, "a-only"},
    {FeatureSet::QuestionAnswer, "qa-no-proj"},
    {FeatureSet::RandomProjection, "random-proj"},
    {FeatureSet::ParallelOnly, "parallel-only"},
}};

inline std::string_view feature_set_name(FeatureSet fs) {
  for (const auto& [k, v] : kFeatureSetNames) {
    if (k == fs) return v;
  }
  return "?";
}

inline FeatureSet parse_feature_set(std::string_view name) {
  for (const auto& [k, v] : kFeatureSetNames) {
    if (v == name) return k;
  }
  throw ConfigError("unknown feature variant '" + std::string(name) +
                    "' (expected orthogonal, joint, q-only, a-only, qa-no-proj, random-proj)");
}

inline bool needs_random_projection(FeatureSet fs) { return fs == FeatureSet::RandomProjection; }

// Non-owning access to every representation of one dataset. The dataset and
// decomposed layers must outlive the bank.
class RepresentationBank {
 public:
  RepresentationBank(const HiddenStateDataset& ds, const std::vector<DecomposedLayer>& decomposed,
                     std::optional<std::uint64_t> random_projection_seed = std::nullopt)
      : ds_(&ds), decomposed_(&decomposed) {
    if (decomposed.size() != ds.num_layers) throw ContractError("decomposition does not cover every layer");
    if (random_projection_seed) {
      random_.reserve(ds.num_layers);
      for (std::size_t l = 0; l < ds.num_layers; ++l) {
        random_.push_back(random_projection_deviation(ds.answer(l), random_layer_seed(*random_projection_seed, l)));
      }
    }
  }

  static std::uint64_t random_layer_seed(std::uint64_t seed, std::size_t layer) { return derive_seed(seed, 0x72616e64ULL, layer); }

  const HiddenStateDataset& dataset() const { return *ds_; }
  std::size_t num_samples() const { return ds_->num_samples; }
  std::size_t num_layers() const { return ds_->num_layers; }
  std::size_t hidden_dim() const { return ds_->hidden_dim; }
  Labels labels() const { return ds_->labels; }

  LayerRef view(FeatureSource s, std::size_t layer) const {
    if (layer >= num_layers()) throw ContractError("layer index out of range");
    switch (s) {
      case FeatureSource::Question: return ds_->question(layer);
      case FeatureSource::Answer: return ds_->answer(layer);
      case FeatureSource::Orthogonal: return (*decomposed_)[layer].v_perp;
      case FeatureSource::Parallel: return (*decomposed_)[layer].h_par;
      case FeatureSource::RandomOrthogonal:
        if (random_.empty()) throw ContractError("random-projection features were not prepared for this bank");
        return random_[layer];
    }
    throw ContractError("unknown feature source");
  }

 private:
  const HiddenStateDataset* ds_;
  const std::vector<DecomposedLayer>* decomposed_;
  std::vector<LayerMatrix> random_;
};

}  // namespace orthoprobe

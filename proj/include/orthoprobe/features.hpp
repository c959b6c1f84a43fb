#pragma once

// Probe-input assembly: concatenation over selected layers in pick order,
// question-slot columns before deviation-slot columns within a layer,
// neurons ascending.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "orthoprobe/artifact.hpp"
#include "orthoprobe/representations.hpp"

namespace orthoprobe {

inline constexpr double kStdFloor = 1e-6;

struct ColumnInfo {
  std::size_t layer = 0;
  FeatureSource source = FeatureSource::Orthogonal;
  std::uint32_t neuron = 0;

  std::string name() const { return "L" + std::to_string(layer) + "_" + std::string(source_code(source)) + "_" + std::to_string(neuron); }
  bool operator==(const ColumnInfo&) const = default;
};

struct FeatureMatrix {
  LayerMatrix x;  // N x D, standardized
  FeatureSet feature_set = FeatureSet::Orthogonal;
  std::vector<ColumnInfo> columns;
};

inline std::vector<ColumnInfo> feature_columns(const SelectionArtifact& a) {
  const auto layout = slot_layout(a.config.feature_set);
  std::vector<ColumnInfo> cols;
  for (const auto& s : a.layers) {
    if (layout.question_slot)
      for (auto j : s.q_neurons) cols.push_back({s.layer, *layout.question_slot, j});
    if (layout.deviation_slot)
      for (auto j : s.v_neurons) cols.push_back({s.layer, *layout.deviation_slot, j});
  }
  return cols;
}

inline void check_compatible(const RepresentationBank& bank, const SelectionArtifact& a) {
  if (bank.num_layers() != a.num_layers || bank.hidden_dim() != a.hidden_dim) {
    throw ContractError("artifact was fitted on L=" + std::to_string(a.num_layers) + ", d=" + std::to_string(a.hidden_dim) +
                        " but data has L=" + std::to_string(bank.num_layers()) + ", d=" + std::to_string(bank.hidden_dim()));
  }
}

// Selected columns before standardization.
inline LayerMatrix gather_raw(const RepresentationBank& bank, const SelectionArtifact& a) {
  check_compatible(bank, a);
  const auto cols = feature_columns(a);
  LayerMatrix x(static_cast<Eigen::Index>(bank.num_samples()), static_cast<Eigen::Index>(cols.size()));
  std::size_t c = 0;
  while (c < cols.size()) {
    // columns sharing (layer, source) are contiguous
    std::size_t end = c;
    while (end < cols.size() && cols[end].layer == cols[c].layer && cols[end].source == cols[c].source) ++end;
    const auto view = bank.view(cols[c].source, cols[c].layer);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (std::size_t k = c; k < end; ++k) x(i, static_cast<Eigen::Index>(k)) = view(i, cols[k].neuron);
    c = end;
  }
  return x;
}

inline void column_mean_std(const LayerMatrix& x, std::vector<double>& mean, std::vector<double>& stdev) {
  const auto n = static_cast<double>(x.rows());
  mean.assign(static_cast<std::size_t>(x.cols()), 0.0);
  stdev.assign(static_cast<std::size_t>(x.cols()), 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) mean[static_cast<std::size_t>(j)] += x(i, j);
  for (auto& m : mean) m /= n;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double dev = x(i, j) - mean[static_cast<std::size_t>(j)];
      stdev[static_cast<std::size_t>(j)] += dev * dev;
    }
  for (auto& s : stdev) s = std::max(std::sqrt(s / n), kStdFloor);
}

inline FeatureMatrix assemble(const RepresentationBank& bank, const SelectionArtifact& a) {
  FeatureMatrix fm{gather_raw(bank, a), a.config.feature_set, feature_columns(a)};
  if (a.feature_mean.size() != fm.columns.size() || a.feature_std.size() != fm.columns.size()) {
    throw ContractError("artifact standardization does not match its column count");
  }
  for (Eigen::Index i = 0; i < fm.x.rows(); ++i)
    for (Eigen::Index j = 0; j < fm.x.cols(); ++j) {
      const auto k = static_cast<std::size_t>(j);
      fm.x(i, j) = static_cast<float>((static_cast<double>(fm.x(i, j)) - a.feature_mean[k]) / a.feature_std[k]);
    }
  return fm;
}

enum class Ablation : std::uint8_t { QuestionOnly, AnswerOnly, QuestionAnswerNoProjection, RandomProjection };

inline FeatureSet ablation_feature_set(Ablation ab) {
  switch (ab) {
    case Ablation::QuestionOnly: return FeatureSet::QuestionOnly;
    case Ablation::AnswerOnly: return FeatureSet::AnswerOnly;
    case Ablation::QuestionAnswerNoProjection: return FeatureSet::QuestionAnswer;
    case Ablation::RandomProjection: return FeatureSet::RandomProjection;
  }
  throw ContractError("unknown ablation");
}

// Same pipeline with substituted sources. The artifact must have been fitted
// on the ablation's own feature set.
inline FeatureMatrix assemble_ablation(const RepresentationBank& bank, const SelectionArtifact& a, Ablation ab) {
  if (a.config.feature_set != ablation_feature_set(ab)) {
    throw ContractError("artifact feature set '" + std::string(feature_set_name(a.config.feature_set)) +
                        "' does not match ablation '" + std::string(feature_set_name(ablation_feature_set(ab))) + "'");
  }
  return assemble(bank, a);
}

// Inverse z-score of one column.
inline std::vector<double> destandardize_column(const FeatureMatrix& fm, const SelectionArtifact& a, std::size_t col) {
  std::vector<double> out(static_cast<std::size_t>(fm.x.rows()));
  for (Eigen::Index i = 0; i < fm.x.rows(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<double>(fm.x(i, static_cast<Eigen::Index>(col))) * a.feature_std[col] + a.feature_mean[col];
  return out;
}

// Debug export: provenance header row, then one row per sample.
inline void write_feature_csv(const FeatureMatrix& fm, const std::filesystem::path& path, Labels labels = {}) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if (!labels.empty()) out << "label,";
  for (std::size_t j = 0; j < fm.columns.size(); ++j) out << (j ? "," : "") << fm.columns[j].name();
  out << "\n";
  for (Eigen::Index i = 0; i < fm.x.rows(); ++i) {
    if (!labels.empty()) out << int(labels[static_cast<std::size_t>(i)]) << ",";
    for (Eigen::Index j = 0; j < fm.x.cols(); ++j) out << (j ? "," : "") << format_exact(fm.x(i, j));
    out << "\n";
  }
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

}  // namespace orthoprobe

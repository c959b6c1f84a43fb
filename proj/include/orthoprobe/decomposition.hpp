#pragma once

// Question-aligned / question-orthogonal split of answer hidden states.
//
//   h_par  = (hA . hQ / |hQ|^2) hQ
//   v_perp = hA - h_par
//
// Accumulation is float64; storage stays float32.

#include <cmath>
#include <vector>

#include "orthoprobe/common.hpp"
#include "orthoprobe/dataset.hpp"

namespace orthoprobe {

// |hQ|^2 at or below kNormEpsilon^2 is treated as zero: the projection
// vanishes and v_perp = hA.
inline constexpr double kNormEpsilon = 1e-8;

struct DecomposedLayer {
  std::size_t layer_index = 0;
  LayerMatrix v_perp;  // N x d
  LayerMatrix h_par;   // N x d
};

inline DecomposedLayer decompose_layer(const LayerRef& hq, const LayerRef& ha, std::size_t layer_index = 0) {
  if (hq.rows() != ha.rows() || hq.cols() != ha.cols()) {
    throw ContractError("decompose_layer: hQ is " + std::to_string(hq.rows()) + "x" + std::to_string(hq.cols()) +
                        " but hA is " + std::to_string(ha.rows()) + "x" + std::to_string(ha.cols()));
  }
  const Eigen::Index n = ha.rows();
  const Eigen::Index d = ha.cols();
  DecomposedLayer out{layer_index, LayerMatrix(n, d), LayerMatrix(n, d)};
  for (Eigen::Index i = 0; i < n; ++i) {
    double qq = 0.0;
    double aq = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double q = hq(i, j);
      qq += q * q;
      aq += static_cast<double>(ha(i, j)) * q;
    }
    const double coef = qq > kNormEpsilon * kNormEpsilon ? aq / qq : 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double par = coef * static_cast<double>(hq(i, j));
      out.h_par(i, j) = static_cast<float>(par);
      out.v_perp(i, j) = static_cast<float>(static_cast<double>(ha(i, j)) - par);
    }
  }
  return out;
}

inline std::vector<DecomposedLayer> decompose_dataset(const HiddenStateDataset& ds) {
  std::vector<DecomposedLayer> layers;
  layers.reserve(ds.num_layers);
  for (std::size_t l = 0; l < ds.num_layers; ++l) layers.push_back(decompose_layer(ds.question(l), ds.answer(l), l));
  return layers;
}

// Seeded random unit vector in R^d.
inline std::vector<double> random_unit_vector(std::size_t d, std::uint64_t seed) {
  if (d == 0) throw ContractError("random_unit_vector: d must be >= 1");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> r(d);
  double norm2 = 0.0;
  while (norm2 == 0.0) {
    norm2 = 0.0;
    for (auto& x : r) {
      x = normal(rng);
      norm2 += x * x;
    }
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : r) x *= inv;
  return r;
}

// Ablation control: removes the component of hA along a fixed random unit
// direction instead of the question direction.
inline LayerMatrix random_projection_deviation(const LayerRef& ha, std::uint64_t seed) {
  const auto d = static_cast<std::size_t>(ha.cols());
  if (d < 1) throw ContractError("random_projection_deviation: d must be >= 1");
  const auto r = random_unit_vector(d, seed);
  LayerMatrix out(ha.rows(), ha.cols());
  for (Eigen::Index i = 0; i < ha.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(ha(i, static_cast<Eigen::Index>(j))) * r[j];
    for (std::size_t j = 0; j < d; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      out(i, jj) = static_cast<float>(static_cast<double>(ha(i, jj)) - dot * r[j]);
    }
  }
  return out;
}

}  // namespace orthoprobe

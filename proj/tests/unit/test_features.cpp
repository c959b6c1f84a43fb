#include <cmath>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "orthoprobe/decomposition.hpp"
#include "orthoprobe/features.hpp"
#include "orthoprobe/selection.hpp"

using namespace orthoprobe;
using testing_util::TempDir;

namespace {

SelectionArtifact manual_artifact(FeatureSet fs, std::vector<SelectedLayer> layers, std::size_t num_layers, std::size_t d) {
  SelectionArtifact a;
  a.config.feature_set = fs;
  a.num_layers = num_layers;
  a.hidden_dim = d;
  a.layer_scores.assign(num_layers, 1.0);
  a.layers = std::move(layers);
  a.feature_mean.assign(a.num_features(), 0.0);
  a.feature_std.assign(a.num_features(), 1.0);
  return a;
}

struct Fixture {
  HiddenStateDataset ds = testing_util::random_dataset(64, 5, 6, 71);
  std::vector<DecomposedLayer> dec = decompose_dataset(ds);
};

}  // namespace

TEST(Assemble, OrthogonalColumnsAreSelectedDeviationEntries) {
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec);
  const auto a = manual_artifact(FeatureSet::Orthogonal, {{3, {}, {1, 4}}}, 5, 6);
  const auto fm = assemble(bank, a);
  ASSERT_EQ(fm.x.cols(), 2);
  EXPECT_EQ(fm.columns[0], (ColumnInfo{3, FeatureSource::Orthogonal, 1}));
  EXPECT_EQ(fm.columns[1], (ColumnInfo{3, FeatureSource::Orthogonal, 4}));
  for (Eigen::Index i = 0; i < fm.x.rows(); ++i) {
    EXPECT_EQ(fm.x(i, 0), f.dec[3].v_perp(i, 1));
    EXPECT_EQ(fm.x(i, 1), f.dec[3].v_perp(i, 4));
  }
}

TEST(Assemble, JointPutsQuestionColumnsFirstPerLayerInPickOrder) {
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec);
  const auto a = manual_artifact(FeatureSet::Joint, {{4, {0}, {2, 5}}, {1, {3, 4}, {0}}}, 5, 6);
  const auto fm = assemble(bank, a);
  const std::vector<ColumnInfo> expect = {{4, FeatureSource::Question, 0},
                                          {4, FeatureSource::Orthogonal, 2},
                                          {4, FeatureSource::Orthogonal, 5},
                                          {1, FeatureSource::Question, 3},
                                          {1, FeatureSource::Question, 4},
                                          {1, FeatureSource::Orthogonal, 0}};
  EXPECT_EQ(fm.columns, expect);
  EXPECT_EQ(fm.x(7, 3), f.ds.question(1)(7, 3));
  EXPECT_EQ(fm.x(7, 5), f.dec[1].v_perp(7, 0));
  EXPECT_EQ(fm.columns[3].name(), "L1_Q_3");
}

TEST(Assemble, StandardizedTrainColumnsHaveZeroMeanUnitStd) {
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec);
  SelectionConfig cfg;
  cfg.k = 3;
  cfg.feature_set = FeatureSet::Joint;
  const auto a = fit_selection(bank, cfg);
  const auto fm = assemble(bank, a);
  ASSERT_EQ(static_cast<std::size_t>(fm.x.cols()), a.num_features());
  for (Eigen::Index j = 0; j < fm.x.cols(); ++j) {
    const Eigen::VectorXd c = fm.x.col(j).cast<double>();
    const double mean = c.mean();
    const double sd = std::sqrt((c.array() - mean).square().mean());
    EXPECT_LT(std::abs(mean), 1e-4);
    if (a.feature_std[static_cast<std::size_t>(j)] > kStdFloor) EXPECT_NEAR(sd, 1.0, 1e-3);
  }
}

TEST(Assemble, ConstantColumnUsesFlooredStd) {
  auto ds = testing_util::random_dataset(40, 1, 3, 72);
  for (std::size_t i = 0; i < 40; ++i) ds.ha[ds.offset(i, 0) + 2] = 0.0f;
  for (std::size_t i = 0; i < 40; ++i)
    for (int j = 0; j < 3; ++j) ds.hq[ds.offset(i, 0) + j] = j == 2 ? 1.0f : 0.0f;
  const auto dec = decompose_dataset(ds);
  const RepresentationBank bank(ds, dec);
  auto a = manual_artifact(FeatureSet::Orthogonal, {{0, {}, {2}}}, 1, 3);
  column_mean_std(gather_raw(bank, a), a.feature_mean, a.feature_std);
  EXPECT_EQ(a.feature_std[0], kStdFloor);
  const auto fm = assemble(bank, a);
  EXPECT_TRUE(fm.x.allFinite());
}

TEST(Assemble, DimensionMismatchIsContractError) {
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec);
  const auto a = manual_artifact(FeatureSet::Orthogonal, {{0, {}, {1}}}, 4, 6);
  EXPECT_THROW(assemble(bank, a), ContractError);
  const auto b = manual_artifact(FeatureSet::Orthogonal, {{0, {}, {1}}}, 5, 7);
  EXPECT_THROW(assemble(bank, b), ContractError);
}

TEST(Assemble, PureFunction) {
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec);
  SelectionConfig cfg;
  cfg.k = 2;
  const auto a = fit_selection(bank, cfg);
  EXPECT_EQ(assemble(bank, a).x, assemble(bank, a).x);
}

TEST(Assemble, ProvenanceRoundTripsThroughDestandardization) {
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec);
  SelectionConfig cfg;
  cfg.k = 3;
  cfg.feature_set = FeatureSet::Joint;
  const auto a = fit_selection(bank, cfg);
  const auto fm = assemble(bank, a);
  for (std::size_t c = 0; c < fm.columns.size(); ++c) {
    const auto& col = fm.columns[c];
    const auto raw = destandardize_column(fm, a, c);
    const auto view = bank.view(col.source, col.layer);
    for (Eigen::Index i = 0; i < fm.x.rows(); ++i)
      EXPECT_NEAR(raw[static_cast<std::size_t>(i)], view(i, col.neuron), 1e-5 * (1.0 + std::abs(view(i, col.neuron))));
  }
}

TEST(Ablation, ColumnsComeFromTheSubstitutedSources) {
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec, std::uint64_t{5});
  for (auto ab : {Ablation::QuestionOnly, Ablation::AnswerOnly, Ablation::QuestionAnswerNoProjection, Ablation::RandomProjection}) {
    SelectionConfig cfg;
    cfg.k = 2;
    cfg.feature_set = ablation_feature_set(ab);
    cfg.seed = 5;
    const auto a = fit_selection(bank, cfg);
    const auto fm = assemble_ablation(bank, a, ab);
    std::size_t q = 0, other = 0;
    for (const auto& c : fm.columns) {
      switch (ab) {
        case Ablation::QuestionOnly: EXPECT_EQ(c.source, FeatureSource::Question); break;
        case Ablation::AnswerOnly: EXPECT_EQ(c.source, FeatureSource::Answer); break;
        case Ablation::QuestionAnswerNoProjection:
          EXPECT_TRUE(c.source == FeatureSource::Question || c.source == FeatureSource::Answer);
          break;
        case Ablation::RandomProjection: EXPECT_EQ(c.source, FeatureSource::RandomOrthogonal); break;
      }
      (c.source == FeatureSource::Question ? q : other)++;
    }
    if (ab == Ablation::QuestionAnswerNoProjection) {
      std::size_t nq = 0, na = 0;
      for (const auto& s : a.layers) {
        nq += s.q_neurons.size();
        na += s.v_neurons.size();
      }
      EXPECT_EQ(q, nq);
      EXPECT_EQ(other, na);
      EXPECT_EQ(fm.columns.size(), nq + na);
    }
  }
}

TEST(Ablation, RandomProjectionUsesDeviationFromRandomDirection) {
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec, std::uint64_t{8});
  SelectionConfig cfg;
  cfg.k = 1;
  cfg.feature_set = FeatureSet::RandomProjection;
  cfg.seed = 8;
  const auto a = fit_selection(bank, cfg);
  const auto fm = assemble_ablation(bank, a, Ablation::RandomProjection);
  const std::size_t l = a.layers[0].layer;
  const auto expect = random_projection_deviation(f.ds.answer(l), RepresentationBank::random_layer_seed(8, l));
  const auto raw = destandardize_column(fm, a, 0);
  for (Eigen::Index i = 0; i < fm.x.rows(); ++i)
    EXPECT_NEAR(raw[static_cast<std::size_t>(i)], expect(i, a.layers[0].v_neurons[0]), 1e-5);
}

TEST(Ablation, MismatchedArtifactRejected) {
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec);
  SelectionConfig cfg;
  cfg.k = 1;
  const auto a = fit_selection(bank, cfg);
  EXPECT_THROW(assemble_ablation(bank, a, Ablation::AnswerOnly), ContractError);
}

TEST(FeatureCsv, HeaderCarriesProvenance) {
  TempDir dir("feat");
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec);
  const auto a = manual_artifact(FeatureSet::Orthogonal, {{3, {}, {1, 4}}}, 5, 6);
  write_feature_csv(assemble(bank, a), dir / "x.csv", f.ds.labels);
  std::ifstream in(dir / "x.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "label,L3_V_1,L3_V_4");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 64u);
}

TEST(Artifact, JsonRoundTripIsExact) {
  TempDir dir("art");
  Fixture f;
  const RepresentationBank bank(f.ds, f.dec);
  SelectionConfig cfg;
  cfg.k = 3;
  cfg.feature_set = FeatureSet::Joint;
  cfg.lambda = 0.3;
  const auto a = fit_selection(bank, cfg);
  write_artifact(a, dir / "a.json");
  const auto b = read_artifact(dir / "a.json");
  EXPECT_EQ(serialize_artifact(a), serialize_artifact(b));
  EXPECT_EQ(a.feature_mean, b.feature_mean);
  EXPECT_EQ(a.feature_std, b.feature_std);
  EXPECT_EQ(a.layer_scores, b.layer_scores);
  EXPECT_EQ(b.config.lambda, 0.3);
}

TEST(Artifact, MalformedJsonIsFormatError) {
  TempDir dir("art");
  orthoprobe::detail::write_file_bytes(dir / "bad.json", "{\"format\": \"orthoprobe-selection\", \"version\": 1}");
  EXPECT_THROW(read_artifact(dir / "bad.json"), FormatError);
  orthoprobe::detail::write_file_bytes(dir / "bad2.json", "not json");
  EXPECT_THROW(read_artifact(dir / "bad2.json"), FormatError);
}

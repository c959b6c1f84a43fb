#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "orthoprobe/probe.hpp"

using namespace orthoprobe;
using testing_util::TempDir;

namespace {

LayerMatrix blobs(std::size_t n, std::size_t d, double sep, std::uint64_t seed, std::vector<std::uint8_t>& y) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  LayerMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<std::uint8_t>(i % 2);
    for (std::size_t j = 0; j < d; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<float>(normal(rng) + (y[i] ? sep : -sep));
  }
  return x;
}

template <class M>
double max_abs_weight_ratio(const M& w, double bound) {
  return w.cwiseAbs().maxCoeff() / bound;
}

TrainConfig small_config(std::size_t epochs = 30) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.shape = ProbeShape{64, 16};
  c.seed = 9;
  return c;
}

}  // namespace

TEST(ProbeInit, ShapesBoundsAndZeroBiases) {
  const auto m = init_probe(301, 4);
  EXPECT_EQ(m.w1.rows(), 301);
  EXPECT_EQ(m.w1.cols(), 1024);
  EXPECT_EQ(m.w2.cols(), 128);
  EXPECT_EQ(m.w3.cols(), 2);
  EXPECT_LE(max_abs_weight_ratio(m.w1, std::sqrt(1.0 / 301)), 1.0);
  EXPECT_LE(max_abs_weight_ratio(m.w2, std::sqrt(1.0 / 1024)), 1.0);
  EXPECT_LE(max_abs_weight_ratio(m.w3, std::sqrt(1.0 / 128)), 1.0);
  EXPECT_GT(max_abs_weight_ratio(m.w1, std::sqrt(1.0 / 301)), 0.99);
  EXPECT_EQ(m.b1, RowVec<float>::Zero(1024));
  EXPECT_EQ(m.b2, RowVec<float>::Zero(128));
  EXPECT_EQ(m.b3, RowVec<float>::Zero(2));
}

TEST(ProbeInit, DeterministicUnderSeed) {
  const auto a = init_probe(10, 3), b = init_probe(10, 3), c = init_probe(10, 4);
  EXPECT_EQ(a.w1, b.w1);
  EXPECT_EQ(a.w3, b.w3);
  EXPECT_NE(a.w1, c.w1);
  EXPECT_THROW(init_probe(0, 1), ContractError);
  EXPECT_THROW(init_probe(3, 1, 1.0), ContractError);
}

TEST(ProbeForward, EvalModeIsDeterministicAndZeroInputGivesZeroLogits) {
  const auto m = init_probe(7, 5);
  LayerMatrix x = LayerMatrix::Random(9, 7);
  EXPECT_EQ(forward(m, x, false), forward(m, x, false));
  const auto z = forward(m, LayerMatrix::Zero(3, 7), false);
  EXPECT_EQ(z, RowMatrix<float>::Zero(3, 2));
  EXPECT_THROW(forward(m, LayerMatrix::Zero(3, 6), false), ContractError);
}

TEST(ProbeForward, NoDropoutMakesTrainModeEqualEvalMode) {
  const auto m = init_probe(7, 5, 0.0);
  const LayerMatrix x = LayerMatrix::Random(9, 7);
  Rng rng(1);
  EXPECT_EQ(forward(m, x, true, &rng), forward(m, x, false));
  const auto md = init_probe(7, 5, 0.5);
  EXPECT_THROW(forward(md, x, true), ContractError);
  EXPECT_NE(forward(md, x, true, &rng), forward(md, x, false));
}

TEST(ProbeForward, DropoutMaskKeepsExpectation) {
  Rng rng(17);
  RowMatrix<float> mask;
  detail::dropout_mask(mask, 100, 100, 0.1, rng);
  double sum = 0.0, zeros = 0.0;
  for (int pass = 0; pass < 100; ++pass) {
    detail::dropout_mask(mask, 100, 100, 0.1, rng);
    sum += mask.cast<double>().sum();
    zeros += static_cast<double>((mask.array() == 0.0f).count());
  }
  EXPECT_NEAR(sum / 1e6, 1.0, 0.02);
  EXPECT_NEAR(zeros / 1e6, 0.1, 0.002);
}

TEST(ProbeLoss, ZeroLogitsGiveLogTwo) {
  const auto m = init_probe(4, 1);
  const std::vector<std::uint8_t> y = {0, 1, 1};
  const auto lg = loss_and_grads(m, LayerMatrix::Zero(3, 4), y, ClassWeights{1.0, 1.0});
  EXPECT_NEAR(lg.loss, std::log(2.0), 1e-12);
}

TEST(ProbeLoss, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto g = testing_util::random_grad_instance(seed);
    EXPECT_LT(testing_util::max_gradient_error(g), 1e-3) << "seed " << seed;
  }
}

TEST(ProbeLoss, DoublingClassWeightsDoublesLossAndGrads) {
  auto m = init_mlp<double>(4, 2, ProbeShape{8, 5}, 0.0);
  const RowMatrix<double> x = RowMatrix<double>::Random(6, 4);
  const std::vector<std::uint8_t> y = {0, 1, 0, 1, 1, 1};
  const auto a = loss_and_grads(m, x, y, ClassWeights{0.7, 1.3});
  const auto b = loss_and_grads(m, x, y, ClassWeights{1.4, 2.6});
  EXPECT_NEAR(b.loss, 2.0 * a.loss, 1e-12);
  EXPECT_TRUE(b.grads.w1.isApprox(2.0 * a.grads.w1, 1e-12));
  EXPECT_TRUE(b.grads.b3.isApprox(2.0 * a.grads.b3, 1e-12));
}

TEST(ProbeLoss, InverseFrequencyWeights) {
  std::vector<std::uint8_t> y(10, 0);
  y[3] = 1;
  const auto w = inverse_frequency_weights(y);
  EXPECT_NEAR(w[0], 10.0 / 18.0, 1e-12);
  EXPECT_NEAR(w[1], 5.0, 1e-12);
  const std::vector<std::uint8_t> one = {1, 1};
  EXPECT_THROW(inverse_frequency_weights(one), TrainingError);
}

TEST(ProbeTraining, SeparableBlobsAreFit) {
  std::vector<std::uint8_t> y;
  const auto x = blobs(400, 4, 2.0, 3, y);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 64;
  const auto r = train_probe(x, y, LayerMatrix(0, 4), {}, cfg);
  const auto p = predict_proba(r.model, x);
  std::size_t right = 0;
  for (std::size_t i = 0; i < y.size(); ++i) right += (p[i] >= 0.5) == (y[i] == 1);
  EXPECT_GE(static_cast<double>(right) / 400.0, 0.99);
  EXPECT_EQ(r.log.epochs.size(), 30u);
  EXPECT_FALSE(r.log.epochs[0].val_loss.has_value());
}

TEST(ProbeTraining, BitIdenticalAcrossRuns) {
  std::vector<std::uint8_t> y;
  const auto x = blobs(200, 5, 0.5, 4, y);
  const auto a = train_probe(x, y, x, y, small_config(5));
  const auto b = train_probe(x, y, x, y, small_config(5));
  EXPECT_EQ(encode_probe(a.model), encode_probe(b.model));
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  auto other = small_config(5);
  other.seed = 10;
  EXPECT_NE(encode_probe(train_probe(x, y, x, y, other).model), encode_probe(a.model));
}

TEST(ProbeTraining, LossDecreasesEarly) {
  std::vector<std::uint8_t> y;
  const auto x = blobs(300, 6, 0.7, 5, y);
  const auto r = train_probe(x, y, x, y, small_config(5));
  ASSERT_EQ(r.log.epochs.size(), 5u);
  EXPECT_LT(r.log.epochs.back().train_loss, r.log.epochs.front().train_loss);
  EXPECT_LT(*r.log.epochs.back().val_loss, *r.log.epochs.front().val_loss);
}

TEST(ProbeTraining, RejectsBadInputs) {
  std::vector<std::uint8_t> y;
  const auto x = blobs(20, 3, 1.0, 6, y);
  const std::vector<std::uint8_t> ones(20, 1);
  EXPECT_THROW(train_probe(x, ones, x, ones, small_config(1)), TrainingError);
  const std::vector<std::uint8_t> short_y(y.begin(), y.begin() + 10);
  EXPECT_THROW(train_probe(x, short_y, x, y, small_config(1)), ContractError);
  auto bad = small_config(0);
  EXPECT_THROW(train_probe(x, y, x, y, bad), ConfigError);
}

TEST(ProbeTraining, LogCsvHasOneRowPerEpoch) {
  std::vector<std::uint8_t> y;
  const auto x = blobs(64, 3, 1.0, 7, y);
  const auto csv = train_probe(x, y, x, y, small_config(3)).log.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.rfind("epoch,train_loss,val_loss\n", 0), 0u);
}

TEST(ProbePredict, ZeroLogitsAndSaturation) {
  auto m = init_probe(2, 1);
  EXPECT_EQ(predict_proba(m, LayerMatrix::Zero(2, 2))[0], 0.5);
  m.b3(1) = 50.0f;
  const auto p = predict_proba(m, LayerMatrix::Zero(1, 2));
  EXPECT_GT(p[0], 0.9999);
  EXPECT_LE(p[0], 1.0);
  m.b3(1) = -800.0f;
  EXPECT_GE(predict_proba(m, LayerMatrix::Zero(1, 2))[0], 0.0);
}

TEST(ProbeIo, RoundTripIsBitExact) {
  TempDir dir("probe");
  const auto m = init_probe(13, 8, 0.25);
  write_probe(m, dir / "m.qprb", {{"artifact_hash", "abc"}});
  const auto lp = read_probe(dir / "m.qprb");
  EXPECT_EQ(lp.model.w1, m.w1);
  EXPECT_EQ(lp.model.w2, m.w2);
  EXPECT_EQ(lp.model.b3, m.b3);
  EXPECT_EQ(lp.model.dropout, 0.25);
  EXPECT_EQ(lp.header.at("meta").at("artifact_hash"), "abc");
  EXPECT_EQ(encode_probe(lp.model, lp.header.at("meta")), encode_probe(m, {{"artifact_hash", "abc"}}));
}

TEST(ProbeIo, CorruptFilesRejected) {
  const auto bytes = encode_probe(init_probe(3, 1));
  EXPECT_THROW(decode_probe("XXXX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(decode_probe(bytes.substr(0, bytes.size() - 3)), CorruptionError);
  EXPECT_THROW(decode_probe(bytes + "x"), CorruptionError);
  std::string nan = bytes;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + nan.size() - 4, &q, 4);
  EXPECT_THROW(decode_probe(nan), ValidationError);
}

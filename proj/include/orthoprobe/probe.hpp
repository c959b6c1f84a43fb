#pragma once

// Two-hidden-layer MLP probe: D -> 1024 -> 128 -> 2, ReLU, inverted
// dropout after each ReLU, class-weighted cross-entropy, Adam with decoupled
// weight decay on weight matrices only.
//
// The network is templated on the scalar so the same code path runs in
// float32 for training and in float64 for gradient checking.

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoprobe/common.hpp"
#include "orthoprobe/dataset.hpp"

namespace orthoprobe {

inline constexpr std::size_t kProbeHidden1 = 1024;
inline constexpr std::size_t kProbeHidden2 = 128;
inline constexpr std::size_t kProbeOutputs = 2;

struct ProbeShape {
  std::size_t hidden1 = kProbeHidden1;
  std::size_t hidden2 = kProbeHidden2;
};

template <class S>
struct Mlp {
  // Weights are fan_in x fan_out so that logits = X W + b.
  RowMatrix<S> w1, w2, w3;
  RowVec<S> b1, b2, b3;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t hidden1() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden2() const { return static_cast<std::size_t>(w2.cols()); }

  template <class T>
  Mlp<T> cast() const {
    Mlp<T> m;
    m.w1 = w1.template cast<T>();
    m.w2 = w2.template cast<T>();
    m.w3 = w3.template cast<T>();
    m.b1 = b1.template cast<T>();
    m.b2 = b2.template cast<T>();
    m.b3 = b3.template cast<T>();
    m.dropout = dropout;
    m.seed = seed;
    return m;
  }

  bool all_finite() const {
    return w1.allFinite() && w2.allFinite() && w3.allFinite() && b1.allFinite() && b2.allFinite() && b3.allFinite();
  }
};

using ProbeModel = Mlp<float>;

template <class S>
struct Gradients {
  RowMatrix<S> w1, w2, w3;
  RowVec<S> b1, b2, b3;
};

namespace detail {

template <class S>
void fill_uniform(RowMatrix<S>& w, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = static_cast<S>((2.0 * uniform01(rng) - 1.0) * bound);
}

}  // namespace detail

// Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)); biases zero.
template <class S = float>
Mlp<S> init_mlp(std::size_t input_dim, std::uint64_t seed, ProbeShape shape = {}, double dropout = 0.1) {
  if (input_dim < 1) throw ContractError("probe input dimension must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must lie in [0, 1)");
  Rng rng(seed);
  Mlp<S> m;
  m.dropout = dropout;
  m.seed = seed;
  const auto d = static_cast<Eigen::Index>(input_dim);
  const auto h1 = static_cast<Eigen::Index>(shape.hidden1);
  const auto h2 = static_cast<Eigen::Index>(shape.hidden2);
  const auto out = static_cast<Eigen::Index>(kProbeOutputs);
  m.w1.resize(d, h1);
  m.w2.resize(h1, h2);
  m.w3.resize(h2, out);
  detail::fill_uniform(m.w1, std::sqrt(1.0 / static_cast<double>(d)), rng);
  detail::fill_uniform(m.w2, std::sqrt(1.0 / static_cast<double>(h1)), rng);
  detail::fill_uniform(m.w3, std::sqrt(1.0 / static_cast<double>(h2)), rng);
  m.b1 = RowVec<S>::Zero(h1);
  m.b2 = RowVec<S>::Zero(h2);
  m.b3 = RowVec<S>::Zero(out);
  return m;
}

inline ProbeModel init_probe(std::size_t input_dim, std::uint64_t seed, double dropout = 0.1) {
  return init_mlp<float>(input_dim, seed, ProbeShape{}, dropout);
}

template <class S>
struct ForwardCache {
  RowMatrix<S> z1, a1, mask1;
  RowMatrix<S> z2, a2, mask2;
  RowMatrix<S> logits;
};

namespace detail {

// Inverted-dropout mask: 0 with probability p, else 1 / (1 - p).
template <class S>
void dropout_mask(RowMatrix<S>& mask, Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  mask.resize(rows, cols);
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) mask(i, j) = uniform01(rng) < p ? S(0) : keep;
}

}  // namespace detail

// `rng` supplies dropout masks in train mode; ignored otherwise.
template <class S, class Derived>
void forward_cached(const Mlp<S>& m, const Eigen::MatrixBase<Derived>& x, bool train_mode, Rng* rng, ForwardCache<S>& c) {
  if (static_cast<std::size_t>(x.cols()) != m.input_dim()) {
    throw ContractError("probe expects " + std::to_string(m.input_dim()) + " input columns, got " + std::to_string(x.cols()));
  }
  const bool drop = train_mode && m.dropout > 0.0;
  if (drop && rng == nullptr) throw ContractError("train-mode forward with dropout needs an rng");
  c.z1.noalias() = x * m.w1;
  c.z1.rowwise() += m.b1;
  c.a1 = c.z1.cwiseMax(S(0));
  if (drop) {
    detail::dropout_mask(c.mask1, c.a1.rows(), c.a1.cols(), m.dropout, *rng);
    c.a1.array() *= c.mask1.array();
  }
  c.z2.noalias() = c.a1 * m.w2;
  c.z2.rowwise() += m.b2;
  c.a2 = c.z2.cwiseMax(S(0));
  if (drop) {
    detail::dropout_mask(c.mask2, c.a2.rows(), c.a2.cols(), m.dropout, *rng);
    c.a2.array() *= c.mask2.array();
  } else {
    c.mask1.resize(0, 0);
    c.mask2.resize(0, 0);
  }
  c.logits.noalias() = c.a2 * m.w3;
  c.logits.rowwise() += m.b3;
}

template <class S, class Derived>
RowMatrix<S> forward(const Mlp<S>& m, const Eigen::MatrixBase<Derived>& x, bool train_mode, Rng* rng = nullptr) {
  ForwardCache<S> c;
  forward_cached(m, x, train_mode, rng, c);
  return c.logits;
}

using ClassWeights = std::array<double, 2>;

// w_c = N / (2 N_c).
inline ClassWeights inverse_frequency_weights(Labels y) {
  require_both_classes<TrainingError>(y, "class weights");
  const double n = static_cast<double>(y.size());
  const double n1 = static_cast<double>(std::count(y.begin(), y.end(), std::uint8_t{1}));
  return {n / (2.0 * (n - n1)), n / (2.0 * n1)};
}

template <class S>
struct LossAndGrads {
  double loss = 0.0;
  Gradients<S> grads;
};

namespace detail {

// Stable -log softmax(z)[y] and softmax(z) for two logits.
inline double two_class_nll(double z0, double z1, int y, double& p1) {
  const double mx = std::max(z0, z1);
  const double lse = mx + std::log(std::exp(z0 - mx) + std::exp(z1 - mx));
  p1 = std::exp(z1 - lse);
  return lse - (y ? z1 : z0);
}

}  // namespace detail

template <class S, class Derived>
double weighted_loss(const Mlp<S>& m, const Eigen::MatrixBase<Derived>& x, Labels y, const ClassWeights& w) {
  const auto logits = forward(m, x, false);
  double loss = 0.0;
  double p1 = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int yi = y[static_cast<std::size_t>(i)];
    loss += w[static_cast<std::size_t>(yi)] * detail::two_class_nll(logits(i, 0), logits(i, 1), yi, p1);
  }
  return loss / static_cast<double>(logits.rows());
}

// Batch mean of w_y * -log softmax(logits)[y] and its gradient. With a
// non-null rng the forward pass runs in train mode (dropout active).
template <class S, class Derived>
LossAndGrads<S> loss_and_grads(const Mlp<S>& m, const Eigen::MatrixBase<Derived>& x, Labels y, const ClassWeights& w,
                               Rng* rng = nullptr) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ContractError("loss_and_grads: label count != batch rows");
  ForwardCache<S> c;
  forward_cached(m, x, rng != nullptr, rng, c);
  const Eigen::Index b = x.rows();
  const double inv_b = 1.0 / static_cast<double>(b);

  RowMatrix<S> dz3(b, 2);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const int yi = y[static_cast<std::size_t>(i)];
    if (yi != 0 && yi != 1) throw ContractError("labels must be 0/1");
    double p1 = 0.0;
    const double wi = w[static_cast<std::size_t>(yi)];
    loss += wi * detail::two_class_nll(c.logits(i, 0), c.logits(i, 1), yi, p1);
    const double scale = wi * inv_b;
    dz3(i, 0) = static_cast<S>(scale * ((1.0 - p1) - (yi == 0 ? 1.0 : 0.0)));
    dz3(i, 1) = static_cast<S>(scale * (p1 - (yi == 1 ? 1.0 : 0.0)));
  }

  LossAndGrads<S> out;
  out.loss = loss * inv_b;
  auto& g = out.grads;
  g.w3.noalias() = c.a2.transpose() * dz3;
  g.b3 = dz3.colwise().sum();

  RowMatrix<S> dz2 = dz3 * m.w3.transpose();
  if (c.mask2.size()) dz2.array() *= c.mask2.array();
  dz2.array() *= (c.z2.array() > S(0)).template cast<S>();
  g.w2.noalias() = c.a1.transpose() * dz2;
  g.b2 = dz2.colwise().sum();

  RowMatrix<S> dz1 = dz2 * m.w2.transpose();
  if (c.mask1.size()) dz1.array() *= c.mask1.array();
  dz1.array() *= (c.z1.array() > S(0)).template cast<S>();
  g.w1.noalias() = x.transpose() * dz1;
  g.b1 = dz1.colwise().sum();
  return out;
}

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double dropout = 0.1;
  std::size_t batch_size = 256;
  std::uint64_t seed = 42;
  std::optional<ClassWeights> class_weights;  // inverse frequency when unset
  ProbeShape shape;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"epochs", c.epochs},
                      {"learning_rate", format_exact(c.learning_rate)},
                      {"weight_decay", format_exact(c.weight_decay)},
                      {"dropout", format_exact(c.dropout)},
                      {"batch_size", c.batch_size},
                      {"seed", c.seed},
                      {"hidden", {c.shape.hidden1, c.shape.hidden2}},
                      {"beta1", format_exact(c.beta1)},
                      {"beta2", format_exact(c.beta2)},
                      {"adam_epsilon", format_exact(c.adam_epsilon)}};
  if (c.class_weights) j["class_weights"] = {format_exact((*c.class_weights)[0]), format_exact((*c.class_weights)[1])};
  return j;
}

template <class S>
class AdamW {
 public:
  AdamW(const Mlp<S>& m, const TrainConfig& cfg) : cfg_(cfg) {
    auto zero_like = [](const auto& p) { return std::decay_t<decltype(p)>::Zero(p.rows(), p.cols()); };
    mw1_ = zero_like(m.w1), vw1_ = mw1_;
    mw2_ = zero_like(m.w2), vw2_ = mw2_;
    mw3_ = zero_like(m.w3), vw3_ = mw3_;
    mb1_ = zero_like(m.b1), vb1_ = mb1_;
    mb2_ = zero_like(m.b2), vb2_ = mb2_;
    mb3_ = zero_like(m.b3), vb3_ = mb3_;
  }

  void step(Mlp<S>& m, const Gradients<S>& g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    update(m.w1, g.w1, mw1_, vw1_, bc1, bc2, true);
    update(m.w2, g.w2, mw2_, vw2_, bc1, bc2, true);
    update(m.w3, g.w3, mw3_, vw3_, bc1, bc2, true);
    update(m.b1, g.b1, mb1_, vb1_, bc1, bc2, false);
    update(m.b2, g.b2, mb2_, vb2_, bc1, bc2, false);
    update(m.b3, g.b3, mb3_, vb3_, bc1, bc2, false);
  }

  std::size_t steps() const { return t_; }

 private:
  template <class P>
  void update(P& p, const P& g, P& mo, P& ve, double bc1, double bc2, bool decay) const {
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S lr = static_cast<S>(cfg_.learning_rate);
    if (decay && cfg_.weight_decay > 0.0) p *= static_cast<S>(1.0 - cfg_.learning_rate * cfg_.weight_decay);
    mo.array() = b1 * mo.array() + (S(1) - b1) * g.array();
    ve.array() = b2 * ve.array() + (S(1) - b2) * g.array().square();
    const S step = lr / static_cast<S>(bc1);
    const S root_bc2 = static_cast<S>(std::sqrt(bc2));
    p.array() -= step * mo.array() / (ve.array().sqrt() / root_bc2 + static_cast<S>(cfg_.adam_epsilon));
  }

  TrainConfig cfg_;
  std::size_t t_ = 0;
  RowMatrix<S> mw1_, vw1_, mw2_, vw2_, mw3_, vw3_;
  RowVec<S> mb1_, vb1_, mb2_, vb2_, mb3_, vb3_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainingLog {
  ClassWeights class_weights{1.0, 1.0};
  std::vector<EpochRecord> epochs;

  std::string to_csv() const {
    std::ostringstream out;
    out << "epoch,train_loss,val_loss\n";
    for (const auto& e : epochs) {
      out << e.epoch << "," << format_exact(e.train_loss) << ",";
      if (e.val_loss) out << format_exact(*e.val_loss);
      out << "\n";
    }
    return out.str();
  }
};

struct TrainResult {
  ProbeModel model;
  TrainingLog log;
};

// Mini-batch AdamW for a fixed number of epochs. Returns the final-epoch
// model; the log carries the running-mean train loss and eval-mode val loss
// so the best-val epoch can be recovered.
inline TrainResult train_probe(const LayerMatrix& x_train, Labels y_train, const LayerMatrix& x_val, Labels y_val,
                               const TrainConfig& cfg) {
  if (static_cast<std::size_t>(x_train.rows()) != y_train.size() || static_cast<std::size_t>(x_val.rows()) != y_val.size()) {
    throw ContractError("train_probe: feature rows do not match label counts");
  }
  if (x_val.rows() > 0 && x_val.cols() != x_train.cols()) throw ContractError("train_probe: val column count differs");
  require_both_classes<TrainingError>(y_train, "train_probe");
  if (cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || cfg.weight_decay < 0.0) {
    throw ConfigError("train_probe: epochs, batch size and learning rate must be positive");
  }

  TrainResult r;
  r.log.class_weights = cfg.class_weights ? *cfg.class_weights : inverse_frequency_weights(y_train);
  r.model = init_mlp<float>(static_cast<std::size_t>(x_train.cols()), derive_seed(cfg.seed, 1), cfg.shape, cfg.dropout);
  AdamW<float> opt(r.model, cfg);
  Rng order_rng(derive_seed(cfg.seed, 2));
  Rng dropout_rng(derive_seed(cfg.seed, 3));

  const std::size_t n = y_train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  LayerMatrix xb;
  std::vector<std::uint8_t> yb;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const auto rows = static_cast<Eigen::Index>(end - start);
      xb.resize(rows, x_train.cols());
      yb.resize(end - start);
      for (std::size_t k = start; k < end; ++k) {
        xb.row(static_cast<Eigen::Index>(k - start)) = x_train.row(static_cast<Eigen::Index>(order[k]));
        yb[k - start] = y_train[order[k]];
      }
      auto lg = loss_and_grads(r.model, xb, yb, r.log.class_weights, &dropout_rng);
      loss_sum += lg.loss * static_cast<double>(rows);
      opt.step(r.model, lg.grads);
    }
    if (!r.model.all_finite()) throw TrainingError("probe parameters became non-finite at epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), std::nullopt};
    if (x_val.rows() > 0) rec.val_loss = weighted_loss(r.model, x_val, y_val, r.log.class_weights);
    r.log.epochs.push_back(rec);
  }
  return r;
}

// Class-1 (hallucination) probability, eval mode.
template <class S, class Derived>
std::vector<double> predict_proba(const Mlp<S>& m, const Eigen::MatrixBase<Derived>& x) {
  std::vector<double> p(static_cast<std::size_t>(x.rows()));
  constexpr Eigen::Index chunk = 2048;
  for (Eigen::Index start = 0; start < x.rows(); start += chunk) {
    const Eigen::Index rows = std::min(chunk, x.rows() - start);
    const auto logits = forward(m, x.middleRows(start, rows), false);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double diff = static_cast<double>(logits(i, 0)) - static_cast<double>(logits(i, 1));
      p[static_cast<std::size_t>(start + i)] = 1.0 / (1.0 + std::exp(diff));
    }
  }
  return p;
}

// ---- serialization ---------------------------------------------------------
// "QPRB" | version u32 | header_len u32 | JSON header | f32 blob
// (W1, b1, W2, b2, W3, b3; weights row-major fan_in x fan_out).

inline constexpr std::array<char, 4> kProbeMagic = {'Q', 'P', 'R', 'B'};

inline std::string encode_probe(const ProbeModel& m, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header = {{"format", "orthoprobe-probe"},
                           {"input_dim", m.input_dim()},
                           {"hidden", {m.hidden1(), m.hidden2()}},
                           {"outputs", kProbeOutputs},
                           {"dropout", format_exact(m.dropout)},
                           {"seed", m.seed},
                           {"param_order", {"W1", "b1", "W2", "b2", "W3", "b3"}},
                           {"meta", extra}};
  const std::string hj = header.dump();
  std::string out(kProbeMagic.begin(), kProbeMagic.end());
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(hj.size()));
  out += hj;
  auto put = [&](const auto& p) {
    std::vector<float> flat(static_cast<std::size_t>(p.size()));
    Eigen::Map<RowMatrix<float>>(flat.data(), p.rows(), p.cols()) = p;
    detail::put_f32s(out, flat);
  };
  put(m.w1), put(m.b1), put(m.w2), put(m.b2), put(m.w3), put(m.b3);
  return out;
}

struct LoadedProbe {
  ProbeModel model;
  nlohmann::json header;
};

inline LoadedProbe decode_probe(const std::string& bytes, const std::string& context = "probe") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kProbeMagic.data(), 4) != 0) throw FormatError(context + ": bad probe magic");
  detail::ByteReader rd(bytes, context);
  rd.raw(4, "magic");
  if (rd.u32("version") != 1) throw FormatError(context + ": unsupported probe version");
  const auto hlen = rd.u32("header length");
  LoadedProbe lp;
  try {
    lp.header = nlohmann::json::parse(rd.raw(hlen, "header"));
    const auto d = lp.header.at("input_dim").get<Eigen::Index>();
    const auto h1 = lp.header.at("hidden").at(0).get<Eigen::Index>();
    const auto h2 = lp.header.at("hidden").at(1).get<Eigen::Index>();
    lp.model.dropout = parse_exact(lp.header.at("dropout").get<std::string>());
    lp.model.seed = lp.header.at("seed").get<std::uint64_t>();
    auto take = [&](auto& p, Eigen::Index r, Eigen::Index c) {
      const auto flat = rd.f32s(static_cast<std::size_t>(r * c), "parameter blob");
      p = Eigen::Map<const RowMatrix<float>>(flat.data(), r, c);
    };
    const auto out = static_cast<Eigen::Index>(kProbeOutputs);
    take(lp.model.w1, d, h1), take(lp.model.b1, 1, h1);
    take(lp.model.w2, h1, h2), take(lp.model.b2, 1, h2);
    take(lp.model.w3, h2, out), take(lp.model.b3, 1, out);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(context + ": malformed probe header: " + e.what());
  }
  if (rd.remaining() != 0) throw CorruptionError(context + ": trailing bytes after parameter blob");
  if (!lp.model.all_finite()) throw ValidationError(context + ": non-finite probe parameters");
  return lp;
}

inline void write_probe(const ProbeModel& m, const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) {
  detail::write_file_bytes(path, encode_probe(m, extra));
}

inline LoadedProbe read_probe(const std::filesystem::path& path) { return decode_probe(detail::read_file_bytes(path), path.string()); }

}  // namespace orthoprobe

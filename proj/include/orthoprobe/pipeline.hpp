#pragma once

// Experiment orchestration: one flat config drives every stage. Each stage
// reads its inputs from disk and writes its outputs back, so stages can be
// rerun independently.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoprobe/artifact.hpp"
#include "orthoprobe/dataset.hpp"
#include "orthoprobe/decomposition.hpp"
#include "orthoprobe/features.hpp"
#include "orthoprobe/metrics.hpp"
#include "orthoprobe/probe.hpp"
#include "orthoprobe/representations.hpp"
#include "orthoprobe/selection.hpp"
#include "orthoprobe/synthetic.hpp"

namespace orthoprobe {

inline constexpr const char* kReportDirEnv = "ORTHOPROBE_REPORT_DIR";

struct ExperimentConfig {
  // paths
  std::string train;          // training container (in-domain)
  std::string ood;            // optional OOD container
  std::string out = "synthetic.qhs";
  std::string ood_out;        // synth: held-out domain container; default <out>.ood.qhs
  std::string artifact = "selection.json";
  std::string model = "probe.qprb";
  std::string log = "train_log.csv";
  std::string report_dir = "reports";

  // synth
  std::size_t n = 2000;
  std::size_t layers = 12;
  std::size_t dim = 64;
  std::vector<std::size_t> signal_layers;
  std::size_t signal_neurons = 10;
  double signal_strength = 0.7;
  double domain_shift = 1.0;
  double noise_std = 0.7;
  double hallucination_rate = 0.5;
  std::size_t domains = 4;
  int ood_domain = -1;  // >= 0: synth writes that domain to ood_out
  double question_norm = 4.0;
  double question_spread = 1.0;
  double align_base = 1.0;
  double align_jitter = 1.0;
  std::string model_name = "synthetic";

  // selection
  std::string variant = "orthogonal";
  std::size_t k = 15;
  double lambda = 1.0;
  double alpha = 0.9;
  double epsilon = kFisherEpsilon;
  std::string layer_strategy = "dpf";

  // training
  std::size_t epochs = 30;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double dropout = 0.1;
  std::size_t batch_size = 256;

  // splits and evaluation
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
  std::string eval_split = "test";

  // diagnose: without an OOD container, this domain of the train container is the target
  int target_domain = -1;

  // ablate
  std::vector<std::size_t> budgets;  // empty: {k}
  std::size_t repeats = 5;
  std::vector<double> alpha_sweep;

  std::uint64_t seed = 42;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, train, ood, out, ood_out, artifact, model, log, report_dir, n,
                                                layers, dim, signal_layers, signal_neurons, signal_strength, domain_shift,
                                                noise_std, hallucination_rate, domains, ood_domain, question_norm,
                                                question_spread, align_base, align_jitter, model_name, variant, k, lambda, alpha,
                                                epsilon, layer_strategy, epochs, lr, weight_decay, dropout, batch_size,
                                                train_frac, val_frac, test_frac, eval_split, target_domain, budgets, repeats,
                                                alpha_sweep, seed)

inline const std::vector<std::string>& path_keys() {
  static const std::vector<std::string> keys = {"train", "ood", "out", "ood_out", "artifact", "model", "log", "report_dir"};
  return keys;
}

// Rejects unknown keys and type mismatches with ConfigError.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json defaults = ExperimentConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    return j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

inline ExperimentConfig read_experiment_config(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return experiment_config_from_json(nlohmann::json::parse(bytes));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Everything except paths, so the same experiment in another directory
// hashes the same.
inline nlohmann::json settings_json(const ExperimentConfig& c) {
  nlohmann::json j = c;
  for (const auto& k : path_keys()) j.erase(k);
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(settings_json(c).dump())); }

inline SynthConfig synth_config(const ExperimentConfig& c) {
  SynthConfig s;
  s.num_samples = c.n;
  s.num_layers = c.layers;
  s.hidden_dim = c.dim;
  s.signal_layers = c.signal_layers;
  s.neurons_per_signal_layer = c.signal_neurons;
  s.signal_strength = c.signal_strength;
  s.domain_shift_strength = c.domain_shift;
  s.noise_std = c.noise_std;
  s.hallucination_rate = c.hallucination_rate;
  s.num_domains = c.domains;
  s.seed = c.seed;
  s.question_norm = c.question_norm;
  s.question_spread = c.question_spread;
  s.align_base = c.align_base;
  s.align_jitter = c.align_jitter;
  s.model_name = c.model_name;
  return s;
}

inline SelectionConfig selection_config(const ExperimentConfig& c) {
  SelectionConfig s;
  s.k = c.k;
  s.lambda = c.lambda;
  s.alpha = c.alpha;
  s.epsilon = c.epsilon;
  s.feature_set = parse_feature_set(c.variant);
  s.layer_strategy = parse_layer_strategy(c.layer_strategy);
  s.seed = c.seed;
  return s;
}

inline TrainConfig train_config(const ExperimentConfig& c) {
  TrainConfig t;
  t.epochs = c.epochs;
  t.learning_rate = c.lr;
  t.weight_decay = c.weight_decay;
  t.dropout = c.dropout;
  t.batch_size = c.batch_size;
  t.seed = c.seed;
  return t;
}

inline SplitFractions split_fractions(const ExperimentConfig& c) { return {c.train_frac, c.val_frac, c.test_frac}; }

inline std::uint64_t split_seed(const ExperimentConfig& c) { return derive_seed(c.seed, 0x73706c74ULL); }

// ---- stage plumbing ----------------------------------------------------------

// A dataset with its decomposition; banks view into it.
struct Prepared {
  HiddenStateDataset ds;
  std::vector<DecomposedLayer> dec;

  explicit Prepared(HiddenStateDataset d) : ds(std::move(d)), dec(decompose_dataset(ds)) {}
  Prepared(const Prepared&) = delete;
  Prepared& operator=(const Prepared&) = delete;

  RepresentationBank bank(const SelectionConfig& sc) const {
    return needs_random_projection(sc.feature_set) ? RepresentationBank(ds, dec, sc.seed) : RepresentationBank(ds, dec);
  }
};

// Re-throws library errors with the stage name prepended, keeping their type.
template <class F>
auto with_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    rethrow_with_context(e, stage);
  }
}

inline std::filesystem::path require_path(const std::string& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("missing required path '") + key + "'");
  return p;
}

inline std::filesystem::path require_existing(const std::string& p, const char* key) {
  auto path = require_path(p, key);
  if (!std::filesystem::exists(path)) throw IoError(std::string(key) + " '" + p + "' does not exist");
  return path;
}

inline void ensure_parent(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

inline std::filesystem::path report_path(const ExperimentConfig& c, const std::string& name) {
  std::filesystem::path dir = c.report_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(c.report_dir);
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  ensure_parent(p);
  detail::write_file_bytes(p, text);
}

inline void write_report_json(const std::filesystem::path& p, const ExperimentConfig& c, nlohmann::json body) {
  body["config_hash"] = config_hash(c);
  body["settings"] = settings_json(c);
  write_text(p, body.dump(2) + "\n");
}

// Fixed-precision cells so tables are diffable.
inline std::string fmt(double v, int digits = 6) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

inline std::string join(const std::vector<std::size_t>& v, const char* sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + std::to_string(v[i]);
  return s;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample std, 0 for a single run
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

inline HiddenStateDataset concat_datasets(const HiddenStateDataset& a, const HiddenStateDataset& b) {
  if (a.num_layers != b.num_layers || a.hidden_dim != b.hidden_dim) throw ContractError("cannot concatenate datasets of different shape");
  HiddenStateDataset out = a;
  out.num_samples += b.num_samples;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.domain_ids.insert(out.domain_ids.end(), b.domain_ids.begin(), b.domain_ids.end());
  out.hq.insert(out.hq.end(), b.hq.begin(), b.hq.end());
  out.ha.insert(out.ha.end(), b.ha.begin(), b.ha.end());
  return out;
}

// ---- synth -----------------------------------------------------------------------

struct SynthOutputs {
  std::filesystem::path container;
  std::filesystem::path ood_container;  // empty without a held-out domain
  std::filesystem::path truth;
};

inline std::filesystem::path truth_path(const std::filesystem::path& container) {
  auto p = container;
  return p.replace_extension(".truth.json");
}

inline std::filesystem::path default_ood_path(const std::filesystem::path& container) {
  auto p = container;
  return p.replace_extension(".ood.qhs");
}

inline SynthOutputs run_synth(const ExperimentConfig& c) {
  return with_stage("synth", [&] {
    const auto sc = synth_config(c);
    const auto result = generate(sc);
    SynthOutputs out;
    out.container = require_path(c.out, "out");
    out.truth = truth_path(out.container);
    ensure_parent(out.container);
    nlohmann::json truth = ground_truth_json(sc, result.truth);
    truth["config_hash"] = config_hash(c);
    if (c.ood_domain >= 0) {
      if (static_cast<std::size_t>(c.ood_domain) >= c.domains) throw ConfigError("ood_domain must be < domains");
      std::vector<int> in_domains, held = {c.ood_domain};
      for (int k = 0; k < static_cast<int>(c.domains); ++k)
        if (k != c.ood_domain) in_domains.push_back(k);
      const auto src = result.dataset.indices_in_domains(in_domains);
      const auto tgt = result.dataset.indices_in_domains(held);
      if (src.empty() || tgt.empty()) throw ConfigError("ood_domain split leaves an empty container");
      out.ood_container = c.ood_out.empty() ? default_ood_path(out.container) : std::filesystem::path(c.ood_out);
      ensure_parent(out.ood_container);
      write_container(result.dataset.subset(src), out.container);
      write_container(result.dataset.subset(tgt), out.ood_container);
      truth["ood_domain"] = c.ood_domain;
    } else {
      write_container(result.dataset, out.container);
    }
    write_text(out.truth, truth.dump(2) + "\n");
    return out;
  });
}

// ---- select / train ----------------------------------------------------------------

struct SplitData {
  HiddenStateDataset full;
  DatasetSplit split;
};

inline SplitData load_split(const ExperimentConfig& c) {
  SplitData s{read_container(require_existing(c.train, "train")), {}};
  s.split = split_dataset(s.full, split_fractions(c), split_seed(c));
  return s;
}

inline SelectionArtifact fit_on(const Prepared& p, const SelectionConfig& sc) { return fit_selection(p.bank(sc), sc); }

inline SelectionArtifact run_select(const ExperimentConfig& c) {
  return with_stage("select", [&] {
    const auto data = load_split(c);
    const Prepared train(data.full.subset(data.split.train_indices));
    const auto artifact = fit_on(train, selection_config(c));
    const auto path = require_path(c.artifact, "artifact");
    ensure_parent(path);
    write_artifact(artifact, path);
    return artifact;
  });
}

inline FeatureMatrix features_for(const Prepared& p, const SelectionArtifact& a) { return assemble(p.bank(a.config), a); }

inline nlohmann::json probe_meta(const ExperimentConfig& c, const SelectionArtifact& a, const TrainConfig& tc) {
  return {{"config_hash", config_hash(c)},
          {"feature_set", feature_set_name(a.config.feature_set)},
          {"num_features", a.num_features()},
          {"train_config", to_json(tc)}};
}

inline TrainResult train_on(const Prepared& train, const Prepared& val, const SelectionArtifact& a, const TrainConfig& tc) {
  const auto xtr = features_for(train, a);
  const auto xval = features_for(val, a);
  return train_probe(xtr.x, train.ds.labels, xval.x, val.ds.labels, tc);
}

inline TrainResult run_train(const ExperimentConfig& c) {
  return with_stage("train", [&] {
    const auto artifact = read_artifact(require_existing(c.artifact, "artifact"));
    const auto data = load_split(c);
    const Prepared train(data.full.subset(data.split.train_indices));
    const Prepared val(data.full.subset(data.split.val_indices));
    const auto tc = train_config(c);
    auto result = train_on(train, val, artifact, tc);
    const auto model_path = require_path(c.model, "model");
    ensure_parent(model_path);
    write_probe(result.model, model_path, probe_meta(c, artifact, tc));
    write_text(require_path(c.log, "log"), result.log.to_csv());
    return result;
  });
}

// ---- eval ---------------------------------------------------------------------------

struct EvalOutputs {
  std::string mode;  // "ood" or the split name
  EvalReport report;
  std::vector<double> scores;
  std::vector<std::size_t> indices;  // container row of each score
  std::filesystem::path report_file;
  std::filesystem::path scores_file;
};

inline std::vector<std::size_t> split_indices(const DatasetSplit& s, const std::string& name) {
  if (name == "train") return s.train_indices;
  if (name == "val") return s.val_indices;
  if (name == "test") return s.test_indices;
  throw ConfigError("eval_split must be train, val or test (got '" + name + "')");
}

// The artifact's own standardization is applied; nothing is refit and the
// evaluated labels are only read by the metric.
inline EvalOutputs run_eval(const ExperimentConfig& c) {
  return with_stage("eval", [&] {
    const auto artifact = read_artifact(require_existing(c.artifact, "artifact"));
    const auto probe = read_probe(require_existing(c.model, "model"));
    EvalOutputs out;
    HiddenStateDataset ds;
    if (!c.ood.empty()) {
      out.mode = "ood";
      ds = read_container(require_existing(c.ood, "ood"));
      out.indices.resize(ds.num_samples);
      std::iota(out.indices.begin(), out.indices.end(), std::size_t{0});
    } else {
      out.mode = c.eval_split;
      const auto data = load_split(c);
      out.indices = split_indices(data.split, c.eval_split);
      ds = data.full.subset(out.indices);
    }
    const Prepared p(std::move(ds));
    const auto fm = features_for(p, artifact);
    if (static_cast<std::size_t>(fm.x.cols()) != probe.model.input_dim()) {
      throw ContractError("model expects " + std::to_string(probe.model.input_dim()) + " features, artifact yields " +
                          std::to_string(fm.x.cols()));
    }
    out.scores = predict_proba(probe.model, fm.x);
    out.report = evaluate_scores(out.scores, p.ds.labels);

    const auto& r = out.report;
    out.report_file = report_path(c, "eval_" + out.mode + ".json");
    out.scores_file = report_path(c, "eval_" + out.mode + "_scores.csv");
    write_report_json(out.report_file, c,
                      {{"report", "eval"},
                       {"mode", out.mode},
                       {"feature_set", feature_set_name(artifact.config.feature_set)},
                       {"num_features", artifact.num_features()},
                       {"num_samples", r.num_samples},
                       {"auroc", r.auroc},
                       {"f1", r.f1},
                       {"threshold", r.threshold},
                       {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}}}});
    std::ostringstream csv;
    csv << "index,label,domain,score\n";
    for (std::size_t i = 0; i < out.scores.size(); ++i) {
      csv << out.indices[i] << "," << int(p.ds.labels[i]) << "," << int(p.ds.domain_ids[i]) << "," << format_exact(out.scores[i])
          << "\n";
    }
    write_text(out.scores_file, csv.str());
    return out;
  });
}

// ---- diagnose -----------------------------------------------------------------------

inline constexpr std::array<std::pair<FeatureSource, const char*>, 3> kDiagnosticSources = {
    {{FeatureSource::Answer, "h_a"}, {FeatureSource::Parallel, "h_par"}, {FeatureSource::Orthogonal, "v_perp"}}};

inline FeatureSet single_source_set(FeatureSource s) {
  switch (s) {
    case FeatureSource::Answer: return FeatureSet::AnswerOnly;
    case FeatureSource::Parallel: return FeatureSet::ParallelOnly;
    case FeatureSource::Orthogonal: return FeatureSet::Orthogonal;
    default: throw ContractError("no single-source feature set for this source");
  }
}

struct LayerShift {
  std::size_t layer = 0;
  double h_a = 0.0, h_par = 0.0, v_perp = 0.0;
};

struct DiagnosticsReport {
  std::vector<LayerShift> shifts;
  std::vector<CkaCell> cka;
  std::size_t source_samples = 0, target_samples = 0;
};

// Source and target of the domain comparison.
inline std::pair<HiddenStateDataset, HiddenStateDataset> diagnostic_domains(const ExperimentConfig& c) {
  auto train = read_container(require_existing(c.train, "train"));
  if (!c.ood.empty()) return {std::move(train), read_container(require_existing(c.ood, "ood"))};
  if (c.target_domain < 0) throw ConfigError("diagnose needs an ood container or a target_domain");
  std::vector<int> tgt = {c.target_domain}, src;
  for (std::uint8_t d : train.domain_ids) {
    if (d != c.target_domain && std::find(src.begin(), src.end(), int(d)) == src.end()) src.push_back(d);
  }
  auto si = train.indices_in_domains(src);
  auto ti = train.indices_in_domains(tgt);
  if (si.empty() || ti.empty()) throw ConfigError("target_domain " + std::to_string(c.target_domain) + " leaves an empty side");
  return {train.subset(si), train.subset(ti)};
}

// Columns of `source` over the given layers; `neurons` empty means all of them.
inline Eigen::MatrixXd gather_source(const RepresentationBank& bank, FeatureSource source, const std::vector<std::size_t>& layers,
                                     const std::vector<std::vector<std::uint32_t>>& neurons) {
  Eigen::Index cols = 0;
  for (std::size_t i = 0; i < layers.size(); ++i)
    cols += static_cast<Eigen::Index>(neurons.empty() ? bank.hidden_dim() : neurons[i].size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(bank.num_samples()), cols);
  Eigen::Index c = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto v = bank.view(source, layers[i]);
    if (neurons.empty()) {
      x.middleCols(c, v.cols()) = v.cast<double>();
      c += v.cols();
    } else {
      for (auto j : neurons[i]) x.col(c++) = v.col(j).cast<double>();
    }
  }
  return x;
}

inline DiagnosticsReport run_diagnose(const ExperimentConfig& c) {
  return with_stage("diagnose", [&] {
    auto [src_ds, tgt_ds] = diagnostic_domains(c);
    DiagnosticsReport rep;
    rep.source_samples = src_ds.num_samples;
    rep.target_samples = tgt_ds.num_samples;
    const Prepared src(std::move(src_ds));
    const Prepared tgt(std::move(tgt_ds));
    const RepresentationBank sb(src.ds, src.dec), tb(tgt.ds, tgt.dec);
    if (sb.num_layers() != tb.num_layers() || sb.hidden_dim() != tb.hidden_dim()) throw ContractError("source and target shapes differ");

    for (std::size_t l = 0; l < sb.num_layers(); ++l) {
      rep.shifts.push_back({l, centroid_shift(sb.view(FeatureSource::Answer, l), tb.view(FeatureSource::Answer, l)),
                            centroid_shift(sb.view(FeatureSource::Parallel, l), tb.view(FeatureSource::Parallel, l)),
                            centroid_shift(sb.view(FeatureSource::Orthogonal, l), tb.view(FeatureSource::Orthogonal, l))});
    }

    // CKA on the pooled sample; selections are fitted on the source side only.
    const Prepared pooled(concat_datasets(src.ds, tgt.ds));
    const RepresentationBank pb(pooled.ds, pooled.dec);
    std::vector<int> hall(pooled.ds.labels.begin(), pooled.ds.labels.end());
    std::vector<int> domain(pooled.ds.num_samples, 0);
    std::fill(domain.begin() + static_cast<std::ptrdiff_t>(src.ds.num_samples), domain.end(), 1);

    std::vector<std::size_t> all_layers(sb.num_layers());
    std::iota(all_layers.begin(), all_layers.end(), std::size_t{0});
    std::vector<CkaInput> inputs;
    for (const auto& [source, name] : kDiagnosticSources) {
      auto sc = selection_config(c);
      sc.feature_set = single_source_set(source);
      const auto a = fit_selection(sb, sc);
      std::vector<std::vector<std::uint32_t>> neurons;
      for (const auto& s : a.layers) neurons.push_back(s.v_neurons);
      inputs.push_back({name, "all-layers", gather_source(pb, source, all_layers, {})});
      inputs.push_back({name, "fisher-layers", gather_source(pb, source, a.layer_indices(), {})});
      inputs.push_back({name, "fisher-layers-neurons", gather_source(pb, source, a.layer_indices(), neurons)});
    }
    rep.cka = cka_alignment_suite(inputs, hall, domain);

    nlohmann::json shifts = nlohmann::json::array(), cka = nlohmann::json::array();
    std::ostringstream shift_csv, cka_csv;
    shift_csv << "layer,h_a,h_par,v_perp\n";
    for (const auto& s : rep.shifts) {
      shifts.push_back({{"layer", s.layer}, {"h_a", s.h_a}, {"h_par", s.h_par}, {"v_perp", s.v_perp}});
      shift_csv << s.layer << "," << fmt(s.h_a) << "," << fmt(s.h_par) << "," << fmt(s.v_perp) << "\n";
    }
    cka_csv << "representation,regime,num_features,cka_hall,cka_domain,selectivity\n";
    for (const auto& cell : rep.cka) {
      cka.push_back({{"representation", cell.representation},
                     {"regime", cell.regime},
                     {"num_features", cell.num_features},
                     {"cka_hall", cell.cka_hall},
                     {"cka_domain", cell.cka_domain},
                     {"selectivity", cell.selectivity ? nlohmann::json(*cell.selectivity) : nlohmann::json(nullptr)}});
      cka_csv << cell.representation << "," << cell.regime << "," << cell.num_features << "," << fmt(cell.cka_hall) << ","
              << fmt(cell.cka_domain) << "," << (cell.selectivity ? fmt(*cell.selectivity) : std::string("inf")) << "\n";
    }
    write_report_json(report_path(c, "diagnostics.json"), c,
                      {{"report", "diagnostics"},
                       {"source_samples", rep.source_samples},
                       {"target_samples", rep.target_samples},
                       {"centroid_shift", shifts},
                       {"cka", cka}});
    write_text(report_path(c, "centroid_shift.csv"), shift_csv.str());
    write_text(report_path(c, "cka.csv"), cka_csv.str());
    return rep;
  });
}

// ---- ablate -------------------------------------------------------------------------

struct RunScore {
  double auroc = 0.0;
  double f1 = 0.0;
  std::size_t num_features = 0;
  std::vector<std::size_t> layers;
};

struct AblationRow {
  std::string method;
  std::size_t k = 0;
  std::vector<RunScore> runs;

  MeanStd auroc() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.auroc);
    return mean_std(v);
  }
  MeanStd f1() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.f1);
    return mean_std(v);
  }
};

struct AblationReport {
  std::string eval_mode;
  std::vector<AblationRow> features;
  std::vector<AblationRow> layers;
  std::vector<AblationRow> alpha;  // method holds the alpha value
};

// Train/val/eval sets shared by every ablation run.
struct AblationData {
  std::unique_ptr<Prepared> train, val, eval;
  std::string eval_mode;
};

inline AblationData load_ablation_data(const ExperimentConfig& c) {
  const auto data = load_split(c);
  AblationData d;
  d.train = std::make_unique<Prepared>(data.full.subset(data.split.train_indices));
  d.val = std::make_unique<Prepared>(data.full.subset(data.split.val_indices));
  if (!c.ood.empty()) {
    d.eval = std::make_unique<Prepared>(read_container(require_existing(c.ood, "ood")));
    d.eval_mode = "ood";
  } else {
    d.eval = std::make_unique<Prepared>(data.full.subset(data.split.test_indices));
    d.eval_mode = "test";
  }
  return d;
}

inline RunScore score_run(const AblationData& d, const SelectionConfig& sc, const TrainConfig& tc) {
  const auto a = fit_on(*d.train, sc);
  const auto trained = train_on(*d.train, *d.val, a, tc);
  const auto x = features_for(*d.eval, a);
  const auto r = evaluate_scores(predict_proba(trained.model, x.x), d.eval->ds.labels);
  return {r.auroc, r.f1, a.num_features(), a.layer_indices()};
}

inline std::uint64_t repeat_seed(std::uint64_t seed, std::size_t r) { return derive_seed(seed, 0x726570ULL, r); }

inline std::string ablation_csv(const std::vector<AblationRow>& rows, const char* first_col, bool with_k) {
  std::ostringstream out;
  out << first_col << (with_k ? ",k" : "") << ",runs,auroc_mean,auroc_std,f1_mean,f1_std,num_features,layers\n";
  for (const auto& row : rows) {
    const auto au = row.auroc(), f = row.f1();
    std::string layers;
    for (std::size_t i = 0; i < row.runs.size(); ++i) layers += (i ? "|" : "") + join(row.runs[i].layers);
    out << row.method;
    if (with_k) out << "," << row.k;
    out << "," << row.runs.size() << "," << fmt(au.mean) << "," << fmt(au.std) << "," << fmt(f.mean) << "," << fmt(f.std) << ","
        << (row.runs.empty() ? 0 : row.runs.front().num_features) << "," << layers << "\n";
  }
  return out.str();
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& row : rows) {
    auto runs = nlohmann::json::array();
    for (const auto& r : row.runs) runs.push_back({{"auroc", r.auroc}, {"f1", r.f1}, {"num_features", r.num_features}, {"layers", r.layers}});
    const auto au = row.auroc(), f = row.f1();
    arr.push_back({{"method", row.method},
                   {"k", row.k},
                   {"auroc_mean", au.mean},
                   {"auroc_std", au.std},
                   {"f1_mean", f.mean},
                   {"f1_std", f.std},
                   {"runs", runs}});
  }
  return arr;
}

// Feature ablation holds the selection settings fixed and swaps the sources;
// layer ablation holds the feature set fixed (config variant) and swaps the
// layer strategy. Both evaluate on the OOD container when one is given.
inline AblationReport run_ablate(const ExperimentConfig& c) {
  return with_stage("ablate", [&] {
    const auto d = load_ablation_data(c);
    const auto base = selection_config(c);
    const auto tc = train_config(c);
    if (c.repeats == 0) throw ConfigError("repeats must be >= 1");
    AblationReport rep;
    rep.eval_mode = d.eval_mode;

    const std::array<FeatureSet, 5> feature_rows = {FeatureSet::RandomProjection, FeatureSet::QuestionOnly, FeatureSet::AnswerOnly,
                                                    FeatureSet::QuestionAnswer, FeatureSet::Orthogonal};
    for (auto fs : feature_rows) {
      AblationRow row{std::string(feature_set_name(fs)), std::min(base.k, d.train->ds.num_layers), {}};
      auto sc = base;
      sc.feature_set = fs;
      const std::size_t runs = needs_random_projection(fs) ? c.repeats : 1;
      for (std::size_t r = 0; r < runs; ++r) {
        if (runs > 1) sc.seed = repeat_seed(c.seed, r);
        row.runs.push_back(score_run(d, sc, tc));
      }
      rep.features.push_back(std::move(row));
    }

    const std::array<LayerStrategy, 5> layer_rows = {LayerStrategy::LastN, LayerStrategy::PureFisher, LayerStrategy::Uniform,
                                                     LayerStrategy::Random, LayerStrategy::Dpf};
    std::vector<std::size_t> budgets = c.budgets.empty() ? std::vector<std::size_t>{c.k} : c.budgets;
    for (std::size_t k : budgets) {
      for (auto strategy : layer_rows) {
        auto sc = base;
        sc.k = k;
        sc.layer_strategy = strategy;
        AblationRow row{std::string(layer_strategy_name(strategy)), std::min(k, d.train->ds.num_layers), {}};
        const std::size_t runs = strategy == LayerStrategy::Random ? c.repeats : 1;
        for (std::size_t r = 0; r < runs; ++r) {
          if (runs > 1) sc.seed = repeat_seed(c.seed, r);
          row.runs.push_back(score_run(d, sc, tc));
        }
        rep.layers.push_back(std::move(row));
      }
    }

    for (double alpha : c.alpha_sweep) {
      auto sc = base;
      sc.alpha = alpha;
      rep.alpha.push_back({format_exact(alpha), std::min(base.k, d.train->ds.num_layers), {score_run(d, sc, tc)}});
    }

    write_text(report_path(c, "feature_ablation.csv"), ablation_csv(rep.features, "method", false));
    write_text(report_path(c, "layer_ablation.csv"), ablation_csv(rep.layers, "method", true));
    nlohmann::json body = {{"report", "ablation"},
                           {"eval_mode", rep.eval_mode},
                           {"feature_ablation", ablation_json(rep.features)},
                           {"layer_ablation", ablation_json(rep.layers)}};
    if (!rep.alpha.empty()) {
      write_text(report_path(c, "alpha_sweep.csv"), ablation_csv(rep.alpha, "alpha", false));
      body["alpha_sweep"] = ablation_json(rep.alpha);
    }
    write_report_json(report_path(c, "ablation.json"), c, body);
    return rep;
  });
}

}  // namespace orthoprobe

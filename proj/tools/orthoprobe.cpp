// orthoprobe: command-line driver for the probe feature pipeline.
//
// Every ExperimentConfig key is also a flag (underscores become dashes).
// Precedence: built-in defaults < --config file < $ORTHOPROBE_REPORT_DIR < flags.
// Exit codes: 0 ok, 2 usage/config, 3 data/format, 4 numerical/contract.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "orthoprobe/pipeline.hpp"

namespace op = orthoprobe;
using nlohmann::json;

namespace {

const std::map<std::string, std::string> kHelp = {
    {"train", "training container (QHS1)"},
    {"ood", "out-of-domain container; eval/diagnose/ablate use it when set"},
    {"out", "synth: output container"},
    {"ood_out", "synth: held-out domain container (default <out>.ood.qhs)"},
    {"artifact", "selection artifact JSON"},
    {"model", "probe model file"},
    {"log", "training log CSV"},
    {"report_dir", "report directory (env " + std::string(op::kReportDirEnv) + ")"},
    {"n", "synth: number of samples"},
    {"layers", "synth: number of layers"},
    {"dim", "synth: hidden dimension"},
    {"signal_layers", "synth: comma-separated planted layers"},
    {"signal_neurons", "synth: planted neurons per signal layer"},
    {"signal_strength", "synth: planted signal magnitude"},
    {"domain_shift", "synth: question-aligned domain shift strength"},
    {"noise_std", "synth: isotropic answer noise"},
    {"hallucination_rate", "synth: P(label = 1)"},
    {"domains", "synth: number of domains"},
    {"ood_domain", "synth: write this domain to a separate container (-1: off)"},
    {"question_norm", "synth: question mean norm"},
    {"question_spread", "synth: per-sample question spread"},
    {"align_base", "synth: base question-aligned coefficient"},
    {"align_jitter", "synth: per-sample jitter of that coefficient"},
    {"model_name", "synth: model name stored in the container"},
    {"variant", "feature set: orthogonal, joint, q-only, a-only, qa-no-proj, random-proj, parallel-only"},
    {"k", "layer budget K"},
    {"lambda", "diversity penalty in [0, 1]"},
    {"alpha", "cumulative Fisher mass kept per layer, (0, 1]"},
    {"epsilon", "Fisher denominator stabilizer"},
    {"layer_strategy", "dpf, pure-fisher, last-n, uniform, random"},
    {"epochs", "training epochs"},
    {"lr", "AdamW learning rate"},
    {"weight_decay", "AdamW decoupled weight decay"},
    {"dropout", "dropout probability"},
    {"batch_size", "mini-batch size"},
    {"train_frac", "train split fraction"},
    {"val_frac", "validation split fraction"},
    {"test_frac", "test split fraction"},
    {"eval_split", "eval without --ood: train, val or test"},
    {"target_domain", "diagnose without --ood: target domain id"},
    {"budgets", "ablate: comma-separated layer budgets (default: k)"},
    {"repeats", "ablate: seeds for the randomized rows"},
    {"alpha_sweep", "ablate: comma-separated alpha values"},
    {"seed", "master seed"},
};

std::string dashed(std::string key) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  return key;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) throw op::ConfigError("--" + dashed(key) + ": cannot parse '" + v + "'");
  return out;
}

// Flag text -> JSON of the same type as the default value.
json flag_value(const std::string& key, const std::string& v, const json& def) {
  if (def.is_string()) return v;
  if (def.is_number_unsigned()) return parse_number<std::uint64_t>(key, v);
  if (def.is_number_integer()) return parse_number<long long>(key, v);
  if (def.is_number_float()) return parse_number<double>(key, v);
  if (def.is_array()) {
    json arr = json::array();
    std::size_t start = 0;
    while (start <= v.size() && !v.empty()) {
      const auto comma = v.find(',', start);
      const std::string item = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (key == "alpha_sweep") arr.push_back(parse_number<double>(key, item));
      else arr.push_back(parse_number<std::uint64_t>(key, item));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return arr;
  }
  throw op::ConfigError("--" + dashed(key) + ": unsupported flag type");
}

struct Command {
  std::string name;
  std::string help;
  std::vector<std::string> required;  // keys that must come from the file or a flag
  CLI::App* app = nullptr;
};

void require(const Command& cmd, const std::set<std::string>& provided) {
  for (const auto& key : cmd.required) {
    if (!provided.count(key)) throw op::ConfigError("missing required flag --" + dashed(key));
  }
}

int run(const Command& cmd, const op::ExperimentConfig& c) {
  if (cmd.name == "synth") {
    const auto out = op::run_synth(c);
    std::cout << "wrote " << out.container.string();
    if (!out.ood_container.empty()) std::cout << " and " << out.ood_container.string();
    std::cout << " (truth: " << out.truth.string() << ")\n";
  } else if (cmd.name == "select") {
    const auto a = op::run_select(c);
    std::cout << "selected layers [" << op::join(a.layer_indices()) << "], " << a.num_features() << " features -> " << c.artifact
              << "\n";
  } else if (cmd.name == "train") {
    const auto r = op::run_train(c);
    const auto& e = r.log.epochs;
    std::cout << "trained " << e.size() << " epochs, train loss " << op::fmt(e.front().train_loss) << " -> "
              << op::fmt(e.back().train_loss) << " -> " << c.model << "\n";
  } else if (cmd.name == "eval") {
    const auto r = op::run_eval(c);
    std::cout << r.mode << ": AUROC " << op::fmt(r.report.auroc, 4) << "  F1 " << op::fmt(r.report.f1, 4) << "  N "
              << r.report.num_samples << " -> " << r.report_file.string() << "\n";
  } else if (cmd.name == "diagnose") {
    const auto r = op::run_diagnose(c);
    std::cout << "layer  h_a       h_par     v_perp\n";
    for (const auto& s : r.shifts)
      std::cout << s.layer << "  " << op::fmt(s.h_a, 4) << "  " << op::fmt(s.h_par, 4) << "  " << op::fmt(s.v_perp, 4) << "\n";
    for (const auto& cell : r.cka)
      std::cout << cell.representation << " " << cell.regime << ": selectivity "
                << (cell.selectivity ? op::fmt(*cell.selectivity, 4) : std::string("inf")) << "\n";
  } else if (cmd.name == "ablate") {
    const auto r = op::run_ablate(c);
    std::cout << "feature ablation (" << r.eval_mode << ")\n";
    for (const auto& row : r.features)
      std::cout << "  " << row.method << ": " << op::fmt(row.auroc().mean, 4) << " +- " << op::fmt(row.auroc().std, 4) << "\n";
    std::cout << "layer ablation (" << r.eval_mode << ")\n";
    for (const auto& row : r.layers)
      std::cout << "  " << row.method << " k=" << row.k << ": " << op::fmt(row.auroc().mean, 4) << " +- "
                << op::fmt(row.auroc().std, 4) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hallucination-probe features from question-orthogonal hidden-state components"};
  app.require_subcommand(1);

  std::vector<Command> commands = {
      {"synth", "generate a synthetic container with planted signal", {"n", "layers", "dim"}},
      {"select", "fit layer/neuron selection on the train split", {"train"}},
      {"train", "train the probe on the selected features", {"train"}},
      {"eval", "evaluate a trained probe (test split or --ood)", {}},
      {"diagnose", "centroid shift and CKA diagnostics", {"train"}},
      {"ablate", "feature and layer-selection ablations", {"train"}},
  };

  const json defaults = op::ExperimentConfig{};
  std::map<std::string, std::string> raw;
  std::string config_path;
  for (auto& cmd : commands) {
    cmd.app = app.add_subcommand(cmd.name, cmd.help);
    cmd.app->add_option("--config", config_path, "flat JSON experiment config");
    for (const auto& [key, value] : defaults.items()) {
      auto it = kHelp.find(key);
      cmd.app->add_option("--" + dashed(key), raw[key], it == kHelp.end() ? key : it->second);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const Command* cmd = nullptr;
  for (const auto& c : commands)
    if (c.app->parsed()) cmd = &c;

  try {
    json merged = defaults;
    std::set<std::string> provided;
    if (!config_path.empty()) {
      const json file = op::read_experiment_config(config_path);
      const auto given = json::parse(op::detail::read_file_bytes(config_path));
      for (const auto& [key, value] : given.items()) provided.insert(key);
      merged = file;
    }
    if (const char* env = std::getenv(op::kReportDirEnv); env && *env) merged["report_dir"] = env;
    for (const auto& [key, value] : defaults.items()) {
      if (cmd->app->get_option("--" + dashed(key))->count() == 0) continue;
      merged[key] = flag_value(key, raw[key], value);
      provided.insert(key);
    }
    require(*cmd, provided);
    if (cmd->name == "eval" && !provided.count("train") && !provided.count("ood")) {
      throw op::ConfigError("eval needs --train (split evaluation) or --ood");
    }
    return run(*cmd, op::experiment_config_from_json(merged));
  } catch (const op::ConfigError& e) {
    std::cerr << "orthoprobe " << cmd->name << ": usage error: " << e.what() << "\n";
    return 2;
  } catch (const op::DataError& e) {
    std::cerr << "orthoprobe " << cmd->name << ": data error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "orthoprobe " << cmd->name << ": data error: " << e.what() << "\n";
    return 3;
  } catch (const op::NumericalError& e) {
    std::cerr << "orthoprobe " << cmd->name << ": numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "orthoprobe " << cmd->name << ": error: " << e.what() << "\n";
    return 1;
  }
}

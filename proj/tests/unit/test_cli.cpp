// End-to-end CLI behaviour. One small synthetic benchmark is generated per
// suite; each test works in its own temp directory.

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "orthoprobe/dataset.hpp"

using testing_util::read_bytes;
using testing_util::run_command;
using testing_util::TempDir;
using Row = std::map<std::string, std::string>;

namespace {

const std::string kCli = ORTHOPROBE_CLI;
const std::string kSynthFlags = "--n 800 --layers 6 --dim 16 --seed 5";

testing_util::ProcessResult cli(const TempDir& dir, const std::string& args, const std::string& env = "") {
  return run_command("cd '" + dir.path().string() + "' && " + env + " '" + kCli + "' " + args);
}

std::vector<Row> read_csv(const std::string& path) {
  std::ifstream in(path);
  std::vector<Row> rows;
  std::string line;
  std::vector<std::string> header;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) return rows;
  header = split(line);
  while (std::getline(in, line)) {
    const auto cells = split(line);
    Row r;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) r[header[i]] = cells[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

nlohmann::json read_json(const std::string& path) { return nlohmann::json::parse(read_bytes(path)); }

#define ASSERT_CLI_OK(r) ASSERT_EQ((r).exit_code, 0) << (r).output

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new TempDir("cli_data");
    const auto r = cli(*data_, "synth " + kSynthFlags + " --out s.qhs --ood-domain 3");
    ASSERT_EQ(r.exit_code, 0) << r.output;
  }
  static void TearDownTestSuite() {
    delete data_;
    data_ = nullptr;
  }
  static std::string train_path() { return *data_ / "s.qhs"; }
  static std::string ood_path() { return *data_ / "s.ood.qhs"; }
  static std::string data_flags() { return "--train '" + train_path() + "' --ood '" + ood_path() + "'"; }

  static TempDir* data_;
};

TempDir* Cli::data_ = nullptr;

}  // namespace

TEST_F(Cli, SynthWritesContainersAndTruth) {
  TempDir dir("cli");
  const auto r = cli(dir, "synth --n 100 --layers 3 --dim 8");
  ASSERT_CLI_OK(r);
  const auto ds = orthoprobe::read_container(dir / "synthetic.qhs");
  EXPECT_EQ(ds.num_samples, 100u);
  EXPECT_EQ(ds.num_layers, 3u);
  EXPECT_EQ(ds.hidden_dim, 8u);
  const auto truth = read_json(dir / "synthetic.truth.json");
  EXPECT_EQ(truth.at("format"), "orthoprobe-synth-truth");
  EXPECT_TRUE(truth.contains("config_hash"));
}

TEST_F(Cli, SynthHoldsOutOodDomain) {
  const auto in = orthoprobe::read_container(train_path());
  const auto ood = orthoprobe::read_container(ood_path());
  EXPECT_EQ(in.num_samples + ood.num_samples, 800u);
  for (auto d : in.domain_ids) EXPECT_NE(d, 3);
  for (auto d : ood.domain_ids) EXPECT_EQ(d, 3);
}

TEST_F(Cli, SynthMissingRequiredFlagExitsTwo) {
  TempDir dir("cli");
  const auto r = cli(dir, "synth --layers 3 --dim 8");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("--n"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "synthetic.qhs"));
}

TEST_F(Cli, SynthIsByteDeterministic) {
  TempDir a("cli_a"), b("cli_b");
  ASSERT_CLI_OK(cli(a, "synth " + kSynthFlags + " --out x.qhs --ood-domain 1"));
  ASSERT_CLI_OK(cli(b, "synth " + kSynthFlags + " --out x.qhs --ood-domain 1"));
  for (const char* f : {"x.qhs", "x.ood.qhs", "x.truth.json"}) EXPECT_EQ(read_bytes(a / f), read_bytes(b / f)) << f;
}

TEST_F(Cli, SelectHonoursBudgetAndVariant) {
  TempDir dir("cli");
  ASSERT_CLI_OK(cli(dir, "select --train '" + train_path() + "' --k 4"));
  auto a = read_json(dir / "selection.json");
  EXPECT_EQ(a.at("layers").size(), 4u);
  for (const auto& l : a.at("layers")) {
    EXPECT_TRUE(l.at("q_neurons").empty());
    EXPECT_FALSE(l.at("v_neurons").empty());
  }
  ASSERT_CLI_OK(cli(dir, "select --train '" + train_path() + "' --k 15 --artifact big.json"));
  EXPECT_EQ(read_json(dir / "big.json").at("layers").size(), 6u);
  ASSERT_CLI_OK(cli(dir, "select --train '" + train_path() + "' --k 2 --variant joint --artifact joint.json"));
  for (const auto& l : read_json(dir / "joint.json").at("layers")) EXPECT_FALSE(l.at("q_neurons").empty());
}

TEST_F(Cli, SelectLambdaZeroIsTopKFisher) {
  TempDir dir("cli");
  ASSERT_CLI_OK(cli(dir, "select --train '" + train_path() + "' --k 3 --lambda 0"));
  const auto a = read_json(dir / "selection.json");
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t l = 0; l < a.at("layer_scores").size(); ++l)
    scored.push_back({std::stod(a.at("layer_scores")[l].get<std::string>()), l});
  std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  std::vector<std::size_t> picked, expect;
  for (const auto& l : a.at("layers")) picked.push_back(l.at("layer").get<std::size_t>());
  for (std::size_t i = 0; i < 3; ++i) expect.push_back(scored[i].second);
  EXPECT_EQ(picked, expect);
}

TEST_F(Cli, TrainWritesLogAndDeterministicModel) {
  TempDir dir("cli");
  ASSERT_CLI_OK(cli(dir, "select --train '" + train_path() + "' --k 3"));
  ASSERT_CLI_OK(cli(dir, "train --train '" + train_path() + "'"));
  ASSERT_CLI_OK(cli(dir, "train --train '" + train_path() + "' --model again.qprb --log again.csv"));
  EXPECT_EQ(read_bytes(dir / "probe.qprb"), read_bytes(dir / "again.qprb"));
  EXPECT_EQ(read_bytes(dir / "train_log.csv"), read_bytes(dir / "again.csv"));
  const auto log = read_csv(dir / "train_log.csv");
  ASSERT_EQ(log.size(), 30u);
  EXPECT_LT(std::stod(log.back().at("train_loss")), std::stod(log.front().at("train_loss")));
  EXPECT_FALSE(log.front().at("val_loss").empty());
}

TEST_F(Cli, EvalScoresSplitsWithoutTouchingInputs) {
  TempDir dir("cli");
  ASSERT_CLI_OK(cli(dir, "select --train '" + train_path() + "' --k 3"));
  ASSERT_CLI_OK(cli(dir, "train --train '" + train_path() + "'"));
  const auto artifact = read_bytes(dir / "selection.json");
  const auto model = read_bytes(dir / "probe.qprb");
  ASSERT_CLI_OK(cli(dir, "eval --train '" + train_path() + "' --eval-split train"));
  const auto rep = read_json(dir / "reports/eval_train.json");
  EXPECT_GT(rep.at("auroc").get<double>(), 0.95);
  const auto scores = read_csv(dir / "reports/eval_train_scores.csv");
  EXPECT_EQ(scores.size(), rep.at("num_samples").get<std::size_t>());
  ASSERT_CLI_OK(cli(dir, "eval --train '" + train_path() + "'"));
  EXPECT_EQ(read_csv(dir / "reports/eval_test_scores.csv").size(), read_json(dir / "reports/eval_test.json").at("num_samples").get<std::size_t>());
  EXPECT_EQ(read_bytes(dir / "selection.json"), artifact);
  EXPECT_EQ(read_bytes(dir / "probe.qprb"), model);
}

TEST_F(Cli, OodScoresIgnoreTargetLabels) {
  TempDir dir("cli");
  ASSERT_CLI_OK(cli(dir, "select --train '" + train_path() + "' --k 3"));
  ASSERT_CLI_OK(cli(dir, "train --train '" + train_path() + "' --epochs 5"));
  ASSERT_CLI_OK(cli(dir, "eval --ood '" + ood_path() + "'"));
  auto ds = orthoprobe::read_container(ood_path());
  EXPECT_EQ(read_csv(dir / "reports/eval_ood_scores.csv").size(), ds.num_samples);
  std::reverse(ds.labels.begin(), ds.labels.end());
  ds.labels[0] = 0;
  ds.labels[1] = 1;
  orthoprobe::write_container(ds, dir / "flipped.qhs");
  ASSERT_CLI_OK(cli(dir, "eval --ood flipped.qhs --report-dir flipped"));
  const auto a = read_csv(dir / "reports/eval_ood_scores.csv");
  const auto b = read_csv(dir / "flipped/eval_ood_scores.csv");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].at("score"), b[i].at("score"));
}

TEST_F(Cli, DiagnoseOrdersShiftsAndFillsCkaGrid) {
  TempDir dir("cli");
  ASSERT_CLI_OK(cli(dir, "diagnose " + data_flags()));
  const auto shifts = read_csv(dir / "reports/centroid_shift.csv");
  ASSERT_EQ(shifts.size(), 6u);
  for (const auto& r : shifts) {
    EXPECT_GE(std::stod(r.at("h_par")), std::stod(r.at("h_a"))) << r.at("layer");
    EXPECT_GE(std::stod(r.at("h_a")), std::stod(r.at("v_perp"))) << r.at("layer");
  }
  const auto cka = read_csv(dir / "reports/cka.csv");
  ASSERT_EQ(cka.size(), 9u);
  std::map<std::string, std::map<std::string, double>> sel;
  for (const auto& r : cka) sel[r.at("regime")][r.at("representation")] = std::stod(r.at("selectivity"));
  ASSERT_EQ(sel.size(), 3u);
  for (auto& [regime, m] : sel) {
    EXPECT_GT(m.at("v_perp"), m.at("h_a")) << regime;
    EXPECT_GT(m.at("v_perp"), m.at("h_par")) << regime;
  }
}

TEST_F(Cli, DiagnoseWithoutTargetIsConfigError) {
  TempDir dir("cli");
  EXPECT_EQ(cli(dir, "diagnose --train '" + train_path() + "'").exit_code, 2);
  ASSERT_CLI_OK(cli(dir, "diagnose --train '" + train_path() + "' --target-domain 2"));
}

TEST_F(Cli, AblateReportsAllRows) {
  TempDir dir("cli");
  ASSERT_CLI_OK(cli(dir, "ablate " + data_flags() + " --k 3 --budgets 2,3 --alpha-sweep 0.5,0.95 --epochs 10 --repeats 5"));
  const auto feat = read_csv(dir / "reports/feature_ablation.csv");
  ASSERT_EQ(feat.size(), 5u);
  std::map<std::string, Row> by;
  for (const auto& r : feat) by[r.at("method")] = r;
  for (const char* m : {"random-proj", "q-only", "a-only", "qa-no-proj", "orthogonal"}) ASSERT_TRUE(by.count(m)) << m;
  EXPECT_EQ(by["random-proj"].at("runs"), "5");
  EXPECT_EQ(std::count(by["random-proj"].at("layers").begin(), by["random-proj"].at("layers").end(), '|'), 4);
  EXPECT_GT(std::stod(by["orthogonal"].at("auroc_mean")), std::stod(by["qa-no-proj"].at("auroc_mean")));
  const auto layer = read_csv(dir / "reports/layer_ablation.csv");
  EXPECT_EQ(layer.size(), 10u);
  for (const auto& r : layer) EXPECT_EQ(r.at("runs"), r.at("method") == "random" ? "5" : "1");
  EXPECT_EQ(read_csv(dir / "reports/alpha_sweep.csv").size(), 2u);

  const auto j = read_json(dir / "reports/ablation.json");
  const auto& rows = j.at("feature_ablation");
  for (const auto& row : rows) {
    if (row.at("method") != "random-proj") continue;
    std::vector<double> au;
    for (const auto& run : row.at("runs")) au.push_back(run.at("auroc").get<double>());
    ASSERT_EQ(au.size(), 5u);
    double mean = 0.0;
    for (double v : au) mean += v / 5.0;
    double ss = 0.0;
    for (double v : au) ss += (v - mean) * (v - mean);
    EXPECT_NEAR(row.at("auroc_mean").get<double>(), mean, 1e-12);
    EXPECT_NEAR(row.at("auroc_std").get<double>(), std::sqrt(ss / 4.0), 1e-12);
  }
}

TEST_F(Cli, ExitCodes) {
  TempDir dir("cli");
  EXPECT_EQ(cli(dir, "select --train missing.qhs").exit_code, 3);
  orthoprobe::detail::write_file_bytes(dir / "junk.qhs", "QHS1 but not really");
  EXPECT_EQ(cli(dir, "select --train junk.qhs").exit_code, 3);
  auto ds = orthoprobe::read_container(train_path());
  std::fill(ds.labels.begin(), ds.labels.end(), std::uint8_t{0});
  orthoprobe::write_container(ds, dir / "one_class.qhs");
  EXPECT_EQ(cli(dir, "select --train one_class.qhs").exit_code, 4);
  EXPECT_EQ(cli(dir, "select --train '" + train_path() + "' --variant nonsense").exit_code, 2);
  EXPECT_EQ(cli(dir, "select --train '" + train_path() + "' --k abc").exit_code, 2);
  EXPECT_EQ(cli(dir, "frobnicate").exit_code, 2);
  EXPECT_EQ(cli(dir, "--help").exit_code, 0);
}

TEST_F(Cli, ConfigFileEnvAndFlagPrecedence) {
  TempDir dir("cli");
  orthoprobe::detail::write_file_bytes(dir / "cfg.json", "{\"train\": \"" + train_path() + "\", \"k\": 2, \"report_dir\": \"from_file\"}");
  ASSERT_CLI_OK(cli(dir, "select --config cfg.json"));
  EXPECT_EQ(read_json(dir / "selection.json").at("layers").size(), 2u);
  ASSERT_CLI_OK(cli(dir, "select --config cfg.json --k 3"));
  EXPECT_EQ(read_json(dir / "selection.json").at("layers").size(), 3u);

  ASSERT_CLI_OK(cli(dir, "diagnose --config cfg.json --target-domain 1"));
  EXPECT_TRUE(std::filesystem::exists(dir / "from_file/cka.csv"));
  ASSERT_CLI_OK(cli(dir, "diagnose --config cfg.json --target-domain 1", "ORTHOPROBE_REPORT_DIR=from_env"));
  EXPECT_TRUE(std::filesystem::exists(dir / "from_env/cka.csv"));
  ASSERT_CLI_OK(cli(dir, "diagnose --config cfg.json --target-domain 1 --report-dir from_flag", "ORTHOPROBE_REPORT_DIR=from_env"));
  EXPECT_TRUE(std::filesystem::exists(dir / "from_flag/cka.csv"));

  orthoprobe::detail::write_file_bytes(dir / "bad.json", "{\"train\": \"x\", \"kk\": 2}");
  EXPECT_EQ(cli(dir, "select --config bad.json").exit_code, 2);
  orthoprobe::detail::write_file_bytes(dir / "bad2.json", "{\"k\": \"two\"}");
  EXPECT_EQ(cli(dir, "select --config bad2.json --train x").exit_code, 2);
  EXPECT_EQ(cli(dir, "select --config nowhere.json").exit_code, 3);
}

TEST_F(Cli, ReportsCarryConfigHash) {
  TempDir a("cli_a"), b("cli_b");
  for (auto* d : {&a, &b}) ASSERT_CLI_OK(cli(*d, "diagnose " + data_flags()));
  EXPECT_EQ(read_json(a / "reports/diagnostics.json").at("config_hash"), read_json(b / "reports/diagnostics.json").at("config_hash"));
  ASSERT_CLI_OK(cli(b, "diagnose " + data_flags() + " --alpha 0.8"));
  EXPECT_NE(read_json(a / "reports/diagnostics.json").at("config_hash"), read_json(b / "reports/diagnostics.json").at("config_hash"));
}

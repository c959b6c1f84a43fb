#pragma once

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "orthoprobe/dataset.hpp"

namespace testing_util {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "orthoprobe_" + tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

// Gaussian states, balanced-ish random labels, both classes guaranteed.
inline orthoprobe::HiddenStateDataset random_dataset(std::size_t n, std::size_t layers, std::size_t dim, std::uint64_t seed,
                                                     std::string model = "rand") {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  orthoprobe::HiddenStateDataset ds;
  ds.model_name = std::move(model);
  ds.num_samples = n;
  ds.num_layers = layers;
  ds.hidden_dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels.push_back(static_cast<std::uint8_t>(i < 2 ? i : rng() % 2));
    ds.domain_ids.push_back(static_cast<std::uint8_t>(rng() % 4));
  }
  ds.hq.resize(n * layers * dim);
  ds.ha.resize(n * layers * dim);
  for (auto& x : ds.hq) x = normal(rng);
  for (auto& x : ds.ha) x = normal(rng);
  return ds;
}

inline std::string read_bytes(const std::filesystem::path& p) { return orthoprobe::detail::read_file_bytes(p); }

struct ProcessResult {
  int exit_code = -1;
  std::string output;
};

// Runs a shell command, capturing stdout and stderr together.
inline ProcessResult run_command(const std::string& cmd) {
  ProcessResult r;
  FILE* pipe = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace testing_util

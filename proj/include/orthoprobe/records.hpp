#pragma once

// Input side of the extraction contract. An extractor reads labeled JSONL
// records {question, answer, label, domain_id}, runs the model, and appends
// one (hQ, hA) pair per kept record to a ContainerBuilder.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoprobe/dataset.hpp"

namespace orthoprobe {

struct ExtractionRecord {
  std::string question;
  std::string answer;
  std::uint8_t label = 0;
  std::uint8_t domain_id = 0;
};

// nullopt for records that must be skipped (empty question or answer);
// `warning` then says why. Malformed records throw ValidationError.
inline std::optional<ExtractionRecord> parse_record(const std::string& line, std::size_t line_no, std::string* warning = nullptr) {
  const std::string where = "record " + std::to_string(line_no);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(where + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError(where + ": not a JSON object");
  for (const char* key : {"question", "answer", "label", "domain_id"}) {
    if (!j.contains(key)) throw ValidationError(where + ": missing '" + key + "'");
  }
  if (!j["question"].is_string() || !j["answer"].is_string()) throw ValidationError(where + ": question and answer must be strings");
  if (!j["label"].is_number_integer() || (j["label"] != 0 && j["label"] != 1)) throw ValidationError(where + ": label must be 0 or 1");
  if (!j["domain_id"].is_number_integer() || j["domain_id"].get<long long>() < 0 || j["domain_id"].get<long long>() > 255) {
    throw ValidationError(where + ": domain_id must be an integer in [0, 255]");
  }
  ExtractionRecord r{j["question"].get<std::string>(), j["answer"].get<std::string>(), j["label"].get<std::uint8_t>(),
                     j["domain_id"].get<std::uint8_t>()};
  if (r.question.empty() || r.answer.empty()) {
    if (warning) *warning = where + ": empty " + std::string(r.question.empty() ? "question" : "answer") + ", skipped";
    return std::nullopt;
  }
  return r;
}

// Blank lines are ignored; skipped records are reported in `warnings`.
inline std::vector<ExtractionRecord> read_records_jsonl(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<ExtractionRecord> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string warning;
    auto r = parse_record(line, no, &warning);
    if (r) out.push_back(std::move(*r));
    else if (warnings) warnings->push_back(warning);
  }
  return out;
}

// Accumulates per-record layer states (each L x d, layer-major) into a dataset.
class ContainerBuilder {
 public:
  ContainerBuilder(std::string model_name, std::size_t num_layers, std::size_t hidden_dim) {
    if (num_layers == 0 || hidden_dim == 0) throw ContractError("builder needs L >= 1 and d >= 1");
    ds_.model_name = std::move(model_name);
    ds_.num_layers = num_layers;
    ds_.hidden_dim = hidden_dim;
  }

  void add(std::uint8_t label, std::uint8_t domain_id, std::span<const float> hq, std::span<const float> ha) {
    const std::size_t expect = ds_.num_layers * ds_.hidden_dim;
    if (hq.size() != expect || ha.size() != expect) {
      throw ContractError("record states must hold L*d = " + std::to_string(expect) + " floats");
    }
    if (label > 1) throw ValidationError("label must be 0 or 1");
    ds_.labels.push_back(label);
    ds_.domain_ids.push_back(domain_id);
    ds_.hq.insert(ds_.hq.end(), hq.begin(), hq.end());
    ds_.ha.insert(ds_.ha.end(), ha.begin(), ha.end());
    ++ds_.num_samples;
  }

  std::size_t size() const { return ds_.num_samples; }

  HiddenStateDataset build() const {
    ds_.validate();
    return ds_;
  }

 private:
  HiddenStateDataset ds_;
};

}  // namespace orthoprobe

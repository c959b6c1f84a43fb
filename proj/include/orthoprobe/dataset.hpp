#pragma once

// Labeled hidden-state dataset and its QHS1 on-disk container.
//
// QHS1 layout, little-endian, no padding:
//   "QHS1" | version u32 (=1) | N u64 | L u32 | d u32 |
//   name_len u32 | name bytes (UTF-8) |
//   labels N x u8 | domain_ids N x u8 |
//   hQ N*L*d x f32 | hA N*L*d x f32
// Tensors are sample-major, then layer, then dimension.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoprobe/common.hpp"

namespace orthoprobe {

inline constexpr std::array<char, 4> kContainerMagic = {'Q', 'H', 'S', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct HiddenStateDataset {
  std::string model_name;
  std::size_t num_samples = 0;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::vector<std::uint8_t> labels;      // 1 = hallucinated, 0 = faithful
  std::vector<std::uint8_t> domain_ids;  // source corpus identity
  std::vector<float> hq;                 // N x L x d
  std::vector<float> ha;                 // N x L x d

  std::size_t offset(std::size_t sample, std::size_t layer) const {
    return (sample * num_layers + layer) * hidden_dim;
  }

  // N x d strided view of one layer.
  LayerRef question(std::size_t layer) const { return layer_view(hq, layer); }
  LayerRef answer(std::size_t layer) const { return layer_view(ha, layer); }

  Labels label_span() const { return labels; }

  // Throws ValidationError on the first violated invariant.
  void validate() const {
    if (num_samples == 0) throw ValidationError("dataset is empty (N = 0)");
    if (num_layers == 0 || hidden_dim == 0) throw ValidationError("dataset has zero layers or zero hidden dim");
    const std::size_t expect = num_samples * num_layers * hidden_dim;
    if (hq.size() != expect || ha.size() != expect) {
      throw ValidationError("hQ/hA tensor size does not match N x L x d");
    }
    if (labels.size() != num_samples || domain_ids.size() != num_samples) {
      throw ValidationError("label/domain column length does not match N");
    }
    for (std::size_t i = 0; i < num_samples; ++i) {
      if (labels[i] > 1) throw ValidationError("label at sample " + std::to_string(i) + " is not 0/1");
    }
    auto check_finite = [](const std::vector<float>& t, const char* name) {
      for (std::size_t k = 0; k < t.size(); ++k) {
        if (!std::isfinite(t[k])) {
          throw ValidationError(std::string("non-finite entry in ") + name + " at flat index " + std::to_string(k));
        }
      }
    };
    check_finite(hq, "hQ");
    check_finite(ha, "hA");
  }

  // Copy of the given samples, in the given order.
  HiddenStateDataset subset(std::span<const std::size_t> indices) const {
    HiddenStateDataset out;
    out.model_name = model_name;
    out.num_samples = indices.size();
    out.num_layers = num_layers;
    out.hidden_dim = hidden_dim;
    const std::size_t row = num_layers * hidden_dim;
    out.labels.reserve(indices.size());
    out.domain_ids.reserve(indices.size());
    out.hq.resize(indices.size() * row);
    out.ha.resize(indices.size() * row);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const std::size_t i = indices[k];
      if (i >= num_samples) throw ContractError("subset index out of range");
      out.labels.push_back(labels[i]);
      out.domain_ids.push_back(domain_ids[i]);
      std::copy_n(hq.begin() + static_cast<std::ptrdiff_t>(i * row), row, out.hq.begin() + static_cast<std::ptrdiff_t>(k * row));
      std::copy_n(ha.begin() + static_cast<std::ptrdiff_t>(i * row), row, out.ha.begin() + static_cast<std::ptrdiff_t>(k * row));
    }
    return out;
  }

  // Samples whose domain id is in `domains`.
  std::vector<std::size_t> indices_in_domains(std::span<const int> domains) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < num_samples; ++i) {
      if (std::find(domains.begin(), domains.end(), static_cast<int>(domain_ids[i])) != domains.end()) out.push_back(i);
    }
    return out;
  }

 private:
  LayerRef layer_view(const std::vector<float>& t, std::size_t layer) const {
    if (layer >= num_layers) throw ContractError("layer index out of range");
    using Map = Eigen::Map<const LayerMatrix, 0, Eigen::OuterStride<>>;
    return Map(t.data() + layer * hidden_dim, static_cast<Eigen::Index>(num_samples),
               static_cast<Eigen::Index>(hidden_dim), Eigen::OuterStride<>(static_cast<Eigen::Index>(num_layers * hidden_dim)));
  }
};

// Field-by-field equality with float bit patterns compared exactly.
inline bool bitwise_equal(const HiddenStateDataset& a, const HiddenStateDataset& b) {
  auto same_bits = [](const std::vector<float>& x, const std::vector<float>& y) {
    return x.size() == y.size() && (x.empty() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
  };
  return a.model_name == b.model_name && a.num_samples == b.num_samples && a.num_layers == b.num_layers &&
         a.hidden_dim == b.hidden_dim && a.labels == b.labels && a.domain_ids == b.domain_ids && same_bits(a.hq, b.hq) &&
         same_bits(a.ha, b.ha);
}

struct DatasetSplit {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
  std::vector<std::size_t> test_indices;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}
inline void put_f32s(std::string& out, const std::vector<float>& v) {
  const std::size_t start = out.size();
  out.resize(start + v.size() * 4);
  if constexpr (std::endian::native == std::endian::little) {
    if (!v.empty()) std::memcpy(out.data() + start, v.data(), v.size() * 4);
  } else {
    for (std::size_t k = 0; k < v.size(); ++k) {
      const auto bits = std::bit_cast<std::uint32_t>(v[k]);
      for (int b = 0; b < 4; ++b) out[start + 4 * k + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw CorruptionError(context_ + ": truncated while reading " + what + " at byte offset " + std::to_string(pos_) +
                            " (need " + std::to_string(n) + ", have " + std::to_string(remaining()) + ")");
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(k)])) << (8 * k);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(k)])) << (8 * k);
    pos_ += 8;
    return v;
  }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<std::uint8_t> u8s(std::size_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> v(n);
    if (n) std::memcpy(v.data(), bytes_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  std::vector<float> f32s(std::size_t n, const char* what) {
    if (n > remaining() / 4) {
      throw CorruptionError(context_ + ": truncated " + what + " at byte offset " + std::to_string(pos_) + " (need " +
                            std::to_string(n) + " floats, have " + std::to_string(remaining()) + " bytes)");
    }
    std::vector<float> v(n);
    if constexpr (std::endian::native == std::endian::little) {
      if (n) std::memcpy(v.data(), bytes_.data() + pos_, n * 4);
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + 4 * k + static_cast<std::size_t>(b)])) << (8 * b);
        v[k] = std::bit_cast<float>(bits);
      }
    }
    pos_ += n * 4;
    return v;
  }

 private:
  const std::string& bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

}  // namespace detail

// Header (magic, version, N, L, d, name length) plus the name bytes.
inline std::size_t container_header_size(const HiddenStateDataset& ds) { return 4 + 4 + 8 + 4 + 4 + 4 + ds.model_name.size(); }

inline std::size_t container_size(const HiddenStateDataset& ds) {
  return container_header_size(ds) + 2 * ds.num_samples + 2 * 4 * ds.num_samples * ds.num_layers * ds.hidden_dim;
}

inline std::string encode_container(const HiddenStateDataset& ds) {
  ds.validate();
  if (ds.num_layers > std::numeric_limits<std::uint32_t>::max() || ds.hidden_dim > std::numeric_limits<std::uint32_t>::max() ||
      ds.model_name.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError("dataset dimension exceeds the u32 header field");
  }
  std::string out;
  out.reserve(container_size(ds));
  out.append(kContainerMagic.data(), kContainerMagic.size());
  detail::put_u32(out, kContainerVersion);
  detail::put_u64(out, ds.num_samples);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.num_layers));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.hidden_dim));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.model_name.size()));
  out.append(ds.model_name);
  out.append(reinterpret_cast<const char*>(ds.labels.data()), ds.labels.size());
  out.append(reinterpret_cast<const char*>(ds.domain_ids.data()), ds.domain_ids.size());
  detail::put_f32s(out, ds.hq);
  detail::put_f32s(out, ds.ha);
  return out;
}

inline HiddenStateDataset decode_container(const std::string& bytes, const std::string& context = "container") {
  detail::ByteReader rd(bytes, context);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic.data(), 4) != 0) {
    throw FormatError(context + ": bad magic (expected \"QHS1\")");
  }
  rd.raw(4, "magic");
  const auto version = rd.u32("version");
  if (version != kContainerVersion) {
    throw FormatError(context + ": unsupported container version " + std::to_string(version));
  }
  HiddenStateDataset ds;
  ds.num_samples = rd.u64("N");
  ds.num_layers = rd.u32("L");
  ds.hidden_dim = rd.u32("d");
  const auto name_len = rd.u32("model-name length");
  ds.model_name = rd.raw(name_len, "model name");
  if (ds.num_samples == 0) throw ValidationError(context + ": dataset is empty (N = 0)");
  if (ds.num_samples > rd.remaining() / 2) {
    throw CorruptionError(context + ": truncated label/domain columns at byte offset " + std::to_string(rd.offset()));
  }
  ds.labels = rd.u8s(ds.num_samples, "labels");
  ds.domain_ids = rd.u8s(ds.num_samples, "domain ids");
  const std::size_t row = ds.num_layers * ds.hidden_dim;
  if (ds.num_layers != 0 && row / ds.num_layers != ds.hidden_dim) throw CorruptionError(context + ": tensor shape overflow");
  if (row != 0 && ds.num_samples > std::numeric_limits<std::size_t>::max() / row) throw CorruptionError(context + ": tensor shape overflow");
  const std::size_t count = ds.num_samples * row;
  ds.hq = rd.f32s(count, "hQ tensor");
  ds.ha = rd.f32s(count, "hA tensor");
  if (rd.remaining() != 0) {
    throw CorruptionError(context + ": " + std::to_string(rd.remaining()) + " trailing bytes after hA tensor at byte offset " +
                          std::to_string(rd.offset()));
  }
  ds.validate();
  return ds;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& container) {
  auto p = container;
  p.replace_extension(".meta.json");
  return p;
}

inline nlohmann::json container_metadata(const HiddenStateDataset& ds) {
  std::map<std::string, std::size_t> domains;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < ds.num_samples; ++i) {
    positives += ds.labels[i];
    domains[std::to_string(ds.domain_ids[i])]++;
  }
  return {{"magic", "QHS1"},
          {"version", kContainerVersion},
          {"model_name", ds.model_name},
          {"num_samples", ds.num_samples},
          {"num_layers", ds.num_layers},
          {"hidden_dim", ds.hidden_dim},
          {"label_counts", {{"0", ds.num_samples - positives}, {"1", positives}}},
          {"domain_counts", domains}};
}

inline void write_container(const HiddenStateDataset& ds, const std::filesystem::path& path) {
  const std::string bytes = encode_container(ds);
  detail::write_file_bytes(path, bytes);
  detail::write_file_bytes(sidecar_path(path), container_metadata(ds).dump(2) + "\n");
}

inline HiddenStateDataset read_container(const std::filesystem::path& path) {
  return decode_container(detail::read_file_bytes(path), path.string());
}

// Stratified, seeded split. Per class, the shuffled indices are cut by
// largest-remainder rounding of fraction * class_count, so each split is
// within one sample of its exact share per class.
inline DatasetSplit split_dataset(const HiddenStateDataset& ds, SplitFractions fr, std::uint64_t seed) {
  const std::array<double, 3> f = {fr.train, fr.val, fr.test};
  for (double x : f) {
    if (!(x > 0.0)) throw ContractError("split fractions must be positive");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ContractError("split fractions must sum to 1");

  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < ds.num_samples; ++i) by_class[ds.labels[i] ? 1 : 0].push_back(i);

  DatasetSplit out;
  std::array<std::vector<std::size_t>*, 3> parts = {&out.train_indices, &out.val_indices, &out.test_indices};
  for (std::size_t c = 0; c < 2; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < parts.size()) {
      throw StratificationError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                " samples, fewer than the 3 splits");
    }
    Rng rng(derive_seed(seed, c));
    std::shuffle(idx.begin(), idx.end(), rng);

    const double n = static_cast<double>(idx.size());
    std::array<std::size_t, 3> count{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double exact = f[k] * n;
      count[k] = static_cast<std::size_t>(std::floor(exact));
      rem[k] = exact - static_cast<double>(count[k]);
      assigned += count[k];
    }
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < idx.size(); ++k, ++assigned) count[order[k % 3]]++;

    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      parts[k]->insert(parts[k]->end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                       idx.begin() + static_cast<std::ptrdiff_t>(pos + count[k]));
      pos += count[k];
    }
  }
  for (auto* p : parts) std::sort(p->begin(), p->end());
  return out;
}

}  // namespace orthoprobe

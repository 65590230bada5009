#pragma once

// Versioned little-endian binary snapshot of training state, closed by a
// CRC32 of every preceding byte.
//
//   "MVCK" u32 version
//   u32 n_meta   { str key, str value }
//   u32 n_groups { str group, u32 n { str name, u32 rows, u32 cols, f64[rows*cols] col-major } }
//   i32 epoch, str rng_state
//   u32 n_series { str name, u32 n, f64[n] }
//   u32 crc32
//
// str is u32 length + bytes; f64 is the IEEE bit pattern as u64.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mever/ad.hpp"
#include "mever/nn.hpp"

namespace mever::ckpt {

constexpr std::uint32_t kVersion = 1;

struct Tensor {
  std::string name;
  ad::Mat value;
  bool operator==(const Tensor& o) const { return name == o.name && value == o.value; }
};

using TensorGroup = std::vector<Tensor>;

struct Checkpoint {
  std::uint32_t version = kVersion;
  std::map<std::string, std::string> meta;
  std::map<std::string, TensorGroup> groups;
  int epoch = 0;
  std::string rng_state;
  std::map<std::string, std::vector<double>> history;

  bool operator==(const Checkpoint&) const = default;

  const TensorGroup& group(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
};

std::string serialize(const Checkpoint& c);
Checkpoint deserialize(const std::string& bytes);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameter values, in visitor order.
template <typename Params>
TensorGroup export_params(const Params& p) {
  TensorGroup g;
  p.for_each([&](const ad::Parameter& q) { g.push_back(Tensor{q.name, q.value}); });
  return g;
}

// Overwrites parameter values; names and shapes must match exactly.
void import_into(std::vector<ad::Parameter*> params, const TensorGroup& g);

template <typename Params>
void import_params(Params& p, const TensorGroup& g) {
  std::vector<ad::Parameter*> ptrs;
  p.for_each([&](ad::Parameter& q) { ptrs.push_back(&q); });
  import_into(std::move(ptrs), g);
}

}  // namespace mever::ckpt

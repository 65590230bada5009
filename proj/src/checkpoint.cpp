#include "mever/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <fstream>
#include <iterator>

#include "mever/error.hpp"

namespace mever::ckpt {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out += s;
  }
  std::string out;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error(ErrorKind::CorruptFile, "checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

}  // namespace

const TensorGroup& Checkpoint::group(const std::string& name) const {
  const auto it = groups.find(name);
  if (it == groups.end()) throw Error(ErrorKind::CorruptFile, "checkpoint has no parameter group " + name);
  return it->second;
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) throw Error(ErrorKind::CorruptFile, "checkpoint has no meta key " + key);
  return it->second;
}

std::string serialize(const Checkpoint& c) {
  Writer w;
  w.out = "MVCK";
  w.u32(c.version);
  w.u32(static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(c.groups.size()));
  for (const auto& [name, group] : c.groups) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(group.size()));
    for (const auto& t : group) {
      w.str(t.name);
      w.u32(static_cast<std::uint32_t>(t.value.rows()));
      w.u32(static_cast<std::uint32_t>(t.value.cols()));
      for (Eigen::Index i = 0; i < t.value.size(); ++i) w.f64(t.value.data()[i]);
    }
  }
  w.u32(static_cast<std::uint32_t>(c.epoch));
  w.str(c.rng_state);
  w.u32(static_cast<std::uint32_t>(c.history.size()));
  for (const auto& [name, series] : c.history) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(series.size()));
    for (double v : series) w.f64(v);
  }
  w.u32(checksum(w.out, w.out.size()));
  return w.out;
}

Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "MVCK") != 0) throw Error(ErrorKind::CorruptFile, "not a checkpoint");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.substr(body), 4);
  if (tail.u32() != checksum(bytes, body)) throw Error(ErrorKind::CorruptFile, "checkpoint checksum mismatch");

  const std::string payload = bytes.substr(4, body - 4);
  Reader r(payload, payload.size());
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kVersion) {
    throw Error(ErrorKind::VersionMismatch,
                "checkpoint version " + std::to_string(c.version) + ", expected " + std::to_string(kVersion));
  }
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string k = r.str();
    c.meta[k] = r.str();
  }
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string name = r.str();
    TensorGroup g;
    for (std::uint32_t m = r.u32(), j = 0; j < m; ++j) {
      Tensor t;
      t.name = r.str();
      const std::uint32_t rows = r.u32();
      const std::uint32_t cols = r.u32();
      t.value.resize(rows, cols);
      for (Eigen::Index e = 0; e < t.value.size(); ++e) t.value.data()[e] = r.f64();
      g.push_back(std::move(t));
    }
    c.groups[name] = std::move(g);
  }
  c.epoch = static_cast<int>(r.u32());
  c.rng_state = r.str();
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string name = r.str();
    std::vector<double> series(r.u32());
    for (double& v : series) v = r.f64();
    c.history[name] = std::move(series);
  }
  if (!r.done()) throw Error(ErrorKind::CorruptFile, "trailing bytes in checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::MissingFile, path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void import_into(std::vector<ad::Parameter*> params, const TensorGroup& g) {
  if (params.size() != g.size()) {
    throw Error(ErrorKind::ShapeMismatch, "parameter group has " + std::to_string(g.size()) + " tensors, model has " +
                                              std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    ad::Parameter& p = *params[i];
    if (p.name != g[i].name || p.value.rows() != g[i].value.rows() || p.value.cols() != g[i].value.cols()) {
      throw Error(ErrorKind::ShapeMismatch, "parameter " + p.name + " does not match stored " + g[i].name);
    }
    p.value = g[i].value;
    p.zero_grad();
  }
}

}  // namespace mever::ckpt

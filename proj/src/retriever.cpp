#include "mever/retriever.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "mever/error.hpp"

namespace mever::retrieval {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'R', 'I'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::CorruptFile, "index file truncated");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

double score(const RowVec& claim_embedding, const RowVec& evidence_embedding) {
  if (claim_embedding.size() != evidence_embedding.size()) {
    throw Error(ErrorKind::DimensionMismatch, std::to_string(claim_embedding.size()) + " vs " +
                                                  std::to_string(evidence_embedding.size()));
  }
  return claim_embedding.dot(evidence_embedding);
}

double contrastive_loss(const Mat& claims, const Mat& evidence) {
  ad::Tape tape(false);
  return contrastive_loss(tape.constant(claims), tape.constant(evidence)).scalar();
}

double contrastive_loss(const std::vector<std::pair<enc::EncodedUnit, enc::EncodedUnit>>& batch) {
  if (batch.size() < 2) throw Error(ErrorKind::BatchTooSmall, "contrastive batch needs B >= 2");
  const Eigen::Index d = batch[0].first.text_embedding.size();
  Mat c(static_cast<Eigen::Index>(batch.size()), d), e(static_cast<Eigen::Index>(batch.size()), d);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    c.row(static_cast<Eigen::Index>(b)) = batch[b].first.text_embedding;
    e.row(static_cast<Eigen::Index>(b)) = batch[b].second.text_embedding;
  }
  return contrastive_loss(c, e);
}

Var contrastive_loss(const Var& claims, const Var& evidence) {
  if (claims.rows() < 2) throw Error(ErrorKind::BatchTooSmall, "contrastive batch needs B >= 2");
  if (claims.rows() != evidence.rows() || claims.cols() != evidence.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "claim/evidence batch shapes differ");
  }
  Var scores = ad::matmul(claims, ad::transpose(evidence));  // B x B
  std::vector<int> gold(static_cast<std::size_t>(claims.rows()));
  std::iota(gold.begin(), gold.end(), 0);
  // log-softmax already subtracts the row max; no flooring for this loss.
  return ad::nll_rows(scores, gold, 0.0);
}

std::uint64_t fingerprint(const enc::EncoderParams& p) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  p.for_each([&](const ad::Parameter& param) {
    mix(param.name.data(), param.name.size());
    const std::int64_t shape[2] = {param.value.rows(), param.value.cols()};
    mix(shape, sizeof shape);
    mix(param.value.data(), static_cast<std::size_t>(param.value.size()) * sizeof(double));
  });
  return h;
}

RetrievalIndex::RetrievalIndex(std::vector<std::string> ids, Mat embeddings, std::uint64_t fingerprint)
    : ids_(std::move(ids)), embeddings_(std::move(embeddings)), fingerprint_(fingerprint) {
  if (static_cast<Eigen::Index>(ids_.size()) != embeddings_.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "index row count differs from id count");
  }
}

void RetrievalIndex::save(const std::filesystem::path& path) const {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(embeddings_.cols()));
  put_u32(out, static_cast<std::uint32_t>(ids_.size()));
  put_u64(out, fingerprint_);
  for (Eigen::Index r = 0; r < embeddings_.rows(); ++r) {
    for (Eigen::Index c = 0; c < embeddings_.cols(); ++c) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(embeddings_(r, c))));
    }
  }
  for (const auto& id : ids_) {
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out += id;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::MissingFile, path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));
  if (r.raw(4) != std::string(kMagic, 4)) throw Error(ErrorKind::CorruptFile, "bad index magic");
  if (const auto v = r.u32(); v != kVersion) {
    throw Error(ErrorKind::VersionMismatch, "index version " + std::to_string(v));
  }
  const std::uint32_t d = r.u32();
  const std::uint32_t n = r.u32();
  const std::uint64_t fp = r.u64();
  Mat emb(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t c = 0; c < d; ++c) emb(i, c) = static_cast<double>(std::bit_cast<float>(r.u32()));
  }
  std::vector<std::string> ids;
  for (std::uint32_t i = 0; i < n; ++i) ids.push_back(r.raw(r.u32()));
  if (!r.done()) throw Error(ErrorKind::CorruptFile, "trailing bytes in index file");
  return RetrievalIndex(std::move(ids), std::move(emb), fp);
}

RetrievalIndex build_index(const data::Dataset& corpus, const Vocabulary& vocab, const enc::EncoderParams& params,
                           const enc::EncoderConfig& cfg, const enc::EncoderOptions& opts) {
  if (corpus.evidence.empty()) throw Error(ErrorKind::EmptyCorpus, "no evidence to index");
  Mat emb(static_cast<Eigen::Index>(corpus.evidence.size()), cfg.d);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < corpus.evidence.size(); ++i) {
    const auto& e = corpus.evidence[i];
    enc::EncodedUnit u = enc::encode(enc::prepare_unit(e.text, enc::resolve_images(corpus, e.image_ids), vocab, cfg),
                                     params, cfg, opts);
    emb.row(static_cast<Eigen::Index>(i)) = u.text_embedding;
    ids.push_back(e.id);
  }
  return RetrievalIndex(std::move(ids), std::move(emb), fingerprint(params));
}

std::vector<std::string> RankedList::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, s] : entries) out.push_back(id);
  return out;
}

RankedList rank(const std::string& claim_id, const RowVec& claim_embedding, const RetrievalIndex& index, int k) {
  if (index.size() == 0) throw Error(ErrorKind::EmptyIndex, "retrieval over empty index");
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  if (claim_embedding.size() != index.dim()) throw Error(ErrorKind::DimensionMismatch, "claim embedding width");
  const ad::Vec scores = index.embeddings() * claim_embedding.transpose();
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  const auto& ids = index.evidence_ids();
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double sa = scores(static_cast<Eigen::Index>(a));
                      const double sb = scores(static_cast<Eigen::Index>(b));
                      if (sa != sb) return sa > sb;
                      return ids[a] < ids[b];
                    });
  RankedList out;
  out.claim_id = claim_id;
  for (std::size_t i = 0; i < n; ++i) out.entries.emplace_back(ids[order[i]], scores(static_cast<Eigen::Index>(order[i])));
  return out;
}

RankedList retrieve(const data::ClaimRecord& claim, const data::Dataset& corpus, const Vocabulary& vocab,
                    const RetrievalIndex& index, const enc::EncoderParams& params, const enc::EncoderConfig& cfg,
                    int k, const enc::EncoderOptions& opts) {
  if (index.size() == 0) throw Error(ErrorKind::EmptyIndex, "retrieval over empty index");
  enc::EncodedUnit u = enc::encode(
      enc::prepare_unit(claim.text, enc::resolve_images(corpus, claim.image_ids), vocab, cfg), params, cfg, opts);
  return rank(claim.id, u.text_embedding, index, k);
}

}  // namespace mever::retrieval

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mever/ad.hpp"
#include "mever/datamodel.hpp"
#include "mever/encoder.hpp"

namespace mever::retrieval {

using ad::Mat;
using ad::RowVec;
using ad::Var;

// Raw dot product h_c . h_t.
double score(const RowVec& claim_embedding, const RowVec& evidence_embedding);

// In-batch contrastive objective: row b of `claims` is paired with row b of
// `evidence`; every other evidence row is a negative. Summed over claims.
double contrastive_loss(const Mat& claims, const Mat& evidence);
double contrastive_loss(const std::vector<std::pair<enc::EncodedUnit, enc::EncodedUnit>>& batch);
Var contrastive_loss(const Var& claims, const Var& evidence);

// FNV-1a over every parameter's name, shape and value bytes.
std::uint64_t fingerprint(const enc::EncoderParams& p);

class RetrievalIndex {
 public:
  RetrievalIndex() = default;
  RetrievalIndex(std::vector<std::string> ids, Mat embeddings, std::uint64_t fingerprint);

  const std::vector<std::string>& evidence_ids() const { return ids_; }
  const Mat& embeddings() const { return embeddings_; }
  std::uint64_t params_fingerprint() const { return fingerprint_; }
  std::size_t size() const { return ids_.size(); }
  int dim() const { return static_cast<int>(embeddings_.cols()); }

  // Little-endian: magic "MVRI", u32 version, u32 d, u32 count,
  // u64 fingerprint, count*d float32 row-major, then per id u32 length + bytes.
  void save(const std::filesystem::path& path) const;
  static RetrievalIndex load(const std::filesystem::path& path);

 private:
  std::vector<std::string> ids_;
  Mat embeddings_;
  std::uint64_t fingerprint_ = 0;
};

RetrievalIndex build_index(const data::Dataset& corpus, const Vocabulary& vocab, const enc::EncoderParams& params,
                           const enc::EncoderConfig& cfg, const enc::EncoderOptions& opts = {});

struct RankedList {
  std::string claim_id;
  std::vector<std::pair<std::string, double>> entries;  // descending score, ties by id

  std::vector<std::string> ids() const;
};

RankedList rank(const std::string& claim_id, const RowVec& claim_embedding, const RetrievalIndex& index, int k);

RankedList retrieve(const data::ClaimRecord& claim, const data::Dataset& corpus, const Vocabulary& vocab,
                    const RetrievalIndex& index, const enc::EncoderParams& params, const enc::EncoderConfig& cfg,
                    int k, const enc::EncoderOptions& opts = {});

}  // namespace mever::retrieval

#pragma once

// Encoder-decoder explanation generator with fusion-in-decoder over the
// per-evidence encodings and a pooled-logits label head that ties the
// explanation back to the verdict.

#include <cstdint>
#include <string>
#include <vector>

#include "mever/ad.hpp"
#include "mever/encoder.hpp"
#include "mever/nn.hpp"
#include "mever/tokenizer.hpp"

namespace mever::expl {

using ad::Mat;
using ad::Parameter;
using ad::RowVec;
using ad::Var;

struct Seq2SeqConfig {
  int layers = 2;
  int d = 32;
  int n_heads = 2;
  int vocab_size = 64;     // V
  int max_positions = 48;  // W, shared by encoder input tokens and decoder steps
  int max_len = 24;        // generation budget, EOS excluded

  void validate() const;
  bool operator==(const Seq2SeqConfig&) const = default;
};

struct Seq2SeqParams {
  Parameter embedding;   // V x d, also the (tied) output head
  Parameter positional;  // W x d
  std::vector<nn::BlockParams> encoder;
  std::vector<nn::DecoderBlockParams> decoder;
  // Label head over pooled logits: V -> d -> |labels|.
  Parameter lc_w1, lc_b1, lc_w2, lc_b2;

  static Seq2SeqParams init(const Seq2SeqConfig& cfg, int n_labels, std::uint64_t seed,
                            const std::string& prefix = "s2s");
  void for_each(const nn::ParamVisitor& f);
  void for_each(const nn::ConstParamVisitor& f) const;
  std::size_t count() const;
};

struct Seq2SeqParamBreakdown {
  std::size_t encoder_core = 0;  // 12d^2 per layer
  std::size_t decoder_core = 0;  // 16d^2 per layer
  std::size_t embedding = 0;
  std::size_t positional = 0;
  std::size_t label_head = 0;
  std::size_t auxiliary = 0;     // biases and norms

  std::size_t total() const;
};

Seq2SeqParamBreakdown breakdown(const Seq2SeqParams& p);

// [claim || SEP || evidence], evidence truncated first to fit `budget`.
std::vector<int> fid_token_ids(const std::vector<int>& claim, const std::vector<int>& evidence, int budget);

// Rows: W_img-projected image CLS embeddings (claim images, then evidence
// images), then token embeddings plus positions.
Var build_fid_input(ad::Tape& tape, const std::vector<int>& claim_tokens, const std::vector<int>& evidence_tokens,
                    const std::vector<Var>& claim_images, const std::vector<Var>& evidence_images,
                    const Seq2SeqParams& sp, const Seq2SeqConfig& cfg, const enc::EncoderParams& ep);

Var encode_fid(ad::Tape& tape, const Var& input, const Seq2SeqParams& sp, const Seq2SeqConfig& cfg,
               nn::AttentionLog* log = nullptr);

// Mask-aware elementwise mean: row r averages the inputs that have a row r.
Var fuse_in_decoder(ad::Tape& tape, const std::vector<Var>& per_evidence);
Mat fuse_in_decoder(const std::vector<Mat>& per_evidence);

// Decoder pass over `input_ids` (BOS first), cross-attending to `fused`.
// Returns one row of vocabulary logits per input position.
Var decoder_logits(ad::Tape& tape, const Var& fused, const std::vector<int>& input_ids, const Seq2SeqParams& sp,
                   const Seq2SeqConfig& cfg, nn::AttentionLog* log = nullptr);

Var generation_loss(const Var& logits, const std::vector<int>& gold);
double generation_loss(const Mat& logits, const std::vector<int>& gold);

Var pool_logits(const Var& logits);
RowVec pool_logits(const std::vector<RowVec>& per_token);

Var label_logits(ad::Tape& tape, const Var& pooled, const Seq2SeqParams& sp);

// KL(y||y_e) + KL(y_e||y) - log y_e[gold], with both distributions floored
// at 1e-12 inside the logs.
Var consistency_loss(const Var& y_hat, const Var& y_e, int gold_index);
double consistency_loss(const RowVec& y_hat, const RowVec& y_e, int gold_index);

struct TeacherForced {
  Var logits;  // (n + 1) x V: n explanation tokens then EOS
  Var loss;
  Var pooled;  // mean over the n explanation positions
};

TeacherForced teacher_force(ad::Tape& tape, const Var& fused, const std::vector<int>& explanation,
                            const Seq2SeqParams& sp, const Seq2SeqConfig& cfg, nn::AttentionLog* log = nullptr);

struct Explanation {
  std::vector<int> token_ids;
  std::string text;
  std::vector<RowVec> per_step_logits;
  RowVec pooled;
};

// Greedy decoding; argmax ties go to the lowest id.
Explanation generate(const Mat& fused, const Seq2SeqParams& sp, const Seq2SeqConfig& cfg, const Vocabulary& vocab,
                     int max_len);

int argmax_lowest(const RowVec& row);

}  // namespace mever::expl

#pragma once

// Transformer building blocks shared by the graph encoder, the fusion
// layers and the seq2seq explainer. Weight matrices are stored input-major
// (d_in x d_out) and applied as X * W on row-per-token matrices.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mever/ad.hpp"

namespace mever::nn {

using ad::Mat;
using ad::Parameter;
using ad::Var;

// Records every row-stochastic matrix produced during a forward pass
// (multi-head attention rows and graph aggregation weights). Used by the
// normalization checks; forward passes take it as an optional sink.
struct AttentionLog {
  std::vector<Mat> weights;
  void record(const Mat& w) { weights.push_back(w); }
};

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // Uniform in [-bound, bound].
  Parameter uniform(std::string name, Eigen::Index rows, Eigen::Index cols, double bound);
  Parameter constant(std::string name, Eigen::Index rows, Eigen::Index cols, double value);

 private:
  std::mt19937_64 rng_;
};

using ParamVisitor = std::function<void(Parameter&)>;
using ConstParamVisitor = std::function<void(const Parameter&)>;

struct AttentionParams {
  Parameter wq, wk, wv;
  Parameter wo;  // empty (0x0) when the attention has no output projection
  bool has_output() const { return wo.size() > 0; }

  static AttentionParams init(Initializer& init, const std::string& prefix, int d, bool with_output);
  void for_each(const ParamVisitor& f);
  void for_each(const ConstParamVisitor& f) const;
};

struct FeedForwardParams {
  Parameter w_in, b_in, w_out, b_out;

  static FeedForwardParams init(Initializer& init, const std::string& prefix, int d);
  void for_each(const ParamVisitor& f);
  void for_each(const ConstParamVisitor& f) const;
};

struct LayerNormParams {
  Parameter gain, bias;

  static LayerNormParams init(Initializer& init, const std::string& prefix, int d);
  void for_each(const ParamVisitor& f);
  void for_each(const ConstParamVisitor& f) const;
};

// Post-norm encoder block: x = LN(q + MHA(q, kv)); y = LN(x + FFN(x)).
struct BlockParams {
  AttentionParams attn;
  FeedForwardParams ffn;
  LayerNormParams ln1, ln2;

  static BlockParams init(Initializer& init, const std::string& prefix, int d);
  void for_each(const ParamVisitor& f);
  void for_each(const ConstParamVisitor& f) const;
};

// Post-norm decoder block: causal self-attention, cross-attention, FFN.
struct DecoderBlockParams {
  AttentionParams self_attn, cross_attn;
  FeedForwardParams ffn;
  LayerNormParams ln1, ln2, ln3;

  static DecoderBlockParams init(Initializer& init, const std::string& prefix, int d);
  void for_each(const ParamVisitor& f);
  void for_each(const ConstParamVisitor& f) const;
};

// Scaled dot-product multi-head attention. Queries come from `queries`
// (n x d), keys and values from `memory` (m x d); output is n x d.
// `additive_mask`, when given, is n x m and added to every head's scores.
Var multi_head_attention(ad::Tape& tape, const Var& queries, const Var& memory, const AttentionParams& p, int n_heads,
                         const Mat* additive_mask = nullptr, AttentionLog* log = nullptr);

Var feed_forward(ad::Tape& tape, const Var& x, const FeedForwardParams& p);

Var layer_norm(ad::Tape& tape, const Var& x, const LayerNormParams& p);

// One encoder block where keys/values may carry extra rows (virtual tokens)
// ahead of the query sequence. Output has as many rows as `queries`.
Var encoder_block(ad::Tape& tape, const Var& queries, const Var& memory, const BlockParams& p, int n_heads,
                  AttentionLog* log = nullptr);

Var decoder_block(ad::Tape& tape, const Var& x, const Var& encoder_out, const DecoderBlockParams& p, int n_heads,
                  AttentionLog* log = nullptr);

// Lower-triangular additive mask (0 on/below diagonal, large negative above).
Mat causal_mask(Eigen::Index n);

}  // namespace mever::nn

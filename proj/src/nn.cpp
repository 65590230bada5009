#include "mever/nn.hpp"

#include <cmath>

#include "mever/error.hpp"

namespace mever::nn {

Parameter Initializer::uniform(std::string name, Eigen::Index rows, Eigen::Index cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng_);
  }
  return Parameter(std::move(name), std::move(m));
}

Parameter Initializer::constant(std::string name, Eigen::Index rows, Eigen::Index cols, double value) {
  return Parameter(std::move(name), Mat::Constant(rows, cols, value));
}

AttentionParams AttentionParams::init(Initializer& init, const std::string& prefix, int d, bool with_output) {
  const double b = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams p;
  p.wq = init.uniform(prefix + ".wq", d, d, b);
  p.wk = init.uniform(prefix + ".wk", d, d, b);
  p.wv = init.uniform(prefix + ".wv", d, d, b);
  if (with_output) p.wo = init.uniform(prefix + ".wo", d, d, b);
  return p;
}

void AttentionParams::for_each(const ParamVisitor& f) {
  f(wq);
  f(wk);
  f(wv);
  if (has_output()) f(wo);
}

void AttentionParams::for_each(const ConstParamVisitor& f) const {
  f(wq);
  f(wk);
  f(wv);
  if (has_output()) f(wo);
}

FeedForwardParams FeedForwardParams::init(Initializer& init, const std::string& prefix, int d) {
  FeedForwardParams p;
  p.w_in = init.uniform(prefix + ".w_in", d, 4 * d, 1.0 / std::sqrt(static_cast<double>(d)));
  p.b_in = init.constant(prefix + ".b_in", 1, 4 * d, 0.0);
  p.w_out = init.uniform(prefix + ".w_out", 4 * d, d, 1.0 / std::sqrt(static_cast<double>(4 * d)));
  p.b_out = init.constant(prefix + ".b_out", 1, d, 0.0);
  return p;
}

void FeedForwardParams::for_each(const ParamVisitor& f) {
  f(w_in);
  f(b_in);
  f(w_out);
  f(b_out);
}

void FeedForwardParams::for_each(const ConstParamVisitor& f) const {
  f(w_in);
  f(b_in);
  f(w_out);
  f(b_out);
}

LayerNormParams LayerNormParams::init(Initializer& init, const std::string& prefix, int d) {
  return LayerNormParams{init.constant(prefix + ".gain", 1, d, 1.0), init.constant(prefix + ".bias", 1, d, 0.0)};
}

void LayerNormParams::for_each(const ParamVisitor& f) {
  f(gain);
  f(bias);
}

void LayerNormParams::for_each(const ConstParamVisitor& f) const {
  f(gain);
  f(bias);
}

BlockParams BlockParams::init(Initializer& init, const std::string& prefix, int d) {
  BlockParams p;
  p.attn = AttentionParams::init(init, prefix + ".attn", d, true);
  p.ffn = FeedForwardParams::init(init, prefix + ".ffn", d);
  p.ln1 = LayerNormParams::init(init, prefix + ".ln1", d);
  p.ln2 = LayerNormParams::init(init, prefix + ".ln2", d);
  return p;
}

void BlockParams::for_each(const ParamVisitor& f) {
  attn.for_each(f);
  ffn.for_each(f);
  ln1.for_each(f);
  ln2.for_each(f);
}

void BlockParams::for_each(const ConstParamVisitor& f) const {
  attn.for_each(f);
  ffn.for_each(f);
  ln1.for_each(f);
  ln2.for_each(f);
}

DecoderBlockParams DecoderBlockParams::init(Initializer& init, const std::string& prefix, int d) {
  DecoderBlockParams p;
  p.self_attn = AttentionParams::init(init, prefix + ".self_attn", d, true);
  p.cross_attn = AttentionParams::init(init, prefix + ".cross_attn", d, true);
  p.ffn = FeedForwardParams::init(init, prefix + ".ffn", d);
  p.ln1 = LayerNormParams::init(init, prefix + ".ln1", d);
  p.ln2 = LayerNormParams::init(init, prefix + ".ln2", d);
  p.ln3 = LayerNormParams::init(init, prefix + ".ln3", d);
  return p;
}

void DecoderBlockParams::for_each(const ParamVisitor& f) {
  self_attn.for_each(f);
  cross_attn.for_each(f);
  ffn.for_each(f);
  ln1.for_each(f);
  ln2.for_each(f);
  ln3.for_each(f);
}

void DecoderBlockParams::for_each(const ConstParamVisitor& f) const {
  self_attn.for_each(f);
  cross_attn.for_each(f);
  ffn.for_each(f);
  ln1.for_each(f);
  ln2.for_each(f);
  ln3.for_each(f);
}

Var multi_head_attention(ad::Tape& tape, const Var& queries, const Var& memory, const AttentionParams& p, int n_heads,
                         const Mat* additive_mask, AttentionLog* log) {
  const Eigen::Index d = p.wq.value.rows();
  if (queries.cols() != d || memory.cols() != d) {
    throw Error(ErrorKind::ShapeMismatch, "attention input width differs from d=" + std::to_string(d));
  }
  if (n_heads < 1 || d % n_heads != 0) throw Error(ErrorKind::InvalidArgument, "d not divisible by n_heads");
  if (additive_mask != nullptr &&
      (additive_mask->rows() != queries.rows() || additive_mask->cols() != memory.rows())) {
    throw Error(ErrorKind::ShapeMismatch, "attention mask shape");
  }
  const Eigen::Index dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Var q = ad::matmul(queries, tape.param(p.wq));
  Var k = ad::matmul(memory, tape.param(p.wk));
  Var v = ad::matmul(memory, tape.param(p.wv));

  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(k, h * dh, dh);
    Var vh = ad::slice_cols(v, h * dh, dh);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    if (additive_mask != nullptr) scores = ad::add(scores, tape.constant(*additive_mask));
    Var weights = ad::softmax_rows(scores);
    if (log != nullptr) log->record(weights.value());
    heads.push_back(ad::matmul(weights, vh));
  }
  Var out = n_heads == 1 ? heads[0] : ad::hstack(heads);
  if (p.has_output()) out = ad::matmul(out, tape.param(p.wo));
  return out;
}

Var feed_forward(ad::Tape& tape, const Var& x, const FeedForwardParams& p) {
  Var h = ad::gelu(ad::add_row(ad::matmul(x, tape.param(p.w_in)), tape.param(p.b_in)));
  return ad::add_row(ad::matmul(h, tape.param(p.w_out)), tape.param(p.b_out));
}

Var layer_norm(ad::Tape& tape, const Var& x, const LayerNormParams& p) {
  return ad::layer_norm_rows(x, tape.param(p.gain), tape.param(p.bias));
}

Var encoder_block(ad::Tape& tape, const Var& queries, const Var& memory, const BlockParams& p, int n_heads,
                  AttentionLog* log) {
  Var attn = multi_head_attention(tape, queries, memory, p.attn, n_heads, nullptr, log);
  Var x = layer_norm(tape, ad::add(queries, attn), p.ln1);
  return layer_norm(tape, ad::add(x, feed_forward(tape, x, p.ffn)), p.ln2);
}

Var decoder_block(ad::Tape& tape, const Var& x, const Var& encoder_out, const DecoderBlockParams& p, int n_heads,
                  AttentionLog* log) {
  const Mat mask = causal_mask(x.rows());
  Var a = multi_head_attention(tape, x, x, p.self_attn, n_heads, &mask, log);
  Var h = layer_norm(tape, ad::add(x, a), p.ln1);
  Var c = multi_head_attention(tape, h, encoder_out, p.cross_attn, n_heads, nullptr, log);
  h = layer_norm(tape, ad::add(h, c), p.ln2);
  return layer_norm(tape, ad::add(h, feed_forward(tape, h, p.ffn)), p.ln3);
}

Mat causal_mask(Eigen::Index n) {
  Mat m = Mat::Zero(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = r + 1; c < n; ++c) m(r, c) = -1e30;
  }
  return m;
}

}  // namespace mever::nn

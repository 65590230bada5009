#include "mever/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mever/error.hpp"

namespace mever::expl {

void Seq2SeqConfig::validate() const {
  if (layers < 1 || d < 1 || n_heads < 1 || d % n_heads != 0) {
    throw Error(ErrorKind::InvalidArgument, "seq2seq config: bad layers/d/n_heads");
  }
  if (vocab_size <= Vocabulary::kNumSpecial || max_positions < 4 || max_len < 1 || max_len >= max_positions) {
    throw Error(ErrorKind::InvalidArgument, "seq2seq config: bad vocab/positions/max_len");
  }
}

Seq2SeqParams Seq2SeqParams::init(const Seq2SeqConfig& cfg, int n_labels, std::uint64_t seed,
                                  const std::string& prefix) {
  cfg.validate();
  nn::Initializer init(seed);
  const double b = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  Seq2SeqParams p;
  p.embedding = init.uniform(prefix + ".embedding", cfg.vocab_size, cfg.d, b);
  p.positional = init.uniform(prefix + ".positional", cfg.max_positions, cfg.d, b);
  for (int l = 0; l < cfg.layers; ++l) {
    p.encoder.push_back(nn::BlockParams::init(init, prefix + ".enc" + std::to_string(l), cfg.d));
  }
  for (int l = 0; l < cfg.layers; ++l) {
    p.decoder.push_back(nn::DecoderBlockParams::init(init, prefix + ".dec" + std::to_string(l), cfg.d));
  }
  p.lc_w1 = init.uniform(prefix + ".lc_w1", cfg.vocab_size, cfg.d, 1.0 / std::sqrt(static_cast<double>(cfg.vocab_size)));
  p.lc_b1 = init.constant(prefix + ".lc_b1", 1, cfg.d, 0.0);
  p.lc_w2 = init.uniform(prefix + ".lc_w2", cfg.d, n_labels, b);
  p.lc_b2 = init.constant(prefix + ".lc_b2", 1, n_labels, 0.0);
  return p;
}

void Seq2SeqParams::for_each(const nn::ParamVisitor& f) {
  f(embedding);
  f(positional);
  for (auto& b : encoder) b.for_each(f);
  for (auto& b : decoder) b.for_each(f);
  for (Parameter* q : {&lc_w1, &lc_b1, &lc_w2, &lc_b2}) f(*q);
}

void Seq2SeqParams::for_each(const nn::ConstParamVisitor& f) const {
  f(embedding);
  f(positional);
  for (const auto& b : encoder) b.for_each(f);
  for (const auto& b : decoder) b.for_each(f);
  for (const Parameter* q : {&lc_w1, &lc_b1, &lc_w2, &lc_b2}) f(*q);
}

std::size_t Seq2SeqParams::count() const {
  std::size_t n = 0;
  for_each([&](const Parameter& q) { n += static_cast<std::size_t>(q.size()); });
  return n;
}

std::size_t Seq2SeqParamBreakdown::total() const {
  return encoder_core + decoder_core + embedding + positional + label_head + auxiliary;
}

namespace {

std::size_t sz(const Parameter& p) { return static_cast<std::size_t>(p.size()); }

std::size_t attention_core(const nn::AttentionParams& a) {
  std::size_t n = 0;
  a.for_each([&](const Parameter& q) { n += sz(q); });
  return n;
}

}  // namespace

Seq2SeqParamBreakdown breakdown(const Seq2SeqParams& p) {
  Seq2SeqParamBreakdown b;
  b.embedding = sz(p.embedding);
  b.positional = sz(p.positional);
  for (const auto& blk : p.encoder) {
    b.encoder_core += attention_core(blk.attn) + sz(blk.ffn.w_in) + sz(blk.ffn.w_out);
    b.auxiliary += sz(blk.ffn.b_in) + sz(blk.ffn.b_out);
    blk.ln1.for_each([&](const Parameter& q) { b.auxiliary += sz(q); });
    blk.ln2.for_each([&](const Parameter& q) { b.auxiliary += sz(q); });
  }
  for (const auto& blk : p.decoder) {
    b.decoder_core +=
        attention_core(blk.self_attn) + attention_core(blk.cross_attn) + sz(blk.ffn.w_in) + sz(blk.ffn.w_out);
    b.auxiliary += sz(blk.ffn.b_in) + sz(blk.ffn.b_out);
    for (const auto* ln : {&blk.ln1, &blk.ln2, &blk.ln3}) ln->for_each([&](const Parameter& q) { b.auxiliary += sz(q); });
  }
  b.label_head = sz(p.lc_w1) + sz(p.lc_b1) + sz(p.lc_w2) + sz(p.lc_b2);
  return b;
}

std::vector<int> fid_token_ids(const std::vector<int>& claim, const std::vector<int>& evidence, int budget) {
  if (static_cast<int>(claim.size()) + 1 > budget) {
    throw Error(ErrorKind::OverLengthAfterTruncation,
                "claim needs " + std::to_string(claim.size() + 1) + " positions, budget " + std::to_string(budget));
  }
  std::vector<int> ids = claim;
  ids.push_back(Vocabulary::kSep);
  const std::size_t room = static_cast<std::size_t>(budget) - ids.size();
  ids.insert(ids.end(), evidence.begin(), evidence.begin() + static_cast<std::ptrdiff_t>(std::min(room, evidence.size())));
  return ids;
}

Var build_fid_input(ad::Tape& tape, const std::vector<int>& claim_tokens, const std::vector<int>& evidence_tokens,
                    const std::vector<Var>& claim_images, const std::vector<Var>& evidence_images,
                    const Seq2SeqParams& sp, const Seq2SeqConfig& cfg, const enc::EncoderParams& ep) {
  std::vector<int> ids = fid_token_ids(claim_tokens, evidence_tokens, cfg.max_positions);
  for (int& id : ids) {
    if (id < 0 || id >= cfg.vocab_size) id = Vocabulary::kUnk;
  }
  std::vector<int> pos(ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  Var text = ad::add(ad::gather_rows(tape.param(sp.embedding), ids), ad::gather_rows(tape.param(sp.positional), pos));
  std::vector<Var> images;
  for (const auto* group : {&claim_images, &evidence_images}) {
    for (const Var& v : *group) {
      if (v.rows() != 1 || v.cols() != cfg.d) throw Error(ErrorKind::ShapeMismatch, "image CLS embedding shape");
      images.push_back(v);
    }
  }
  if (images.empty()) return text;
  std::vector<Var> rows{ad::matmul(ad::vstack(images), tape.param(ep.w_img)), text};
  return ad::vstack(rows);
}

Var encode_fid(ad::Tape& tape, const Var& input, const Seq2SeqParams& sp, const Seq2SeqConfig& cfg,
               nn::AttentionLog* log) {
  Var x = input;
  for (const auto& blk : sp.encoder) x = nn::encoder_block(tape, x, x, blk, cfg.n_heads, log);
  return x;
}

Var fuse_in_decoder(ad::Tape& tape, const std::vector<Var>& per_evidence) {
  if (per_evidence.empty()) throw Error(ErrorKind::NoEvidence, "fusion-in-decoder over no evidence");
  if (per_evidence.size() == 1) return per_evidence[0];
  Eigen::Index rows = 0;
  const Eigen::Index d = per_evidence[0].cols();
  for (const Var& v : per_evidence) {
    if (v.cols() != d) throw Error(ErrorKind::ShapeMismatch, "fusion-in-decoder widths differ");
    rows = std::max(rows, v.rows());
  }
  Mat count = Mat::Zero(rows, d);
  Var total;
  for (const Var& v : per_evidence) {
    count.topRows(v.rows()).array() += 1.0;
    Var padded = v;
    if (v.rows() < rows) {
      std::vector<Var> parts{v, tape.constant(Mat::Zero(rows - v.rows(), d))};
      padded = ad::vstack(parts);
    }
    total = total.valid() ? ad::add(total, padded) : padded;
  }
  return ad::mul(total, tape.constant(count.cwiseInverse()));
}

Mat fuse_in_decoder(const std::vector<Mat>& per_evidence) {
  ad::Tape tape(false);
  std::vector<Var> v;
  for (const Mat& m : per_evidence) v.push_back(tape.constant(m));
  return fuse_in_decoder(tape, v).value();
}

Var decoder_logits(ad::Tape& tape, const Var& fused, const std::vector<int>& input_ids, const Seq2SeqParams& sp,
                   const Seq2SeqConfig& cfg, nn::AttentionLog* log) {
  if (input_ids.empty()) throw Error(ErrorKind::EmptySequence, "decoder input is empty");
  if (static_cast<int>(input_ids.size()) > cfg.max_positions) {
    throw Error(ErrorKind::ShapeMismatch, "decoder input longer than positional table");
  }
  std::vector<int> pos(input_ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  Var emb = tape.param(sp.embedding);
  Var x = ad::add(ad::gather_rows(emb, input_ids), ad::gather_rows(tape.param(sp.positional), pos));
  for (const auto& blk : sp.decoder) x = nn::decoder_block(tape, x, fused, blk, cfg.n_heads, log);
  return ad::matmul(x, ad::transpose(emb));
}

Var generation_loss(const Var& logits, const std::vector<int>& gold) {
  if (gold.empty()) throw Error(ErrorKind::EmptyGold, "generation loss over empty target");
  return ad::nll_rows(logits, gold, 1e-12);
}

double generation_loss(const Mat& logits, const std::vector<int>& gold) {
  ad::Tape tape(false);
  return generation_loss(tape.constant(logits), gold).scalar();
}

Var pool_logits(const Var& logits) {
  if (logits.rows() == 0) throw Error(ErrorKind::EmptySequence, "pooling over no tokens");
  return ad::mean_rows(logits);
}

RowVec pool_logits(const std::vector<RowVec>& per_token) {
  if (per_token.empty()) throw Error(ErrorKind::EmptySequence, "pooling over no tokens");
  RowVec s = RowVec::Zero(per_token[0].size());
  for (const auto& r : per_token) s += r;
  return s / static_cast<double>(per_token.size());
}

Var label_logits(ad::Tape& tape, const Var& pooled, const Seq2SeqParams& sp) {
  Var h = ad::gelu(ad::add_row(ad::matmul(pooled, tape.param(sp.lc_w1)), tape.param(sp.lc_b1)));
  return ad::add_row(ad::matmul(h, tape.param(sp.lc_w2)), tape.param(sp.lc_b2));
}

Var consistency_loss(const Var& y_hat, const Var& y_e, int gold_index) {
  if (y_hat.rows() != 1 || y_hat.cols() != y_e.cols() || y_e.rows() != 1) {
    throw Error(ErrorKind::ShapeMismatch, "consistency loss distributions differ in shape");
  }
  if (gold_index < 0 || gold_index >= y_hat.cols()) throw Error(ErrorKind::UnknownLabel, "gold index out of range");
  Var log_p = ad::log(ad::clamp_min(y_hat, 1e-12));
  Var log_q = ad::log(ad::clamp_min(y_e, 1e-12));
  Var kl_pq = ad::sum(ad::mul(y_hat, ad::sub(log_p, log_q)));
  Var kl_qp = ad::sum(ad::mul(y_e, ad::sub(log_q, log_p)));
  Var ce = ad::scale(ad::slice_cols(log_q, gold_index, 1), -1.0);
  return ad::add(ad::add(kl_pq, kl_qp), ce);
}

double consistency_loss(const RowVec& y_hat, const RowVec& y_e, int gold_index) {
  ad::Tape tape(false);
  return consistency_loss(tape.constant(y_hat), tape.constant(y_e), gold_index).scalar();
}

TeacherForced teacher_force(ad::Tape& tape, const Var& fused, const std::vector<int>& explanation,
                            const Seq2SeqParams& sp, const Seq2SeqConfig& cfg, nn::AttentionLog* log) {
  if (explanation.empty()) throw Error(ErrorKind::EmptyGold, "explanation has no tokens");
  const std::size_t n = std::min(explanation.size(), static_cast<std::size_t>(cfg.max_positions - 1));
  std::vector<int> input{Vocabulary::kBos};
  std::vector<int> target;
  for (std::size_t i = 0; i < n; ++i) {
    const int id = explanation[i] < cfg.vocab_size ? explanation[i] : Vocabulary::kUnk;
    input.push_back(id);
    target.push_back(id);
  }
  target.push_back(Vocabulary::kEos);
  TeacherForced out;
  out.logits = decoder_logits(tape, fused, input, sp, cfg, log);
  out.loss = generation_loss(out.logits, target);
  out.pooled = pool_logits(ad::slice_rows(out.logits, 0, static_cast<Eigen::Index>(n)));
  return out;
}

int argmax_lowest(const RowVec& row) {
  int best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = static_cast<int>(i);
  }
  return best;
}

Explanation generate(const Mat& fused, const Seq2SeqParams& sp, const Seq2SeqConfig& cfg, const Vocabulary& vocab,
                     int max_len) {
  if (max_len < 1) throw Error(ErrorKind::InvalidArgument, "max_len must be >= 1");
  if (fused.rows() == 0) throw Error(ErrorKind::NoEvidence, "generation without encoded evidence");
  const int budget = std::min(max_len, cfg.max_positions - 1);
  Explanation out;
  std::vector<int> input{Vocabulary::kBos};
  std::vector<RowVec> eos_step;
  for (int step = 0; step < budget; ++step) {
    ad::Tape tape(false);
    Var logits = decoder_logits(tape, tape.constant(fused), input, sp, cfg);
    RowVec last = logits.value().row(logits.rows() - 1);
    const int next = argmax_lowest(last);
    if (next == Vocabulary::kEos) {
      eos_step.push_back(last);
      break;
    }
    out.per_step_logits.push_back(last);
    out.token_ids.push_back(next);
    input.push_back(next);
  }
  out.pooled = pool_logits(out.per_step_logits.empty() ? eos_step : out.per_step_logits);
  out.text = vocab.decode(out.token_ids);
  return out;
}

}  // namespace mever::expl

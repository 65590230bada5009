#include "mever/verifier.hpp"

#include <algorithm>
#include <cmath>

#include "mever/error.hpp"

namespace mever::ver {

FusionParams FusionParams::init(int d, int n_labels, std::uint64_t seed, const std::string& prefix) {
  if (d < 1 || n_labels < 2) throw Error(ErrorKind::InvalidArgument, "fusion needs d >= 1 and >= 2 labels");
  nn::Initializer init(seed);
  const double b = 1.0 / std::sqrt(static_cast<double>(d));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(2 * d));
  FusionParams p;
  p.attn = nn::AttentionParams::init(init, prefix + ".attn", d, false);
  p.w_1 = init.uniform(prefix + ".w_1", 2 * d, d, b2);
  p.w_2 = init.uniform(prefix + ".w_2", 2 * d, d, b2);
  p.w_evid = init.uniform(prefix + ".w_evid", d, d, b);
  p.b_e2c = init.uniform(prefix + ".b_e2c", 1, 2 * d, b);
  p.cls_w1 = init.uniform(prefix + ".cls_w1", 2 * d, d, b2);
  p.cls_b1 = init.constant(prefix + ".cls_b1", 1, d, 0.0);
  p.cls_w2 = init.uniform(prefix + ".cls_w2", d, n_labels, b);
  p.cls_b2 = init.constant(prefix + ".cls_b2", 1, n_labels, 0.0);
  return p;
}

void FusionParams::for_each(const nn::ParamVisitor& f) {
  attn.for_each(f);
  for (Parameter* q : {&w_1, &w_2, &w_evid, &b_e2c, &cls_w1, &cls_b1, &cls_w2, &cls_b2}) f(*q);
}

void FusionParams::for_each(const nn::ConstParamVisitor& f) const {
  attn.for_each(f);
  for (const Parameter* q : {&w_1, &w_2, &w_evid, &b_e2c, &cls_w1, &cls_b1, &cls_w2, &cls_b2}) f(*q);
}

std::size_t FusionParams::count() const {
  std::size_t n = 0;
  for_each([&](const Parameter& q) { n += static_cast<std::size_t>(q.size()); });
  return n;
}

FusionParamBreakdown breakdown(const FusionParams& p) {
  FusionParamBreakdown b;
  p.attn.for_each([&](const Parameter& q) { b.core += static_cast<std::size_t>(q.size()); });
  for (const Parameter* q : {&p.w_1, &p.w_2, &p.w_evid}) b.core += static_cast<std::size_t>(q->size());
  for (const Parameter* q : {&p.b_e2c, &p.cls_w1, &p.cls_b1, &p.cls_w2, &p.cls_b2}) {
    b.auxiliary += static_cast<std::size_t>(q->size());
  }
  return b;
}

VerdictDistribution make_distribution(const RowVec& probs, const std::vector<std::string>& labels) {
  if (probs.size() != static_cast<Eigen::Index>(labels.size())) {
    throw Error(ErrorKind::ShapeMismatch, "probability width differs from label count");
  }
  VerdictDistribution v;
  v.labels = labels;
  v.probs.assign(probs.data(), probs.data() + probs.size());
  std::size_t best = 0;
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (v.probs[i] > v.probs[best] || (v.probs[i] == v.probs[best] && labels[i] < labels[best])) best = i;
  }
  v.predicted_label = labels[best];
  return v;
}

Var token_fuse_unit(ad::Tape& tape, const Var& H, const std::vector<Var>& Z, const FusionParams& p, int n_heads,
                    nn::AttentionLog* log) {
  const Eigen::Index d = p.dim();
  if (H.cols() != d) throw Error(ErrorKind::ShapeMismatch, "token fusion text width");
  Var z_t;
  if (Z.empty()) {
    z_t = tape.constant(Mat::Zero(H.rows(), d));
  } else {
    std::vector<Var> per_image;
    for (const Var& z : Z) {
      if (z.cols() != d) throw Error(ErrorKind::ShapeMismatch, "token fusion image width");
      per_image.push_back(nn::multi_head_attention(tape, H, z, p.attn, n_heads, nullptr, log));
    }
    z_t = ad::mean(per_image);
  }
  std::vector<Var> parts{H, z_t};
  return ad::matmul(ad::hstack(parts), tape.param(p.w_1));
}

Var claim_evidence_interact(ad::Tape& tape, const std::vector<Var>& U_evidence, const Var& U_claim,
                            const FusionParams& p, int n_heads, nn::AttentionLog* log) {
  if (U_evidence.empty()) throw Error(ErrorKind::NoEvidence, "claim-evidence interaction without evidence");
  // Only the CLS row of the pooled matrix is read, and attention rows are
  // independent per query, so the CLS query row alone is enough.
  std::vector<Var> cls_rows;
  for (const Var& u : U_evidence) {
    cls_rows.push_back(nn::multi_head_attention(tape, ad::slice_rows(u, 0, 1), U_claim, p.attn, n_heads, nullptr, log));
  }
  return ad::mean(cls_rows);
}

Var evidence_fuse(ad::Tape& tape, const Var& claim_embedding, const std::vector<enc::EncodedVars>& evidence,
                  const FusionParams& p, const enc::EncoderParams& ep, nn::AttentionLog* log) {
  if (evidence.empty()) throw Error(ErrorKind::NoEvidence, "evidence fusion without evidence");
  const Eigen::Index d = p.dim();
  Var w_txt = tape.param(ep.w_txt);
  Var w_img = tape.param(ep.w_img);
  Var w_evid = tape.param(p.w_evid);
  std::vector<Var> projected;
  for (const auto& e : evidence) {
    Var h_cls = ad::slice_rows(e.H, 0, 1);
    Var z_hat;
    if (e.Z.empty()) {
      z_hat = tape.constant(Mat::Zero(1, d));
    } else {
      std::vector<Var> cls;
      for (const Var& z : e.Z) cls.push_back(ad::slice_rows(z, 0, 1));
      z_hat = enc::gnn_aggregate(tape, ad::matmul(h_cls, w_txt), ad::matmul(ad::vstack(cls), w_img), ep.b_i2t, log);
    }
    std::vector<Var> parts{h_cls, z_hat};
    Var t_k = ad::matmul(ad::hstack(parts), tape.param(p.w_2));
    projected.push_back(ad::matmul(t_k, w_evid));
  }
  return enc::gnn_aggregate(tape, ad::matmul(claim_embedding, w_txt), ad::vstack(projected), p.b_e2c, log);
}

Var classify_logits(ad::Tape& tape, const Var& c, const Var& t, const FusionParams& p) {
  if (c.cols() != p.dim() || t.cols() != p.dim()) throw Error(ErrorKind::ShapeMismatch, "classifier input width");
  std::vector<Var> parts{c, t};
  Var h = ad::gelu(ad::add_row(ad::matmul(ad::hstack(parts), tape.param(p.cls_w1)), tape.param(p.cls_b1)));
  return ad::add_row(ad::matmul(h, tape.param(p.cls_w2)), tape.param(p.cls_b2));
}

Var verification_loss(const Var& logits, int gold_index) {
  const int targets[1] = {gold_index};
  return ad::nll_rows(logits, targets, 1e-12);
}

VerifyVars verify(ad::Tape& tape, const enc::EncodedVars& claim, const std::vector<enc::EncodedVars>& evidence,
                  const FusionParams& p, const enc::EncoderParams& ep, const FusionOptions& opts,
                  nn::AttentionLog* log) {
  if (evidence.empty()) throw Error(ErrorKind::NoEvidence, "verification without evidence");
  VerifyVars out;
  if (opts.token_fusion) {
    Var u_claim = token_fuse_unit(tape, claim.H, claim.Z, p, opts.n_heads, log);
    std::vector<Var> u_evidence;
    for (const auto& e : evidence) u_evidence.push_back(token_fuse_unit(tape, e.H, e.Z, p, opts.n_heads, log));
    out.c = claim_evidence_interact(tape, u_evidence, u_claim, p, opts.n_heads, log);
  } else {
    out.c = ad::slice_rows(claim.H, 0, 1);
  }
  out.t = opts.evidence_fusion ? evidence_fuse(tape, out.c, evidence, p, ep, log) : out.c;
  out.logits = classify_logits(tape, out.c, out.t, p);
  return out;
}

namespace {

enc::EncodedVars constants(ad::Tape& tape, const enc::EncodedUnit& u) {
  enc::EncodedVars v;
  v.H = tape.constant(u.H);
  for (const Mat& z : u.Z) v.Z.push_back(tape.constant(z));
  return v;
}

}  // namespace

Mat token_fuse_unit(const Mat& H, const std::vector<Mat>& Z, const FusionParams& p, int n_heads,
                    nn::AttentionLog* log) {
  ad::Tape tape(false);
  std::vector<Var> z;
  for (const Mat& m : Z) z.push_back(tape.constant(m));
  return token_fuse_unit(tape, tape.constant(H), z, p, n_heads, log).value();
}

RowVec claim_evidence_interact(const std::vector<Mat>& U_evidence, const Mat& U_claim, const FusionParams& p,
                               int n_heads, nn::AttentionLog* log) {
  ad::Tape tape(false);
  std::vector<Var> u;
  for (const Mat& m : U_evidence) u.push_back(tape.constant(m));
  return claim_evidence_interact(tape, u, tape.constant(U_claim), p, n_heads, log).value();
}

RowVec evidence_fuse(const RowVec& claim_embedding, const std::vector<enc::EncodedUnit>& evidence,
                     const FusionParams& p, const enc::EncoderParams& ep, nn::AttentionLog* log) {
  ad::Tape tape(false);
  std::vector<enc::EncodedVars> ev;
  for (const auto& e : evidence) ev.push_back(constants(tape, e));
  return evidence_fuse(tape, tape.constant(claim_embedding), ev, p, ep, log).value();
}

VerdictDistribution classify(const RowVec& c, const RowVec& t, const FusionParams& p,
                             const std::vector<std::string>& labels) {
  ad::Tape tape(false);
  Var probs = ad::softmax_rows(classify_logits(tape, tape.constant(c), tape.constant(t), p));
  return make_distribution(probs.value(), labels);
}

double verification_loss(const VerdictDistribution& pred, const std::string& gold) {
  const auto it = std::find(pred.labels.begin(), pred.labels.end(), gold);
  if (it == pred.labels.end()) throw Error(ErrorKind::UnknownLabel, gold);
  return -std::log(std::max(pred.probs[static_cast<std::size_t>(it - pred.labels.begin())], 1e-12));
}

VerdictDistribution predict(const enc::EncodedUnit& claim, const std::vector<enc::EncodedUnit>& evidence,
                            const FusionParams& p, const enc::EncoderParams& ep, const FusionOptions& opts,
                            const std::vector<std::string>& labels) {
  ad::Tape tape(false);
  std::vector<enc::EncodedVars> ev;
  for (const auto& e : evidence) ev.push_back(constants(tape, e));
  VerifyVars v = verify(tape, constants(tape, claim), ev, p, ep, opts);
  return make_distribution(ad::softmax_rows(v.logits).value(), labels);
}

}  // namespace mever::ver

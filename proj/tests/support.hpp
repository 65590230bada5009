#pragma once

// Shared fixtures for the unit tests and the acceptance binary: tiny model
// configurations, a finite-difference gradient checker and scalar-loop
// reference implementations of the attention arithmetic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mever/ad.hpp"
#include "mever/datamodel.hpp"
#include "mever/encoder.hpp"
#include "mever/explainer.hpp"
#include "mever/nn.hpp"
#include "mever/trainer.hpp"
#include "mever/verifier.hpp"

namespace mever::testing {

using ad::Mat;
using ad::Parameter;
using ad::RowVec;
using ad::Var;

inline Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline int random_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// d=8, L=2, V=50, 8x8 images cut into 4x4 patches.
inline enc::EncoderConfig tiny_encoder() {
  enc::EncoderConfig c;
  c.layers = 2;
  c.d = 8;
  c.n_heads = 2;
  c.max_text_len = 10;
  c.patch_size = 4;
  c.channels = 3;
  c.vocab_size = 50;
  c.max_positions = 12;
  return c;
}

inline expl::Seq2SeqConfig tiny_seq2seq() {
  expl::Seq2SeqConfig c;
  c.layers = 2;
  c.d = 8;
  c.n_heads = 2;
  c.vocab_size = 50;
  c.max_positions = 40;
  c.max_len = 12;
  return c;
}

inline data::SyntheticOptions tiny_corpus_options(std::uint64_t seed = 3) {
  data::SyntheticOptions o;
  o.seed = seed;
  o.n_claims = 6;
  o.n_evidence = 4;
  o.n_images = 4;
  o.vocab = 12;
  o.image_size = 8;
  return o;
}

// Joint model over a tiny synthetic corpus with every parameter freshly
// initialized (no training).
struct TinyJoint {
  data::Dataset data;
  train::JointModel model;
  train::RetrievedMap retrieved;
};

inline TinyJoint tiny_joint(std::uint64_t seed = 3, bool explanations = true) {
  TinyJoint t;
  data::SyntheticOptions o = tiny_corpus_options(seed);
  o.with_explanations = explanations;
  t.data = data::generate_synthetic(o);
  train::JointModel& m = t.model;
  m.vocab = train::build_vocabulary(t.data);
  m.cfg.encoder = tiny_encoder();
  m.cfg.seq2seq = tiny_seq2seq();
  m.cfg.k_retrieved = 2;
  m.cfg.seed = seed;
  m.labels = t.data.label_set;
  m.explanations = explanations;
  m.retriever = enc::EncoderParams::init(m.cfg.encoder, seed, "enc");
  m.encoder = m.retriever;
  m.fusion = ver::FusionParams::init(8, static_cast<int>(m.labels.size()), seed + 101);
  m.seq2seq = expl::Seq2SeqParams::init(m.cfg.seq2seq, static_cast<int>(m.labels.size()), seed + 202);
  return t;
}

inline std::vector<const data::ClaimRecord*> first_claims(const data::Dataset& d, std::size_t n) {
  std::vector<const data::ClaimRecord*> out;
  for (std::size_t i = 0; i < n && i < d.claims.size(); ++i) out.push_back(&d.claims[i]);
  return out;
}

template <typename Params>
void collect_params(Params& p, std::vector<Parameter*>& out) {
  p.for_each([&](Parameter& q) { out.push_back(&q); });
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::string worst;
};

// Compares tape gradients with central differences on a deterministic
// sample of entries of every parameter (the largest-gradient entry of each
// tensor is always included). Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck grad_check(const std::vector<Parameter*>& params, const std::function<Var(ad::Tape&)>& loss,
                            std::size_t per_param = 4, double h = 1e-6, double floor = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  {
    ad::Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  auto value_at = [&]() {
    ad::Tape tape(false);
    return loss(tape).scalar();
  };
  GradCheck out;
  std::mt19937_64 rng(1234);
  for (Parameter* p : params) {
    const Eigen::Index n = p->value.size();
    if (n == 0) continue;
    std::vector<Eigen::Index> picks;
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < n; ++i) {
      if (std::abs(p->grad.data()[i]) > std::abs(p->grad.data()[best])) best = i;
    }
    picks.push_back(best);
    for (std::size_t s = 1; s < per_param && static_cast<Eigen::Index>(s) < n; ++s) {
      picks.push_back(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
    }
    for (Eigen::Index i : picks) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = value_at();
      x = saved - h;
      const double down = value_at();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.data()[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++out.entries;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return out;
}

// ---- scalar-loop references ----

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> softmax(const std::vector<double>& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  std::vector<double> e(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (e[i] = std::exp(x[i] - m));
  for (double& v : e) v /= s;
  return e;
}

inline Mat matmul_loops(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

// Graph attention: weights = softmax_i sigmoid(b[:d].q + b[d:].n_i), output
// sum_i weights_i n_i. `weights_out` receives the attention vector.
inline RowVec gnn_oracle(const RowVec& q, const Mat& neighbours, const RowVec& bias,
                         std::vector<double>* weights_out = nullptr) {
  const Eigen::Index d = q.size();
  std::vector<double> scores;
  for (Eigen::Index i = 0; i < neighbours.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) s += bias(k) * q(k) + bias(d + k) * neighbours(i, k);
    scores.push_back(sigmoid(s));
  }
  const std::vector<double> w = softmax(scores);
  RowVec out = RowVec::Zero(d);
  for (Eigen::Index i = 0; i < neighbours.rows(); ++i) {
    for (Eigen::Index k = 0; k < d; ++k) out(k) += w[static_cast<std::size_t>(i)] * neighbours(i, k);
  }
  if (weights_out != nullptr) *weights_out = w;
  return out;
}

// Multi-head scaled dot-product attention, optional output projection.
inline Mat mha_oracle(const Mat& queries, const Mat& memory, const nn::AttentionParams& p, int n_heads,
                      const Mat* mask = nullptr) {
  const Mat q = matmul_loops(queries, p.wq.value);
  const Mat k = matmul_loops(memory, p.wk.value);
  const Mat v = matmul_loops(memory, p.wv.value);
  const Eigen::Index d = q.cols();
  const Eigen::Index dh = d / n_heads;
  Mat out = Mat::Zero(queries.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      std::vector<double> s;
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        double dot = 0.0;
        for (Eigen::Index c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
        s.push_back(dot / std::sqrt(static_cast<double>(dh)) + (mask != nullptr ? (*mask)(i, j) : 0.0));
      }
      const auto w = softmax(s);
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        for (Eigen::Index c = 0; c < dh; ++c) out(i, h * dh + c) += w[static_cast<std::size_t>(j)] * v(j, h * dh + c);
      }
    }
  }
  return p.has_output() ? matmul_loops(out, p.wo.value) : out;
}

inline double gelu_oracle(double x) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline Mat layer_norm_oracle(const Mat& x, const nn::LayerNormParams& p, double eps = 1e-5) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out(i, j) = (x(i, j) - mean) / std::sqrt(var + eps) * p.gain.value(0, j) + p.bias.value(0, j);
    }
  }
  return out;
}

inline Mat block_oracle(const Mat& queries, const Mat& memory, const nn::BlockParams& p, int n_heads) {
  const Mat x = layer_norm_oracle(queries + mha_oracle(queries, memory, p.attn, n_heads), p.ln1);
  Mat h = matmul_loops(x, p.ffn.w_in.value);
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) h(i, j) = gelu_oracle(h(i, j) + p.ffn.b_in.value(0, j));
  }
  Mat f = matmul_loops(h, p.ffn.w_out.value);
  for (Eigen::Index i = 0; i < f.rows(); ++i) f.row(i) += p.ffn.b_out.value.row(0);
  return layer_norm_oracle(x + f, p.ln2);
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

}  // namespace mever::testing

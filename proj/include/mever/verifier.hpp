#pragma once

// Token-level fusion of text and images, claim-evidence interaction,
// evidence-level aggregation and the verdict classifier.

#include <cstdint>
#include <string>
#include <vector>

#include "mever/ad.hpp"
#include "mever/encoder.hpp"
#include "mever/nn.hpp"

namespace mever::ver {

using ad::Mat;
using ad::Parameter;
using ad::RowVec;
using ad::Var;

struct FusionParams {
  nn::AttentionParams attn;  // W_Q, W_K, W_V shared by token fusion and claim-evidence interaction
  Parameter w_1;             // 2d x d, unifies [H || Z]
  Parameter w_2;             // 2d x d, combines evidence CLS with its aggregated image
  Parameter w_evid;          // d x d
  Parameter b_e2c;           // 1 x 2d
  Parameter cls_w1, cls_b1;  // 2d x d, 1 x d
  Parameter cls_w2, cls_b2;  // d x |labels|, 1 x |labels|

  static FusionParams init(int d, int n_labels, std::uint64_t seed, const std::string& prefix = "ver");

  int dim() const { return static_cast<int>(w_evid.value.rows()); }
  int n_labels() const { return static_cast<int>(cls_w2.value.cols()); }
  void for_each(const nn::ParamVisitor& f);
  void for_each(const nn::ConstParamVisitor& f) const;
  std::size_t count() const;
};

struct FusionParamBreakdown {
  std::size_t core = 0;        // W_Q, W_K, W_V, W_1, W_2, W_evid
  std::size_t auxiliary = 0;   // b_e2c and the classifier
  std::size_t total() const { return core + auxiliary; }
};

FusionParamBreakdown breakdown(const FusionParams& p);

struct FusionOptions {
  int n_heads = 1;
  bool token_fusion = true;     // false: claim embedding is the encoder's text CLS
  bool evidence_fusion = true;  // false: classifier sees [c || c]
};

struct VerdictDistribution {
  std::vector<std::string> labels;
  std::vector<double> probs;
  std::string predicted_label;  // argmax, ties to the lexicographically smallest label
};

VerdictDistribution make_distribution(const RowVec& probs, const std::vector<std::string>& labels);

// Differentiable building blocks.
Var token_fuse_unit(ad::Tape& tape, const Var& H, const std::vector<Var>& Z, const FusionParams& p, int n_heads,
                    nn::AttentionLog* log = nullptr);
Var claim_evidence_interact(ad::Tape& tape, const std::vector<Var>& U_evidence, const Var& U_claim,
                            const FusionParams& p, int n_heads, nn::AttentionLog* log = nullptr);
Var evidence_fuse(ad::Tape& tape, const Var& claim_embedding, const std::vector<enc::EncodedVars>& evidence,
                  const FusionParams& p, const enc::EncoderParams& ep, nn::AttentionLog* log = nullptr);
Var classify_logits(ad::Tape& tape, const Var& c, const Var& t, const FusionParams& p);
Var verification_loss(const Var& logits, int gold_index);

// Full verification head over an encoded claim and its evidence.
struct VerifyVars {
  Var c;
  Var t;
  Var logits;
};

VerifyVars verify(ad::Tape& tape, const enc::EncodedVars& claim, const std::vector<enc::EncodedVars>& evidence,
                  const FusionParams& p, const enc::EncoderParams& ep, const FusionOptions& opts,
                  nn::AttentionLog* log = nullptr);

// Value-level wrappers.
Mat token_fuse_unit(const Mat& H, const std::vector<Mat>& Z, const FusionParams& p, int n_heads = 1,
                    nn::AttentionLog* log = nullptr);
RowVec claim_evidence_interact(const std::vector<Mat>& U_evidence, const Mat& U_claim, const FusionParams& p,
                               int n_heads = 1, nn::AttentionLog* log = nullptr);
RowVec evidence_fuse(const RowVec& claim_embedding, const std::vector<enc::EncodedUnit>& evidence,
                     const FusionParams& p, const enc::EncoderParams& ep, nn::AttentionLog* log = nullptr);
VerdictDistribution classify(const RowVec& c, const RowVec& t, const FusionParams& p,
                             const std::vector<std::string>& labels);
double verification_loss(const VerdictDistribution& pred, const std::string& gold);

VerdictDistribution predict(const enc::EncodedUnit& claim, const std::vector<enc::EncodedUnit>& evidence,
                            const FusionParams& p, const enc::EncoderParams& ep, const FusionOptions& opts,
                            const std::vector<std::string>& labels);

}  // namespace mever::ver

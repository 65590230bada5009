#pragma once

// Two-stage training: the contrastive retriever first, then the joint
// verification + explanation model on top of frozen retrieval.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mever/checkpoint.hpp"
#include "mever/datamodel.hpp"
#include "mever/encoder.hpp"
#include "mever/explainer.hpp"
#include "mever/retriever.hpp"
#include "mever/tokenizer.hpp"
#include "mever/verifier.hpp"

namespace mever::train {

enum class EvidenceSetting { Gold, Retrieved };

std::string to_string(EvidenceSetting s);
EvidenceSetting parse_setting(const std::string& s);

struct Ablations {
  bool no_images = false;
  bool no_i2t = false;
  bool no_t2i = false;
  bool no_token_fusion = false;
  bool no_evidence_fusion = false;
  bool no_fid = false;
  bool no_regularizer = false;

  static const std::vector<std::string>& names();
  // Comma-separated flag names; empty string and "none" mean no flags.
  static Ablations parse(const std::string& csv);
  void set(const std::string& name);
  std::string to_string() const;  // "none" when empty
  bool operator==(const Ablations&) const = default;
};

struct TrainConfig {
  double lambda_reg = 0.5;
  int k_retrieved = 3;
  int batch_size = 8;
  double learning_rate = 1e-3;
  int max_epochs_retriever = 200;
  int max_epochs_joint = 300;
  int patience = 30;
  std::uint64_t seed = 7;
  EvidenceSetting evidence_setting = EvidenceSetting::Gold;
  Ablations ablations;
  bool detach_consistency = false;  // stop gradient into the verdict side of the regularizer
  // "auto" follows the dataset; "on" requires explanations; "off" trains verification only.
  std::string explanation_mode = "auto";
  enc::EncoderConfig encoder;
  expl::Seq2SeqConfig seq2seq;

  void validate() const;
  // Flat key=value assignment; throws InvalidArgument on unknown keys.
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  static TrainConfig from_text(const std::string& text, TrainConfig base);
  static TrainConfig from_file(const std::filesystem::path& path, TrainConfig base);

  enc::EncoderOptions encoder_options() const;
  ver::FusionOptions fusion_options() const;
  bool operator==(const TrainConfig&) const = default;
};

class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void zero_grad();
  void step();  // reads Parameter::grad, writes Parameter::value

  long steps() const { return t_; }
  ckpt::TensorGroup export_moments(bool second) const;
  void import_state(const ckpt::TensorGroup& m, const ckpt::TensorGroup& v, long t);

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<ad::Mat> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct BatchLoss {
  double total = 0.0;
  double ver = 0.0;
  double exp = 0.0;
  double reg = 0.0;
};

struct TrainLog {
  std::vector<double> epoch_loss;    // summed over batches
  std::vector<double> epoch_metric;  // MAP (retriever) or Macro F1 (joint), on val or train
  std::vector<BatchLoss> batches;
  int best_epoch = -1;
  double best_metric = -1.0;
  std::string metric_split;
};

struct RunOptions {
  std::filesystem::path checkpoint_path;  // when set, written after every epoch
  std::optional<ckpt::Checkpoint> resume;
  int stop_after_epoch = -1;  // when >= 0, stop once this many epochs are complete
};

// Vocabulary over claims, evidence and explanations of the whole corpus.
Vocabulary build_vocabulary(const data::Dataset& d);

// Resizes vocabulary-dependent config fields.
TrainConfig fit_to_vocabulary(TrainConfig cfg, const Vocabulary& vocab);

struct RetrieverModel {
  TrainConfig cfg;  // cfg.encoder and the encoder-side ablations apply
  Vocabulary vocab;
  enc::EncoderParams params;
};

struct RetrieverResult {
  RetrieverModel model;
  TrainLog log;
};

RetrieverResult train_retriever(const data::Dataset& d, const TrainConfig& cfg, const RunOptions& run = {});

// Claim-level MAP of `model` over the claims of `split` that have gold evidence.
double retrieval_map(const data::Dataset& d, const RetrieverModel& model, const std::vector<const data::ClaimRecord*>& claims);

std::map<std::string, retrieval::RankedList> freeze_and_retrieve(const data::Dataset& d, const RetrieverModel& model,
                                                                 int k);

struct JointModel {
  TrainConfig cfg;
  Vocabulary vocab;
  std::vector<std::string> labels;
  bool explanations = false;
  enc::EncoderParams retriever;  // frozen
  enc::EncoderParams encoder;    // stage-2 copy, trained
  ver::FusionParams fusion;
  expl::Seq2SeqParams seq2seq;

  RetrieverModel retrieval_model() const;
};

struct JointResult {
  JointModel model;
  TrainLog log;
};

using RetrievedMap = std::map<std::string, retrieval::RankedList>;

// Evidence ids a claim is verified against under `setting`.
std::vector<std::string> evidence_for(const data::ClaimRecord& c, EvidenceSetting setting, const RetrievedMap& retrieved,
                                      int k);

JointResult train_joint(const data::Dataset& d, const RetrieverModel& retriever, const RetrievedMap& retrieved,
                        const TrainConfig& cfg, const RunOptions& run = {});

// Loss of one batch of claims; used by training and by the accounting checks.
BatchLoss joint_batch_loss(const data::Dataset& d, const JointModel& m, const RetrievedMap& retrieved,
                           const std::vector<const data::ClaimRecord*>& batch, bool backward);

struct Prediction {
  std::string claim_id;
  ver::VerdictDistribution verdict;
  std::string explanation;
};

Prediction predict(const data::Dataset& d, const JointModel& m, const data::ClaimRecord& claim,
                   const RetrievedMap& retrieved, bool with_explanation = true);

double macro_f1_on(const data::Dataset& d, const JointModel& m, const RetrievedMap& retrieved,
                   const std::vector<const data::ClaimRecord*>& claims);

ckpt::Checkpoint to_checkpoint(const RetrieverModel& m);
RetrieverModel retriever_from_checkpoint(const ckpt::Checkpoint& c);
ckpt::Checkpoint to_checkpoint(const JointModel& m);
JointModel joint_from_checkpoint(const ckpt::Checkpoint& c);

}  // namespace mever::train

#pragma once

// Two-layer text/image graph and the nested graph encoder. A text stack and
// an image stack advance in lock-step; from the second step on, each step
// prepends cross-modal virtual tokens (graph-aggregated CLS embeddings) to
// the keys/values of both stacks.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mever/ad.hpp"
#include "mever/datamodel.hpp"
#include "mever/nn.hpp"
#include "mever/tokenizer.hpp"

namespace mever::enc {

using ad::Mat;
using ad::Parameter;
using ad::RowVec;
using ad::Var;

struct EncoderConfig {
  int layers = 2;          // L
  int d = 32;
  int n_heads = 2;
  int max_text_len = 16;   // cap on P_txt, CLS included
  int patch_size = 8;      // P
  int channels = 3;        // C
  int vocab_size = 64;     // V
  int max_positions = 32;  // W

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct EncoderParams {
  Parameter token_embedding;   // V x d
  Parameter text_positional;   // W x d
  std::vector<nn::BlockParams> text_steps;
  Parameter patch_projection;  // (P*P*C) x d
  Parameter image_cls;         // 1 x d
  Parameter image_positional;  // W x d
  std::vector<nn::BlockParams> image_steps;
  Parameter w_txt, w_img;      // d x d
  Parameter b_i2t, b_i2i;      // 1 x 2d

  // Seeded uniform in +-1/sqrt(d); norms start at identity.
  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed, const std::string& prefix = "enc");

  void for_each(const nn::ParamVisitor& f);
  void for_each(const nn::ConstParamVisitor& f) const;
  std::size_t count() const;
};

// Parameter totals split along the terms of the textbook parameter formula.
// "core" counts the attention (4d^2) and feed-forward (8d^2) weight matrices
// of each step; biases, norms and the image CLS vector go to `auxiliary`.
struct EncoderParamBreakdown {
  std::size_t text_steps_core = 0;
  std::size_t token_embedding = 0;
  std::size_t text_positional = 0;
  std::size_t image_steps_core = 0;
  std::size_t patch_projection = 0;
  std::size_t image_positional = 0;
  std::size_t graph_projections = 0;  // W_txt + W_img
  std::size_t graph_biases = 0;       // b_i2t + b_i2i
  std::size_t auxiliary = 0;

  std::size_t total() const;
};

EncoderParamBreakdown breakdown(const EncoderParams& p);

enum class GraphMode { Retrieval, Verification };

struct MultiModalGraph {
  std::string text_node;
  std::vector<std::string> image_nodes;
  std::vector<std::pair<std::string, std::string>> cross_edges;        // (text, image)
  std::vector<std::pair<std::string, std::string>> intra_image_edges;  // unordered pairs
  bool text_self_loop = false;
};

MultiModalGraph build_graph(const std::string& unit_id, const std::vector<std::string>& image_ids, GraphMode mode);

// Ablation switches for the encoder.
struct EncoderOptions {
  bool use_images = true;     // false: every unit is encoded as text only
  bool image_to_text = true;  // false: text stack never sees the image virtual token
  bool text_to_image = true;  // false: image stacks never see the text virtual token
};

struct EncoderState {
  Mat H;               // P_txt x d, row 0 = CLS
  std::vector<Mat> Z;  // per image, P_img x d, row 0 = CLS
  int step = 0;
};

struct Aggregate {
  RowVec z_hat;    // aggregated image embedding
  RowVec h_hat;    // projected text CLS (self-loop)
  RowVec weights;  // attention over images
};

// Image-to-text reasoning: z_hat = sum_i a_i W_img z_i, with
// a = softmax(sigmoid(b_i2t . [W_txt h_cls || W_img z_i])).
Aggregate image_to_text_aggregate(const EncoderState& state, const MultiModalGraph& graph, const EncoderParams& p);

// Text-to-image reasoning for image `image_index`: neighbours are all images
// of the same text, itself included.
Aggregate text_to_image_aggregate(const EncoderState& state, const MultiModalGraph& graph, const EncoderParams& p,
                                  int image_index);

EncoderState encoder_step(const EncoderState& state, const MultiModalGraph& graph, const EncoderParams& p,
                          const EncoderConfig& cfg, const EncoderOptions& opts = {}, nn::AttentionLog* log = nullptr);

struct EncodedUnit {
  Mat H;
  std::vector<Mat> Z;
  RowVec text_embedding;                // == H.row(0)
  std::vector<RowVec> image_embeddings;  // Z[i].row(0)
};

// Tokenized text (CLS first) and patchified images, ready for the encoder.
struct UnitInput {
  std::vector<int> token_ids;
  std::vector<Mat> patches;  // per image, n_patches x (P*P*C), values in [0,1]
  std::vector<std::string> image_ids;
};

Mat patchify(const data::ImageRecord& image, int patch_size);

UnitInput prepare_unit(const std::string& text, const std::vector<const data::ImageRecord*>& images,
                       const Vocabulary& vocab, const EncoderConfig& cfg);

struct EncodedVars {
  Var H;
  std::vector<Var> Z;
};

// Graph attention over `neighbours` (n x d, already projected) with
// `query` (1 x d, already projected). Returns the 1 x d weighted sum.
Var gnn_aggregate(ad::Tape& tape, const Var& query, const Var& neighbours, const Parameter& bias,
                  nn::AttentionLog* log = nullptr);

// Differentiable encoder pass.
EncodedVars encode_vars(ad::Tape& tape, const UnitInput& input, const EncoderParams& p, const EncoderConfig& cfg,
                        const EncoderOptions& opts = {}, nn::AttentionLog* log = nullptr);

EncodedUnit encode(const UnitInput& input, const EncoderParams& p, const EncoderConfig& cfg,
                   const EncoderOptions& opts = {}, nn::AttentionLog* log = nullptr);

EncodedUnit encode(const std::string& text, const std::vector<const data::ImageRecord*>& images,
                   const Vocabulary& vocab, const EncoderParams& p, const EncoderConfig& cfg,
                   GraphMode mode = GraphMode::Retrieval, const EncoderOptions& opts = {},
                   nn::AttentionLog* log = nullptr);

// Images a dataset record points at, resolved against the dataset.
std::vector<const data::ImageRecord*> resolve_images(const data::Dataset& d, const std::vector<std::string>& ids);

}  // namespace mever::enc

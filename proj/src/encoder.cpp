#include "mever/encoder.hpp"

#include <cmath>
#include <numeric>

#include "mever/error.hpp"

namespace mever::enc {

void EncoderConfig::validate() const {
  if (layers < 1 || d < 1 || n_heads < 1 || max_text_len < 1 || patch_size < 1 || channels < 1 || vocab_size < 1 ||
      max_positions < 1) {
    throw Error(ErrorKind::InvalidArgument, "encoder config counts must be >= 1");
  }
  if (d % n_heads != 0) throw Error(ErrorKind::InvalidArgument, "d must be divisible by n_heads");
  if (max_text_len > max_positions) throw Error(ErrorKind::InvalidArgument, "max_text_len exceeds max_positions");
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::uint64_t seed, const std::string& prefix) {
  cfg.validate();
  nn::Initializer init(seed);
  const int d = cfg.d;
  const double b = 1.0 / std::sqrt(static_cast<double>(d));
  EncoderParams p;
  p.token_embedding = init.uniform(prefix + ".token_embedding", cfg.vocab_size, d, b);
  p.text_positional = init.uniform(prefix + ".text_positional", cfg.max_positions, d, b);
  for (int l = 0; l < cfg.layers; ++l) {
    p.text_steps.push_back(nn::BlockParams::init(init, prefix + ".text." + std::to_string(l), d));
  }
  const int patch_dim = cfg.patch_size * cfg.patch_size * cfg.channels;
  p.patch_projection = init.uniform(prefix + ".patch_projection", patch_dim, d, 1.0 / std::sqrt(patch_dim));
  p.image_cls = init.uniform(prefix + ".image_cls", 1, d, b);
  p.image_positional = init.uniform(prefix + ".image_positional", cfg.max_positions, d, b);
  for (int l = 0; l < cfg.layers; ++l) {
    p.image_steps.push_back(nn::BlockParams::init(init, prefix + ".image." + std::to_string(l), d));
  }
  p.w_txt = init.uniform(prefix + ".w_txt", d, d, b);
  p.w_img = init.uniform(prefix + ".w_img", d, d, b);
  p.b_i2t = init.uniform(prefix + ".b_i2t", 1, 2 * d, b);
  p.b_i2i = init.uniform(prefix + ".b_i2i", 1, 2 * d, b);
  return p;
}

void EncoderParams::for_each(const nn::ParamVisitor& f) {
  f(token_embedding);
  f(text_positional);
  for (auto& s : text_steps) s.for_each(f);
  f(patch_projection);
  f(image_cls);
  f(image_positional);
  for (auto& s : image_steps) s.for_each(f);
  f(w_txt);
  f(w_img);
  f(b_i2t);
  f(b_i2i);
}

void EncoderParams::for_each(const nn::ConstParamVisitor& f) const {
  f(token_embedding);
  f(text_positional);
  for (const auto& s : text_steps) s.for_each(f);
  f(patch_projection);
  f(image_cls);
  f(image_positional);
  for (const auto& s : image_steps) s.for_each(f);
  f(w_txt);
  f(w_img);
  f(b_i2t);
  f(b_i2i);
}

std::size_t EncoderParams::count() const {
  std::size_t n = 0;
  for_each([&](const Parameter& p) { n += static_cast<std::size_t>(p.size()); });
  return n;
}

namespace {

void split_block(const nn::BlockParams& b, std::size_t& core, std::size_t& aux) {
  auto sz = [](const Parameter& p) { return static_cast<std::size_t>(p.size()); };
  b.attn.for_each([&](const Parameter& p) { core += sz(p); });
  core += sz(b.ffn.w_in) + sz(b.ffn.w_out);
  aux += sz(b.ffn.b_in) + sz(b.ffn.b_out);
  b.ln1.for_each([&](const Parameter& p) { aux += sz(p); });
  b.ln2.for_each([&](const Parameter& p) { aux += sz(p); });
}

}  // namespace

std::size_t EncoderParamBreakdown::total() const {
  return text_steps_core + token_embedding + text_positional + image_steps_core + patch_projection +
         image_positional + graph_projections + graph_biases + auxiliary;
}

EncoderParamBreakdown breakdown(const EncoderParams& p) {
  EncoderParamBreakdown b;
  for (const auto& s : p.text_steps) split_block(s, b.text_steps_core, b.auxiliary);
  for (const auto& s : p.image_steps) split_block(s, b.image_steps_core, b.auxiliary);
  b.token_embedding = static_cast<std::size_t>(p.token_embedding.size());
  b.text_positional = static_cast<std::size_t>(p.text_positional.size());
  b.patch_projection = static_cast<std::size_t>(p.patch_projection.size());
  b.image_positional = static_cast<std::size_t>(p.image_positional.size());
  b.graph_projections = static_cast<std::size_t>(p.w_txt.size() + p.w_img.size());
  b.graph_biases = static_cast<std::size_t>(p.b_i2t.size() + p.b_i2i.size());
  b.auxiliary += static_cast<std::size_t>(p.image_cls.size());
  return b;
}

MultiModalGraph build_graph(const std::string& unit_id, const std::vector<std::string>& image_ids, GraphMode mode) {
  MultiModalGraph g;
  g.text_node = unit_id;
  g.image_nodes = image_ids;
  for (const auto& i : image_ids) g.cross_edges.emplace_back(unit_id, i);
  for (std::size_t a = 0; a < image_ids.size(); ++a) {
    for (std::size_t b = a + 1; b < image_ids.size(); ++b) g.intra_image_edges.emplace_back(image_ids[a], image_ids[b]);
  }
  g.text_self_loop = mode == GraphMode::Retrieval;
  return g;
}

Var gnn_aggregate(ad::Tape& tape, const Var& query, const Var& neighbours, const Parameter& bias,
                  nn::AttentionLog* log) {
  const Eigen::Index d = query.cols();
  if (neighbours.cols() != d || bias.value.cols() != 2 * d || query.rows() != 1) {
    throw Error(ErrorKind::ShapeMismatch, "graph aggregation widths");
  }
  const Eigen::Index n = neighbours.rows();
  Var b = tape.param(bias);
  Var b_query = ad::transpose(ad::slice_cols(b, 0, d));     // d x 1
  Var b_neigh = ad::transpose(ad::slice_cols(b, d, d));     // d x 1
  Var q_term = ad::matmul(query, b_query);                  // 1 x 1
  Var n_term = ad::matmul(neighbours, b_neigh);             // n x 1
  Var logits = ad::add(n_term, ad::matmul(tape.constant(Mat::Ones(n, 1)), q_term));
  Var weights = ad::softmax_rows(ad::transpose(ad::sigmoid(logits)));  // 1 x n
  if (log != nullptr) log->record(weights.value());
  return ad::matmul(weights, neighbours);
}

namespace {

struct StepVars {
  Var H;
  std::vector<Var> Z;
};

StepVars run_step(ad::Tape& tape, const StepVars& s, int step, const EncoderParams& p, const EncoderConfig& cfg,
                  const EncoderOptions& opts, nn::AttentionLog* log) {
  const auto& text_block = p.text_steps[static_cast<std::size_t>(step)];
  const auto& image_block = p.image_steps[static_cast<std::size_t>(step)];
  StepVars out;
  if (step == 0) {
    // Feature initialization: plain transformer / ViT step, no virtual tokens.
    out.H = nn::encoder_block(tape, s.H, s.H, text_block, cfg.n_heads, log);
    for (const Var& z : s.Z) out.Z.push_back(nn::encoder_block(tape, z, z, image_block, cfg.n_heads, log));
    return out;
  }

  Var h_hat = ad::matmul(ad::slice_rows(s.H, 0, 1), tape.param(p.w_txt));
  std::vector<Var> z_tilde;
  for (const Var& z : s.Z) z_tilde.push_back(ad::matmul(ad::slice_rows(z, 0, 1), tape.param(p.w_img)));

  std::vector<Var> text_memory;
  Var z_stack;
  if (!z_tilde.empty()) z_stack = ad::vstack(z_tilde);
  if (!z_tilde.empty() && opts.image_to_text) text_memory.push_back(gnn_aggregate(tape, h_hat, z_stack, p.b_i2t, log));
  text_memory.push_back(h_hat);
  text_memory.push_back(s.H);
  out.H = nn::encoder_block(tape, s.H, ad::vstack(text_memory), text_block, cfg.n_heads, log);

  for (std::size_t i = 0; i < s.Z.size(); ++i) {
    std::vector<Var> image_memory;
    image_memory.push_back(gnn_aggregate(tape, z_tilde[i], z_stack, p.b_i2i, log));
    if (opts.text_to_image) image_memory.push_back(h_hat);
    image_memory.push_back(s.Z[i]);
    out.Z.push_back(nn::encoder_block(tape, s.Z[i], ad::vstack(image_memory), image_block, cfg.n_heads, log));
  }
  return out;
}

void check_state(const EncoderState& state, const EncoderParams& p) {
  const Eigen::Index d = p.w_txt.value.rows();
  if (state.H.cols() != d || state.H.rows() < 1) throw Error(ErrorKind::ShapeMismatch, "text state width != d");
  for (const auto& z : state.Z) {
    if (z.cols() != d || z.rows() < 1) throw Error(ErrorKind::ShapeMismatch, "image state width != d");
  }
}

}  // namespace

Aggregate image_to_text_aggregate(const EncoderState& state, const MultiModalGraph& graph, const EncoderParams& p) {
  check_state(state, p);
  (void)graph;
  ad::Tape tape(false);
  Var h_hat = ad::matmul(tape.constant(state.H.topRows(1)), tape.param(p.w_txt));
  Aggregate a;
  a.h_hat = h_hat.value().row(0);
  if (state.Z.empty()) {
    a.z_hat = RowVec::Zero(state.H.cols());
    return a;
  }
  std::vector<Var> z_tilde;
  for (const auto& z : state.Z) z_tilde.push_back(ad::matmul(tape.constant(z.topRows(1)), tape.param(p.w_img)));
  nn::AttentionLog log;
  Var z_hat = gnn_aggregate(tape, h_hat, ad::vstack(z_tilde), p.b_i2t, &log);
  a.z_hat = z_hat.value().row(0);
  a.weights = log.weights.back().row(0);
  return a;
}

Aggregate text_to_image_aggregate(const EncoderState& state, const MultiModalGraph& graph, const EncoderParams& p,
                                  int image_index) {
  check_state(state, p);
  (void)graph;
  if (image_index < 0 || image_index >= static_cast<int>(state.Z.size())) {
    throw Error(ErrorKind::InvalidArgument, "image index out of range");
  }
  ad::Tape tape(false);
  Aggregate a;
  a.h_hat = (state.H.topRows(1) * p.w_txt.value).row(0);
  std::vector<Var> z_tilde;
  for (const auto& z : state.Z) z_tilde.push_back(ad::matmul(tape.constant(z.topRows(1)), tape.param(p.w_img)));
  nn::AttentionLog log;
  Var z_hat = gnn_aggregate(tape, z_tilde[static_cast<std::size_t>(image_index)], ad::vstack(z_tilde), p.b_i2i, &log);
  a.z_hat = z_hat.value().row(0);
  a.weights = log.weights.back().row(0);
  return a;
}

EncoderState encoder_step(const EncoderState& state, const MultiModalGraph& graph, const EncoderParams& p,
                          const EncoderConfig& cfg, const EncoderOptions& opts, nn::AttentionLog* log) {
  check_state(state, p);
  (void)graph;
  if (state.step < 0 || state.step >= cfg.layers) throw Error(ErrorKind::InvalidArgument, "step index >= L");
  ad::Tape tape(false);
  StepVars s;
  s.H = tape.constant(state.H);
  for (const auto& z : state.Z) s.Z.push_back(tape.constant(z));
  StepVars next = run_step(tape, s, state.step, p, cfg, opts, log);
  EncoderState out;
  out.H = next.H.value();
  for (const Var& z : next.Z) out.Z.push_back(z.value());
  out.step = state.step + 1;
  return out;
}

Mat patchify(const data::ImageRecord& image, int patch_size) {
  const int rows = image.height / patch_size;
  const int cols = image.width / patch_size;
  if (rows < 1 || cols < 1) throw Error(ErrorKind::ShapeMismatch, "image " + image.id + " smaller than a patch");
  const int c = image.channels;
  Mat out(rows * cols, patch_size * patch_size * c);
  for (int pr = 0; pr < rows; ++pr) {
    for (int pc = 0; pc < cols; ++pc) {
      const int patch = pr * cols + pc;
      int k = 0;
      for (int y = 0; y < patch_size; ++y) {
        for (int x = 0; x < patch_size; ++x) {
          const std::size_t base =
              (static_cast<std::size_t>(pr * patch_size + y) * image.width + (pc * patch_size + x)) * c;
          for (int ch = 0; ch < c; ++ch) out(patch, k++) = image.pixels[base + ch] / 255.0;
        }
      }
    }
  }
  return out;
}

UnitInput prepare_unit(const std::string& text, const std::vector<const data::ImageRecord*>& images,
                       const Vocabulary& vocab, const EncoderConfig& cfg) {
  UnitInput u;
  std::vector<int> ids = vocab.encode(text);
  if (ids.empty()) throw Error(ErrorKind::EmptyText, "text has no tokens");
  u.token_ids.push_back(Vocabulary::kCls);
  for (int id : ids) {
    if (static_cast<int>(u.token_ids.size()) >= cfg.max_text_len) break;
    u.token_ids.push_back(id >= cfg.vocab_size ? Vocabulary::kUnk : id);
  }
  for (const auto* img : images) {
    if (img->channels != cfg.channels) {
      throw Error(ErrorKind::ShapeMismatch, "image " + img->id + " channel count differs from encoder config");
    }
    u.patches.push_back(patchify(*img, cfg.patch_size));
    u.image_ids.push_back(img->id);
  }
  return u;
}

EncodedVars encode_vars(ad::Tape& tape, const UnitInput& input, const EncoderParams& p, const EncoderConfig& cfg,
                        const EncoderOptions& opts, nn::AttentionLog* log) {
  if (input.token_ids.empty()) throw Error(ErrorKind::EmptyText, "unit has no tokens");
  const auto n_tok = static_cast<Eigen::Index>(input.token_ids.size());
  if (n_tok > cfg.max_positions) throw Error(ErrorKind::ShapeMismatch, "text longer than positional table");
  std::vector<int> positions(static_cast<std::size_t>(n_tok));
  std::iota(positions.begin(), positions.end(), 0);

  StepVars s;
  s.H = ad::add(ad::gather_rows(tape.param(p.token_embedding), input.token_ids),
                ad::gather_rows(tape.param(p.text_positional), positions));
  if (opts.use_images) {
    for (const Mat& patches : input.patches) {
      if (patches.cols() != p.patch_projection.value.rows()) {
        throw Error(ErrorKind::ShapeMismatch, "patch width differs from patch projection");
      }
      if (patches.rows() + 1 > cfg.max_positions) throw Error(ErrorKind::ShapeMismatch, "too many patches");
      Var proj = ad::matmul(tape.constant(patches), tape.param(p.patch_projection));
      std::vector<Var> rows{tape.param(p.image_cls), proj};
      std::vector<int> pos(static_cast<std::size_t>(patches.rows() + 1));
      std::iota(pos.begin(), pos.end(), 0);
      s.Z.push_back(ad::add(ad::vstack(rows), ad::gather_rows(tape.param(p.image_positional), pos)));
    }
  }
  for (int l = 0; l < cfg.layers; ++l) s = run_step(tape, s, l, p, cfg, opts, log);
  return EncodedVars{s.H, s.Z};
}

EncodedUnit encode(const UnitInput& input, const EncoderParams& p, const EncoderConfig& cfg,
                   const EncoderOptions& opts, nn::AttentionLog* log) {
  ad::Tape tape(false);
  EncodedVars v = encode_vars(tape, input, p, cfg, opts, log);
  EncodedUnit u;
  u.H = v.H.value();
  u.text_embedding = u.H.row(0);
  for (const Var& z : v.Z) {
    u.Z.push_back(z.value());
    u.image_embeddings.push_back(z.value().row(0));
  }
  return u;
}

EncodedUnit encode(const std::string& text, const std::vector<const data::ImageRecord*>& images,
                   const Vocabulary& vocab, const EncoderParams& p, const EncoderConfig& cfg, GraphMode mode,
                   const EncoderOptions& opts, nn::AttentionLog* log) {
  // The graph mode only flags the text self-loop; inter-evidence exchange in
  // verification happens in the fusion layers, so encoding is identical.
  (void)mode;
  return encode(prepare_unit(text, images, vocab, cfg), p, cfg, opts, log);
}

std::vector<const data::ImageRecord*> resolve_images(const data::Dataset& d, const std::vector<std::string>& ids) {
  std::vector<const data::ImageRecord*> out;
  for (const auto& id : ids) {
    const data::ImageRecord* img = d.find_image(id);
    if (img == nullptr) throw Error(ErrorKind::DanglingReference, "image '" + id + "'");
    out.push_back(img);
  }
  return out;
}

}  // namespace mever::enc

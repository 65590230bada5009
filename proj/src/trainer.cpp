#include "mever/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "mever/error.hpp"
#include "mever/evalkit.hpp"

namespace mever::train {

using ad::Mat;

std::string to_string(EvidenceSetting s) { return s == EvidenceSetting::Gold ? "gold" : "retrieved"; }

EvidenceSetting parse_setting(const std::string& s) {
  if (s == "gold") return EvidenceSetting::Gold;
  if (s == "retrieved") return EvidenceSetting::Retrieved;
  throw Error(ErrorKind::InvalidArgument, "evidence setting must be gold or retrieved, got '" + s + "'");
}

const std::vector<std::string>& Ablations::names() {
  static const std::vector<std::string> n = {"no_images",          "no_i2t", "no_t2i",        "no_token_fusion",
                                             "no_evidence_fusion", "no_fid", "no_regularizer"};
  return n;
}

void Ablations::set(const std::string& name) {
  if (name == "no_images") no_images = true;
  else if (name == "no_i2t") no_i2t = true;
  else if (name == "no_t2i") no_t2i = true;
  else if (name == "no_token_fusion") no_token_fusion = true;
  else if (name == "no_evidence_fusion") no_evidence_fusion = true;
  else if (name == "no_fid") no_fid = true;
  else if (name == "no_regularizer") no_regularizer = true;
  else throw Error(ErrorKind::InvalidArgument, "unknown ablation '" + name + "'");
}

Ablations Ablations::parse(const std::string& csv) {
  Ablations a;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty() || item == "none") continue;
    a.set(item);
  }
  return a;
}

std::string Ablations::to_string() const {
  const bool flags[] = {no_images, no_i2t, no_t2i, no_token_fusion, no_evidence_fusion, no_fid, no_regularizer};
  std::string out;
  for (std::size_t i = 0; i < names().size(); ++i) {
    if (!flags[i]) continue;
    if (!out.empty()) out += ",";
    out += names()[i];
  }
  return out.empty() ? "none" : out;
}

void TrainConfig::validate() const {
  if (!(lambda_reg >= 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda_reg must be >= 0");
  if (batch_size < 2) throw Error(ErrorKind::BatchTooSmall, "batch_size must be >= 2");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning_rate must be > 0");
  if (k_retrieved < 1) throw Error(ErrorKind::InvalidArgument, "k_retrieved must be >= 1");
  if (max_epochs_retriever < 0 || max_epochs_joint < 0) throw Error(ErrorKind::InvalidArgument, "negative epochs");
  if (patience < 1) throw Error(ErrorKind::InvalidArgument, "patience must be >= 1");
  if (explanation_mode != "auto" && explanation_mode != "on" && explanation_mode != "off") {
    throw Error(ErrorKind::InvalidArgument, "explanation_mode must be auto, on or off");
  }
  encoder.validate();
  seq2seq.validate();
  if (encoder.d != seq2seq.d) throw Error(ErrorKind::InvalidArgument, "encoder and seq2seq widths differ");
}

namespace {

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, key + ": expected an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw Error(ErrorKind::InvalidArgument, key + ": expected true or false, got '" + v + "'");
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double from_hex(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "lambda_reg") lambda_reg = to_double(key, value);
  else if (key == "k_retrieved") k_retrieved = to_int(key, value);
  else if (key == "batch_size") batch_size = to_int(key, value);
  else if (key == "learning_rate") learning_rate = to_double(key, value);
  else if (key == "max_epochs_retriever") max_epochs_retriever = to_int(key, value);
  else if (key == "max_epochs_joint") max_epochs_joint = to_int(key, value);
  else if (key == "patience") patience = to_int(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(to_int(key, value));
  else if (key == "evidence_setting") evidence_setting = parse_setting(value);
  else if (key == "ablations") ablations = Ablations::parse(value);
  else if (key == "detach_consistency") detach_consistency = to_bool(key, value);
  else if (key == "explanation_mode") explanation_mode = value;
  else if (key == "layers") encoder.layers = seq2seq.layers = to_int(key, value);
  else if (key == "d") encoder.d = seq2seq.d = to_int(key, value);
  else if (key == "n_heads") encoder.n_heads = seq2seq.n_heads = to_int(key, value);
  else if (key == "vocab_size") encoder.vocab_size = seq2seq.vocab_size = to_int(key, value);
  else if (key == "max_text_len") encoder.max_text_len = to_int(key, value);
  else if (key == "patch_size") encoder.patch_size = to_int(key, value);
  else if (key == "channels") encoder.channels = to_int(key, value);
  else if (key == "max_positions") encoder.max_positions = to_int(key, value);
  else if (key == "s2s_max_positions") seq2seq.max_positions = to_int(key, value);
  else if (key == "max_len") seq2seq.max_len = to_int(key, value);
  else throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o << "lambda_reg=" << exact(lambda_reg) << "\n"
    << "k_retrieved=" << k_retrieved << "\n"
    << "batch_size=" << batch_size << "\n"
    << "learning_rate=" << exact(learning_rate) << "\n"
    << "max_epochs_retriever=" << max_epochs_retriever << "\n"
    << "max_epochs_joint=" << max_epochs_joint << "\n"
    << "patience=" << patience << "\n"
    << "seed=" << seed << "\n"
    << "evidence_setting=" << train::to_string(evidence_setting) << "\n"
    << "ablations=" << ablations.to_string() << "\n"
    << "detach_consistency=" << (detach_consistency ? "true" : "false") << "\n"
    << "explanation_mode=" << explanation_mode << "\n"
    << "layers=" << encoder.layers << "\n"
    << "d=" << encoder.d << "\n"
    << "n_heads=" << encoder.n_heads << "\n"
    << "vocab_size=" << encoder.vocab_size << "\n"
    << "max_text_len=" << encoder.max_text_len << "\n"
    << "patch_size=" << encoder.patch_size << "\n"
    << "channels=" << encoder.channels << "\n"
    << "max_positions=" << encoder.max_positions << "\n"
    << "s2s_max_positions=" << seq2seq.max_positions << "\n"
    << "max_len=" << seq2seq.max_len << "\n";
  return o.str();
}

TrainConfig TrainConfig::from_text(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidArgument, "config line " + std::to_string(n) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig TrainConfig::from_text(const std::string& text) { return from_text(text, TrainConfig{}); }

TrainConfig TrainConfig::from_file(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::MissingFile, path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str(), std::move(base));
}

enc::EncoderOptions TrainConfig::encoder_options() const {
  enc::EncoderOptions o;
  o.use_images = !ablations.no_images;
  o.image_to_text = !ablations.no_i2t;
  o.text_to_image = !ablations.no_t2i;
  return o;
}

ver::FusionOptions TrainConfig::fusion_options() const {
  ver::FusionOptions o;
  o.n_heads = encoder.n_heads;
  o.token_fusion = !ablations.no_token_fusion;
  o.evidence_fusion = !ablations.no_evidence_fusion;
  return o;
}

Adam::Adam(std::vector<ad::Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

ckpt::TensorGroup Adam::export_moments(bool second) const {
  ckpt::TensorGroup g;
  for (std::size_t i = 0; i < params_.size(); ++i) g.push_back({params_[i]->name, second ? v_[i] : m_[i]});
  return g;
}

void Adam::import_state(const ckpt::TensorGroup& m, const ckpt::TensorGroup& v, long t) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match parameter list");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].name != params_[i]->name || v[i].name != params_[i]->name ||
        m[i].value.rows() != m_[i].rows() || m[i].value.cols() != m_[i].cols() ||
        v[i].value.rows() != v_[i].rows() || v[i].value.cols() != v_[i].cols()) {
      throw Error(ErrorKind::ShapeMismatch, "optimizer state for " + params_[i]->name);
    }
    m_[i] = m[i].value;
    v_[i] = v[i].value;
  }
  t_ = t;
}

Vocabulary build_vocabulary(const data::Dataset& d) {
  std::vector<std::string> texts;
  for (const auto& c : d.claims) {
    texts.push_back(c.text);
    if (c.explanation) texts.push_back(*c.explanation);
  }
  for (const auto& e : d.evidence) texts.push_back(e.text);
  return Vocabulary::build(texts);
}

TrainConfig fit_to_vocabulary(TrainConfig cfg, const Vocabulary& vocab) {
  cfg.encoder.vocab_size = cfg.seq2seq.vocab_size = vocab.size();
  return cfg;
}

namespace {

std::vector<const data::ClaimRecord*> claims_of(const data::Dataset& d, const std::string& split) {
  if (d.splits.empty()) {
    std::vector<const data::ClaimRecord*> all;
    for (const auto& c : d.claims) all.push_back(&c);
    return all;
  }
  return d.split_claims(split);
}

// Validation claims when the split has any, otherwise the training claims.
std::pair<std::vector<const data::ClaimRecord*>, std::string> eval_claims(
    const std::vector<const data::ClaimRecord*>& val, const std::vector<const data::ClaimRecord*>& train) {
  if (!val.empty()) return {val, "val"};
  return {train, "train"};
}

template <typename Params>
void collect(Params& p, std::vector<ad::Parameter*>& out) {
  p.for_each([&](ad::Parameter& q) { out.push_back(&q); });
}

ckpt::TensorGroup export_list(const std::vector<ad::Parameter*>& params) {
  ckpt::TensorGroup g;
  for (const auto* p : params) g.push_back({p->name, p->value});
  return g;
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream o;
  o << rng;
  return o.str();
}

// Shared epoch loop: shuffling, early stopping, best-parameter tracking,
// checkpointing and resume.
struct Loop {
  std::vector<ad::Parameter*> params;
  Adam adam;
  std::mt19937_64 rng;
  TrainLog log;
  int epoch = 0;  // completed epochs
  int stale = 0;
  ckpt::TensorGroup best;

  Loop(std::vector<ad::Parameter*> p, double lr, std::uint64_t seed)
      : params(p), adam(std::move(p), lr), rng(seed) {}

  void add_state(ckpt::Checkpoint& c) const {
    c.groups["state.best"] = best;
    c.groups["state.current"] = export_list(params);
    c.groups["adam.m"] = adam.export_moments(false);
    c.groups["adam.v"] = adam.export_moments(true);
    c.meta["adam.t"] = std::to_string(adam.steps());
    c.meta["stale"] = std::to_string(stale);
    c.meta["best_metric"] = hex(log.best_metric);
    c.meta["best_epoch"] = std::to_string(log.best_epoch);
    c.meta["metric_split"] = log.metric_split;
    c.epoch = epoch;
    c.rng_state = rng_text(rng);
    c.history["loss"] = log.epoch_loss;
    c.history["metric"] = log.epoch_metric;
    for (const char* k : {"batch.total", "batch.ver", "batch.exp", "batch.reg"}) c.history[k].clear();
    for (const auto& b : log.batches) {
      c.history["batch.total"].push_back(b.total);
      c.history["batch.ver"].push_back(b.ver);
      c.history["batch.exp"].push_back(b.exp);
      c.history["batch.reg"].push_back(b.reg);
    }
  }

  void restore(const ckpt::Checkpoint& c) {
    ckpt::import_into(params, c.group("state.current"));
    best = c.group("state.best");
    adam.import_state(c.group("adam.m"), c.group("adam.v"), std::stol(c.meta_value("adam.t")));
    std::istringstream in(c.rng_state);
    in >> rng;
    if (!in) throw Error(ErrorKind::CorruptFile, "checkpoint rng state unreadable");
    epoch = c.epoch;
    stale = std::stoi(c.meta_value("stale"));
    log.best_metric = from_hex(c.meta_value("best_metric"));
    log.best_epoch = std::stoi(c.meta_value("best_epoch"));
    log.epoch_loss = c.history.at("loss");
    log.epoch_metric = c.history.at("metric");
    const auto& t = c.history.at("batch.total");
    for (std::size_t i = 0; i < t.size(); ++i) {
      log.batches.push_back(BatchLoss{t[i], c.history.at("batch.ver")[i], c.history.at("batch.exp")[i],
                                      c.history.at("batch.reg")[i]});
    }
  }

  template <typename EpochFn, typename MetricFn, typename SnapshotFn>
  void run(int max_epochs, int patience, const RunOptions& opts, EpochFn epoch_fn, MetricFn metric_fn,
           SnapshotFn snapshot) {
    auto save = [&] {
      if (opts.checkpoint_path.empty()) return;
      ckpt::Checkpoint c = snapshot();
      add_state(c);
      ckpt::save_checkpoint(c, opts.checkpoint_path);
    };
    while (epoch < max_epochs && stale < patience) {
      if (opts.stop_after_epoch >= 0 && epoch >= opts.stop_after_epoch) return;
      const double loss = epoch_fn();
      if (!std::isfinite(loss)) {
        if (!best.empty()) ckpt::import_into(params, best);
        save();
        throw Error(ErrorKind::Diverged, "non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      const double metric = metric_fn();
      log.epoch_loss.push_back(loss);
      log.epoch_metric.push_back(metric);
      if (metric > log.best_metric) {
        log.best_metric = metric;
        log.best_epoch = epoch;
        best = export_list(params);
        stale = 0;
      } else {
        ++stale;
      }
      ++epoch;
      save();
    }
    if (!best.empty()) ckpt::import_into(params, best);
  }
};

std::vector<std::vector<std::size_t>> distinct_gold_batches(const std::vector<std::size_t>& order,
                                                            const std::vector<std::string>& gold, int batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> remaining = order;
  while (!remaining.empty()) {
    std::vector<std::size_t> batch, rest;
    std::set<std::string> used;
    for (std::size_t i : remaining) {
      if (static_cast<int>(batch.size()) < batch_size && used.insert(gold[i]).second) {
        batch.push_back(i);
      } else {
        rest.push_back(i);
      }
    }
    if (batch.size() >= 2) batches.push_back(std::move(batch));
    if (rest.size() == remaining.size() || batch.size() < 2) break;
    remaining = std::move(rest);
  }
  return batches;
}

enc::UnitInput unit_for(const data::Dataset& d, const std::string& text, const std::vector<std::string>& images,
                        const Vocabulary& vocab, const enc::EncoderConfig& cfg) {
  return enc::prepare_unit(text, enc::resolve_images(d, images), vocab, cfg);
}

const data::EvidenceRecord& evidence_record(const data::Dataset& d, const std::string& id) {
  const auto* e = d.find_evidence(id);
  if (e == nullptr) throw Error(ErrorKind::DanglingReference, "evidence " + id + " not in corpus");
  return *e;
}

}  // namespace

RetrieverResult train_retriever(const data::Dataset& d, const TrainConfig& cfg_in, const RunOptions& run) {
  RetrieverResult out;
  RetrieverModel& m = out.model;
  m.vocab = build_vocabulary(d);
  m.cfg = fit_to_vocabulary(cfg_in, m.vocab);
  m.cfg.validate();
  m.params = enc::EncoderParams::init(m.cfg.encoder, m.cfg.seed, "enc");
  const enc::EncoderOptions opts = m.cfg.encoder_options();

  std::vector<const data::ClaimRecord*> train;
  for (const auto* c : claims_of(d, "train")) {
    if (!c->gold_evidence_ids.empty()) train.push_back(c);
  }
  if (train.size() < 2) throw Error(ErrorKind::BatchTooSmall, "retriever needs >= 2 training claims with gold evidence");
  std::vector<const data::ClaimRecord*> val;
  for (const auto* c : claims_of(d, "val")) {
    if (!c->gold_evidence_ids.empty() && !d.splits.empty()) val.push_back(c);
  }
  auto [eval, split] = eval_claims(val, train);

  std::vector<enc::UnitInput> claim_units, evidence_units;
  std::vector<std::string> gold;
  for (const auto* c : train) {
    claim_units.push_back(unit_for(d, c->text, c->image_ids, m.vocab, m.cfg.encoder));
    const auto& e = evidence_record(d, c->gold_evidence_ids.front());
    evidence_units.push_back(unit_for(d, e.text, e.image_ids, m.vocab, m.cfg.encoder));
    gold.push_back(e.id);
  }

  std::vector<ad::Parameter*> params;
  collect(m.params, params);
  Loop loop(params, m.cfg.learning_rate, m.cfg.seed * 2654435761ULL + 1);
  loop.log.metric_split = split;
  if (run.resume) loop.restore(*run.resume);

  auto epoch_fn = [&] {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), loop.rng);
    double total = 0.0;
    for (const auto& batch : distinct_gold_batches(order, gold, m.cfg.batch_size)) {
      loop.adam.zero_grad();
      ad::Tape tape;
      std::vector<ad::Var> c_rows, e_rows;
      for (std::size_t i : batch) {
        c_rows.push_back(ad::slice_rows(enc::encode_vars(tape, claim_units[i], m.params, m.cfg.encoder, opts).H, 0, 1));
        e_rows.push_back(ad::slice_rows(enc::encode_vars(tape, evidence_units[i], m.params, m.cfg.encoder, opts).H, 0, 1));
      }
      ad::Var loss = retrieval::contrastive_loss(ad::vstack(c_rows), ad::vstack(e_rows));
      if (!std::isfinite(loss.scalar())) return loss.scalar();
      tape.backward(loss);
      loop.adam.step();
      loop.log.batches.push_back(BatchLoss{loss.scalar(), 0.0, 0.0, 0.0});
      total += loss.scalar();
    }
    return total;
  };
  auto metric_fn = [&] { return retrieval_map(d, m, eval); };
  loop.run(m.cfg.max_epochs_retriever, m.cfg.patience, run, epoch_fn, metric_fn, [&] { return to_checkpoint(m); });
  out.log = loop.log;
  return out;
}

double retrieval_map(const data::Dataset& d, const RetrieverModel& model,
                     const std::vector<const data::ClaimRecord*>& claims) {
  const enc::EncoderOptions opts = model.cfg.encoder_options();
  const retrieval::RetrievalIndex index = retrieval::build_index(d, model.vocab, model.params, model.cfg.encoder, opts);
  eval::Rankings rankings;
  eval::GoldSets gold;
  for (const auto* c : claims) {
    if (c->gold_evidence_ids.empty()) continue;
    const auto list = retrieval::retrieve(*c, d, model.vocab, index, model.params, model.cfg.encoder,
                                          static_cast<int>(index.size()), opts);
    rankings[c->id] = list.ids();
    gold[c->id] = std::set<std::string>(c->gold_evidence_ids.begin(), c->gold_evidence_ids.end());
  }
  if (rankings.empty()) return 0.0;
  return eval::mean_average_precision(rankings, gold);
}

RetrievedMap freeze_and_retrieve(const data::Dataset& d, const RetrieverModel& model, int k) {
  const enc::EncoderOptions opts = model.cfg.encoder_options();
  const retrieval::RetrievalIndex index = retrieval::build_index(d, model.vocab, model.params, model.cfg.encoder, opts);
  RetrievedMap out;
  for (const auto& c : d.claims) {
    out[c.id] = retrieval::retrieve(c, d, model.vocab, index, model.params, model.cfg.encoder, k, opts);
  }
  return out;
}

RetrieverModel JointModel::retrieval_model() const { return RetrieverModel{cfg, vocab, retriever}; }

std::vector<std::string> evidence_for(const data::ClaimRecord& c, EvidenceSetting setting, const RetrievedMap& retrieved,
                                      int k) {
  if (setting == EvidenceSetting::Gold && !c.gold_evidence_ids.empty()) return c.gold_evidence_ids;
  const auto it = retrieved.find(c.id);
  if (it == retrieved.end()) {
    throw Error(ErrorKind::NoEvidence, "claim " + c.id + " has no " +
                                           (setting == EvidenceSetting::Gold ? "gold or retrieved" : "retrieved") +
                                           " evidence");
  }
  std::vector<std::string> ids = it->second.ids();
  if (static_cast<int>(ids.size()) > k) ids.resize(static_cast<std::size_t>(k));
  if (ids.empty()) throw Error(ErrorKind::NoEvidence, "claim " + c.id + " has an empty retrieval list");
  return ids;
}

namespace {

struct ClaimForward {
  ver::VerifyVars verdict;
  ad::Var fused;  // invalid when the explanation path is off
};

ClaimForward forward_claim(ad::Tape& tape, const data::Dataset& d, const JointModel& m, const data::ClaimRecord& claim,
                           const RetrievedMap& retrieved, bool with_fid) {
  const enc::EncoderConfig& ec = m.cfg.encoder;
  const enc::EncoderOptions opts = m.cfg.encoder_options();
  const auto ids = evidence_for(claim, m.cfg.evidence_setting, retrieved, m.cfg.k_retrieved);

  enc::EncodedVars cv = enc::encode_vars(tape, unit_for(d, claim.text, claim.image_ids, m.vocab, ec), m.encoder, ec, opts);
  std::vector<enc::EncodedVars> evs;
  std::vector<const data::EvidenceRecord*> records;
  for (const auto& id : ids) {
    const auto& e = evidence_record(d, id);
    records.push_back(&e);
    evs.push_back(enc::encode_vars(tape, unit_for(d, e.text, e.image_ids, m.vocab, ec), m.encoder, ec, opts));
  }
  ClaimForward out;
  out.verdict = ver::verify(tape, cv, evs, m.fusion, m.encoder, m.cfg.fusion_options());
  if (!with_fid) return out;

  auto image_cls = [](const enc::EncodedVars& v) {
    std::vector<ad::Var> rows;
    for (const auto& z : v.Z) rows.push_back(ad::slice_rows(z, 0, 1));
    return rows;
  };
  const std::vector<int> claim_tokens = m.vocab.encode(claim.text);
  const std::vector<ad::Var> claim_images = image_cls(cv);
  const std::size_t n_fid = m.cfg.ablations.no_fid ? 1 : evs.size();
  std::vector<ad::Var> encoded;
  for (std::size_t k = 0; k < n_fid; ++k) {
    ad::Var input = expl::build_fid_input(tape, claim_tokens, m.vocab.encode(records[k]->text), claim_images,
                                          image_cls(evs[k]), m.seq2seq, m.cfg.seq2seq, m.encoder);
    encoded.push_back(expl::encode_fid(tape, input, m.seq2seq, m.cfg.seq2seq));
  }
  out.fused = expl::fuse_in_decoder(tape, encoded);
  return out;
}

int label_of(const JointModel& m, const std::string& label) {
  const auto it = std::find(m.labels.begin(), m.labels.end(), label);
  if (it == m.labels.end()) throw Error(ErrorKind::UnknownLabel, label);
  return static_cast<int>(it - m.labels.begin());
}

}  // namespace

BatchLoss joint_batch_loss(const data::Dataset& d, const JointModel& m, const RetrievedMap& retrieved,
                           const std::vector<const data::ClaimRecord*>& batch, bool backward) {
  ad::Tape tape(backward);
  std::vector<ad::Var> ver_terms, exp_terms, reg_terms;
  const bool use_reg = m.explanations && !m.cfg.ablations.no_regularizer;
  for (const auto* c : batch) {
    const int gold = label_of(m, c->label);
    ClaimForward f = forward_claim(tape, d, m, *c, retrieved, m.explanations);
    ver_terms.push_back(ver::verification_loss(f.verdict.logits, gold));
    if (!m.explanations) continue;
    if (!c->explanation) throw Error(ErrorKind::MissingExplanations, "claim " + c->id + " has no explanation");
    expl::TeacherForced tf = expl::teacher_force(tape, f.fused, m.vocab.encode(*c->explanation), m.seq2seq, m.cfg.seq2seq);
    exp_terms.push_back(tf.loss);
    if (!use_reg) continue;
    ad::Var y_hat = ad::softmax_rows(f.verdict.logits);
    if (m.cfg.detach_consistency) y_hat = ad::detach(y_hat);
    ad::Var y_e = ad::softmax_rows(expl::label_logits(tape, tf.pooled, m.seq2seq));
    reg_terms.push_back(expl::consistency_loss(y_hat, y_e, gold));
  }
  auto total_of = [&](const std::vector<ad::Var>& v) {
    ad::Var s = v.front();
    for (std::size_t i = 1; i < v.size(); ++i) s = ad::add(s, v[i]);
    return s;
  };
  BatchLoss out;
  ad::Var total = total_of(ver_terms);
  out.ver = total.scalar();
  if (!exp_terms.empty()) {
    ad::Var e = total_of(exp_terms);
    out.exp = e.scalar();
    total = ad::add(total, e);
  }
  if (!reg_terms.empty()) {
    ad::Var r = total_of(reg_terms);
    out.reg = r.scalar();
    total = ad::add(total, ad::scale(r, m.cfg.lambda_reg));
  }
  out.total = total.scalar();
  if (backward && std::isfinite(out.total)) tape.backward(total);
  return out;
}

JointResult train_joint(const data::Dataset& d, const RetrieverModel& retriever, const RetrievedMap& retrieved,
                        const TrainConfig& cfg_in, const RunOptions& run) {
  JointResult out;
  JointModel& m = out.model;
  m.vocab = retriever.vocab;
  m.cfg = fit_to_vocabulary(cfg_in, m.vocab);
  m.cfg.encoder = retriever.cfg.encoder;
  m.cfg.validate();
  m.labels = d.label_set;
  if (m.cfg.explanation_mode == "on" && !d.has_explanations) {
    throw Error(ErrorKind::MissingExplanations, "explanation loss requested but the corpus has no explanations");
  }
  m.explanations = m.cfg.explanation_mode == "off" ? false : d.has_explanations;
  m.retriever = retriever.params;
  m.encoder = retriever.params;
  m.fusion = ver::FusionParams::init(m.cfg.encoder.d, static_cast<int>(m.labels.size()), m.cfg.seed + 101);
  m.seq2seq = expl::Seq2SeqParams::init(m.cfg.seq2seq, static_cast<int>(m.labels.size()), m.cfg.seed + 202);

  const auto train = claims_of(d, "train");
  if (train.empty()) throw Error(ErrorKind::TooFewClaims, "no training claims");
  const auto val = d.splits.empty() ? std::vector<const data::ClaimRecord*>{} : claims_of(d, "val");
  auto [eval, split] = eval_claims(val, train);

  std::vector<ad::Parameter*> params;
  collect(m.encoder, params);
  collect(m.fusion, params);
  collect(m.seq2seq, params);
  Loop loop(params, m.cfg.learning_rate, m.cfg.seed * 2654435761ULL + 2);
  loop.log.metric_split = split;
  if (run.resume) loop.restore(*run.resume);

  auto epoch_fn = [&] {
    std::vector<const data::ClaimRecord*> order = train;
    std::shuffle(order.begin(), order.end(), loop.rng);
    double total = 0.0;
    const auto b = static_cast<std::size_t>(m.cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += b) {
      std::vector<const data::ClaimRecord*> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                  order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + b)));
      loop.adam.zero_grad();
      const BatchLoss l = joint_batch_loss(d, m, retrieved, batch, true);
      if (!std::isfinite(l.total)) return l.total;
      loop.adam.step();
      loop.log.batches.push_back(l);
      total += l.total;
    }
    return total;
  };
  auto metric_fn = [&] { return macro_f1_on(d, m, retrieved, eval); };
  loop.run(m.cfg.max_epochs_joint, m.cfg.patience, run, epoch_fn, metric_fn, [&] { return to_checkpoint(m); });
  out.log = loop.log;
  return out;
}

Prediction predict(const data::Dataset& d, const JointModel& m, const data::ClaimRecord& claim,
                   const RetrievedMap& retrieved, bool with_explanation) {
  ad::Tape tape(false);
  const bool fid = m.explanations && with_explanation;
  ClaimForward f = forward_claim(tape, d, m, claim, retrieved, fid);
  Prediction p;
  p.claim_id = claim.id;
  p.verdict = ver::make_distribution(ad::softmax_rows(f.verdict.logits).value(), m.labels);
  if (fid) p.explanation = expl::generate(f.fused.value(), m.seq2seq, m.cfg.seq2seq, m.vocab, m.cfg.seq2seq.max_len).text;
  return p;
}

double macro_f1_on(const data::Dataset& d, const JointModel& m, const RetrievedMap& retrieved,
                   const std::vector<const data::ClaimRecord*>& claims) {
  if (claims.empty()) return 0.0;
  std::vector<std::string> preds, golds;
  for (const auto* c : claims) {
    preds.push_back(predict(d, m, *c, retrieved, false).verdict.predicted_label);
    golds.push_back(c->label);
  }
  return eval::f1_scores(preds, golds, m.labels).macro;
}

namespace {

std::string join_lines(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += x + "\n";
  return s;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

ckpt::Checkpoint to_checkpoint(const RetrieverModel& m) {
  ckpt::Checkpoint c;
  c.meta["kind"] = "retriever";
  c.meta["config"] = m.cfg.to_text();
  c.meta["vocab"] = m.vocab.serialize();
  c.groups["retriever"] = ckpt::export_params(m.params);
  return c;
}

RetrieverModel retriever_from_checkpoint(const ckpt::Checkpoint& c) {
  RetrieverModel m;
  m.cfg = TrainConfig::from_text(c.meta_value("config"));
  m.vocab = Vocabulary::deserialize(c.meta_value("vocab"));
  m.params = enc::EncoderParams::init(m.cfg.encoder, 0, "enc");
  ckpt::import_params(m.params, c.group("retriever"));
  return m;
}

ckpt::Checkpoint to_checkpoint(const JointModel& m) {
  ckpt::Checkpoint c;
  c.meta["kind"] = "joint";
  c.meta["config"] = m.cfg.to_text();
  c.meta["vocab"] = m.vocab.serialize();
  c.meta["labels"] = join_lines(m.labels);
  c.meta["explanations"] = m.explanations ? "1" : "0";
  c.groups["retriever"] = ckpt::export_params(m.retriever);
  c.groups["encoder"] = ckpt::export_params(m.encoder);
  c.groups["fusion"] = ckpt::export_params(m.fusion);
  c.groups["seq2seq"] = ckpt::export_params(m.seq2seq);
  return c;
}

JointModel joint_from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.meta_value("kind") != "joint") throw Error(ErrorKind::CorruptFile, "checkpoint does not hold a joint model");
  JointModel m;
  m.cfg = TrainConfig::from_text(c.meta_value("config"));
  m.vocab = Vocabulary::deserialize(c.meta_value("vocab"));
  m.labels = split_lines(c.meta_value("labels"));
  m.explanations = c.meta_value("explanations") == "1";
  const int n_labels = static_cast<int>(m.labels.size());
  m.retriever = enc::EncoderParams::init(m.cfg.encoder, 0, "enc");
  m.encoder = enc::EncoderParams::init(m.cfg.encoder, 0, "enc");
  m.fusion = ver::FusionParams::init(m.cfg.encoder.d, n_labels, 0);
  m.seq2seq = expl::Seq2SeqParams::init(m.cfg.seq2seq, n_labels, 0);
  ckpt::import_params(m.retriever, c.group("retriever"));
  ckpt::import_params(m.encoder, c.group("encoder"));
  ckpt::import_params(m.fusion, c.group("fusion"));
  ckpt::import_params(m.seq2seq, c.group("seq2seq"));
  return m;
}

}  // namespace mever::train

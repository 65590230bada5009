#include "mever/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mever/checkpoint.hpp"
#include "mever/datamodel.hpp"
#include "mever/error.hpp"
#include "mever/evalkit.hpp"
#include "mever/retriever.hpp"
#include "mever/trainer.hpp"

namespace mever::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string data;
  std::string out = "mever_out";
  std::string config;
  std::string model;
  std::string index;
  std::string resume;
  std::string split;
  std::string runs;
  std::vector<std::string> sets;
  int seed = 7;
  int k = 3;
  std::string setting = "gold";
  double lambda = 0.5;
  std::string ablate;

  // synth
  int claims = 16;
  int evidence = 8;
  int images = 8;
  bool nei = false;
  bool no_explanations = false;
  // prepare
  double train_frac = 0.8;
  double val_frac = 0.1;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* k_opt = nullptr;
  CLI::Option* setting_opt = nullptr;
  CLI::Option* lambda_opt = nullptr;
  CLI::Option* ablate_opt = nullptr;
};

fs::path data_dir(const Options& o) {
  if (!o.data.empty()) return o.data;
  if (const char* env = std::getenv("MEVER_DATA_DIR"); env != nullptr && *env != '\0') return env;
  throw UsageError("no corpus given: pass --data <dir> or set MEVER_DATA_DIR");
}

train::TrainConfig make_config(const Options& o) {
  train::TrainConfig c;
  if (!o.config.empty()) c = train::TrainConfig::from_file(o.config, c);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed_opt->count() > 0) c.seed = static_cast<std::uint64_t>(o.seed);
  if (o.k_opt->count() > 0) c.k_retrieved = o.k;
  if (o.setting_opt->count() > 0) c.evidence_setting = train::parse_setting(o.setting);
  if (o.lambda_opt->count() > 0) c.lambda_reg = o.lambda;
  if (o.ablate_opt->count() > 0) c.ablations = train::Ablations::parse(o.ablate);
  return c;
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoFailure, "cannot write " + p.string());
  f << text;
  if (!f) throw Error(ErrorKind::IoFailure, "write failed: " + p.string());
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_log(const fs::path& p, const train::TrainLog& log) {
  std::ostringstream o;
  o << "epoch,loss,metric\n";
  for (std::size_t i = 0; i < log.epoch_loss.size(); ++i) {
    o << i + 1 << "," << num(log.epoch_loss[i]) << "," << num(log.epoch_metric[i]) << "\n";
  }
  write_file(p, o.str());
}

fs::path model_path(const Options& o, const char* fallback) {
  return o.model.empty() ? fs::path(o.out) / fallback : fs::path(o.model);
}

// The requested split, or the first non-empty of test/val/train.
std::pair<std::string, std::vector<const data::ClaimRecord*>> eval_split(const data::Dataset& d, const Options& o) {
  if (!o.split.empty()) {
    auto claims = d.split_claims(o.split);
    if (claims.empty()) throw UsageError("split '" + o.split + "' is empty or missing");
    return {o.split, claims};
  }
  for (const char* s : {"test", "val", "train"}) {
    auto claims = d.split_claims(s);
    if (!claims.empty()) return {s, claims};
  }
  throw Error(ErrorKind::TooFewClaims, "corpus has no claims in any split");
}

eval::MetricsReport evaluate_models(const data::Dataset& d, const train::RetrieverModel& rm,
                                    const train::JointModel* jm, const std::vector<const data::ClaimRecord*>& claims,
                                    train::EvidenceSetting setting, int k) {
  eval::MetricsReport r;
  const train::RetrievedMap full = train::freeze_and_retrieve(d, rm, static_cast<int>(d.evidence.size()));
  eval::Rankings rankings;
  eval::GoldSets gold;
  for (const auto* c : claims) {
    if (c->gold_evidence_ids.empty()) continue;
    rankings[c->id] = full.at(c->id).ids();
    gold[c->id] = std::set<std::string>(c->gold_evidence_ids.begin(), c->gold_evidence_ids.end());
  }
  if (!rankings.empty()) r.retrieval = eval::retrieval_scores(rankings, gold);
  if (jm == nullptr) return r;

  train::JointModel m = *jm;
  m.cfg.evidence_setting = setting;
  m.cfg.k_retrieved = k;
  train::RetrievedMap top_k;
  for (const auto& [id, list] : full) {
    retrieval::RankedList l = list;
    if (static_cast<int>(l.entries.size()) > k) l.entries.resize(static_cast<std::size_t>(k));
    top_k[id] = std::move(l);
  }
  std::vector<std::string> preds, golds, cands, refs;
  for (const auto* c : claims) {
    const train::Prediction p = train::predict(d, m, *c, top_k, m.explanations);
    preds.push_back(p.verdict.predicted_label);
    golds.push_back(c->label);
    if (m.explanations && c->explanation) {
      cands.push_back(p.explanation);
      refs.push_back(*c->explanation);
    }
  }
  r.verification = eval::f1_scores(preds, golds, m.labels);
  if (!refs.empty()) r.generation = eval::generation_scores(cands, refs);
  return r;
}

train::RetrievedMap retrieved_for(const data::Dataset& d, const train::RetrieverModel& rm, int k) {
  return train::freeze_and_retrieve(d, rm, k);
}

void print_table(std::ostream& out, const eval::MetricsReport& r) { out << eval::format_table({r}); }

// ---- subcommands ----

int cmd_synth(const Options& o, std::ostream& out) {
  data::SyntheticOptions s;
  s.seed = static_cast<std::uint64_t>(o.seed);
  s.n_claims = o.claims;
  s.n_evidence = o.evidence;
  s.n_images = o.images;
  s.with_nei = o.nei;
  s.with_explanations = !o.no_explanations;
  const data::Dataset d = data::generate_synthetic(s);
  const fs::path dir = o.data.empty() ? fs::path(o.out) / "data" : fs::path(o.data);
  data::save_corpus(d, dir);
  out << "wrote " << d.claims.size() << " claims, " << d.evidence.size() << " evidence, " << d.images.size()
      << " images to " << dir.string() << "\n";
  return 0;
}

int cmd_prepare(const Options& o, std::ostream& out) {
  const data::Dataset raw = data::load_corpus(data_dir(o));
  const data::ValidationReport v = data::validate_dataset(raw);
  for (const auto& w : v.warnings) out << "warning: " << w.record_id << ": " << w.message << "\n";
  for (const auto& [k, n] : v.counts) out << k << ": " << n << "\n";
  const data::Dataset d = data::split_dataset(raw, o.train_frac, o.val_frac, static_cast<std::uint64_t>(o.seed));
  const fs::path dir = fs::path(o.out) / "data";
  data::save_corpus(d, dir);
  for (const auto& [name, ids] : d.splits) out << "split " << name << ": " << ids.size() << "\n";
  out << "wrote " << dir.string() << "\n";
  return 0;
}

int cmd_train_retriever(const Options& o, std::ostream& out) {
  const data::Dataset d = data::load_corpus(data_dir(o));
  train::RunOptions run;
  run.checkpoint_path = fs::path(o.out) / "retriever.state";
  if (!o.resume.empty()) run.resume = ckpt::load_checkpoint(o.resume);
  const train::RetrieverResult r = train::train_retriever(d, make_config(o), run);
  ckpt::save_checkpoint(train::to_checkpoint(r.model), fs::path(o.out) / "retriever.ckpt");
  write_log(fs::path(o.out) / "retriever_log.csv", r.log);
  out << "epochs " << r.log.epoch_loss.size() << ", best " << r.log.metric_split << " MAP " << num(r.log.best_metric)
      << " at epoch " << r.log.best_epoch + 1 << "\n";
  return 0;
}

int cmd_build_index(const Options& o, std::ostream& out) {
  const data::Dataset d = data::load_corpus(data_dir(o));
  const train::RetrieverModel rm = train::retriever_from_checkpoint(ckpt::load_checkpoint(model_path(o, "retriever.ckpt")));
  const retrieval::RetrievalIndex idx =
      retrieval::build_index(d, rm.vocab, rm.params, rm.cfg.encoder, rm.cfg.encoder_options());
  const fs::path p = o.index.empty() ? fs::path(o.out) / "index.bin" : fs::path(o.index);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  idx.save(p);
  out << "indexed " << idx.size() << " evidence into " << p.string() << "\n";
  return 0;
}

int cmd_retrieve(const Options& o, std::ostream& out) {
  const data::Dataset d = data::load_corpus(data_dir(o));
  const train::RetrieverModel rm = train::retriever_from_checkpoint(ckpt::load_checkpoint(model_path(o, "retriever.ckpt")));
  const fs::path index_path = o.index.empty() ? fs::path(o.out) / "index.bin" : fs::path(o.index);
  retrieval::RetrievalIndex idx;
  if (fs::exists(index_path)) {
    idx = retrieval::RetrievalIndex::load(index_path);
    if (idx.params_fingerprint() != retrieval::fingerprint(rm.params)) {
      throw Error(ErrorKind::VersionMismatch, "index " + index_path.string() + " was built with different parameters");
    }
  } else {
    idx = retrieval::build_index(d, rm.vocab, rm.params, rm.cfg.encoder, rm.cfg.encoder_options());
  }
  const auto [split, claims] = eval_split(d, o);
  std::ostringstream lines;
  for (const auto* c : claims) {
    const auto list =
        retrieval::retrieve(*c, d, rm.vocab, idx, rm.params, rm.cfg.encoder, o.k, rm.cfg.encoder_options());
    ordered_json j;
    j["claim_id"] = c->id;
    j["evidence"] = ordered_json::array();
    for (const auto& [id, s] : list.entries) j["evidence"].push_back({{"id", id}, {"score", s}});
    lines << j.dump() << "\n";
  }
  const fs::path p = fs::path(o.out) / "retrieved.jsonl";
  write_file(p, lines.str());
  out << "retrieved top-" << o.k << " for " << claims.size() << " " << split << " claims into " << p.string() << "\n";
  return 0;
}

int cmd_train_joint(const Options& o, std::ostream& out) {
  const data::Dataset d = data::load_corpus(data_dir(o));
  const train::RetrieverModel rm = train::retriever_from_checkpoint(ckpt::load_checkpoint(model_path(o, "retriever.ckpt")));
  const train::TrainConfig cfg = make_config(o);
  train::RunOptions run;
  run.checkpoint_path = fs::path(o.out) / "joint.state";
  if (!o.resume.empty()) run.resume = ckpt::load_checkpoint(o.resume);
  const train::JointResult r = train::train_joint(d, rm, retrieved_for(d, rm, cfg.k_retrieved), cfg, run);
  ckpt::save_checkpoint(train::to_checkpoint(r.model), fs::path(o.out) / "joint.ckpt");
  write_log(fs::path(o.out) / "joint_log.csv", r.log);
  out << "epochs " << r.log.epoch_loss.size() << ", best " << r.log.metric_split << " Macro F1 "
      << num(r.log.best_metric) << " at epoch " << r.log.best_epoch + 1 << "\n";
  return 0;
}

train::JointModel load_joint(const Options& o) {
  return train::joint_from_checkpoint(ckpt::load_checkpoint(model_path(o, "joint.ckpt")));
}

int cmd_predict(const Options& o, std::ostream& out) {
  const data::Dataset d = data::load_corpus(data_dir(o));
  train::JointModel m = load_joint(o);
  if (o.setting_opt->count() > 0) m.cfg.evidence_setting = train::parse_setting(o.setting);
  if (o.k_opt->count() > 0) m.cfg.k_retrieved = o.k;
  const train::RetrievedMap ret = retrieved_for(d, m.retrieval_model(), m.cfg.k_retrieved);
  const auto [split, claims] = eval_split(d, o);
  std::ostringstream lines;
  for (const auto* c : claims) {
    const train::Prediction p = train::predict(d, m, *c, ret, true);
    ordered_json j;
    j["claim_id"] = p.claim_id;
    j["predicted_label"] = p.verdict.predicted_label;
    j["explanation"] = p.explanation;
    lines << j.dump() << "\n";
  }
  const fs::path path = fs::path(o.out) / "predictions.jsonl";
  write_file(path, lines.str());
  out << "wrote " << claims.size() << " " << split << " predictions to " << path.string() << "\n";
  return 0;
}

std::map<std::string, std::string> metadata(const fs::path& data, const std::string& split,
                                            const train::TrainConfig& cfg) {
  return {{"dataset", data.filename().empty() ? data.parent_path().filename().string() : data.filename().string()},
          {"split", split},
          {"evidence_setting", train::to_string(cfg.evidence_setting)},
          {"seed", std::to_string(cfg.seed)},
          {"timestamp", eval::report_timestamp()}};
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  const fs::path data = data_dir(o);
  const data::Dataset d = data::load_corpus(data);
  const auto [split, claims] = eval_split(d, o);
  fs::path p = model_path(o, "joint.ckpt");
  if (o.model.empty() && !fs::exists(p)) p = fs::path(o.out) / "retriever.ckpt";
  const ckpt::Checkpoint c = ckpt::load_checkpoint(p);
  eval::MetricsReport r;
  if (c.meta_value("kind") == "joint") {
    train::JointModel m = train::joint_from_checkpoint(c);
    if (o.setting_opt->count() > 0) m.cfg.evidence_setting = train::parse_setting(o.setting);
    if (o.k_opt->count() > 0) m.cfg.k_retrieved = o.k;
    r = evaluate_models(d, m.retrieval_model(), &m, claims, m.cfg.evidence_setting, m.cfg.k_retrieved);
    r.metadata = metadata(data, split, m.cfg);
  } else {
    const train::RetrieverModel rm = train::retriever_from_checkpoint(c);
    r = evaluate_models(d, rm, nullptr, claims, rm.cfg.evidence_setting, rm.cfg.k_retrieved);
    train::TrainConfig cfg = rm.cfg;
    if (o.setting_opt->count() > 0) cfg.evidence_setting = train::parse_setting(o.setting);
    r.metadata = metadata(data, split, cfg);
  }
  const fs::path report = fs::path(o.out) / ("report_" + r.metadata["evidence_setting"] + ".json");
  eval::emit_report({r}, report);
  print_table(out, r);
  out << "wrote " << report.string() << "\n";
  return 0;
}

struct Variant {
  std::string name;
  train::TrainConfig cfg;
};

int cmd_ablate(const Options& o, std::ostream& out) {
  const fs::path data = data_dir(o);
  const data::Dataset d = data::load_corpus(data);
  const auto [split, claims] = eval_split(d, o);
  const train::TrainConfig base = make_config(o);
  std::vector<Variant> variants{{"full", base}};
  for (const auto& name : train::Ablations::names()) {
    train::TrainConfig c = base;
    c.ablations = train::Ablations{};
    c.ablations.set(name);
    variants.push_back({name, c});
  }
  train::TrainConfig lambda0 = base;
  lambda0.ablations = train::Ablations{};
  lambda0.lambda_reg = 0.0;
  variants.push_back({"lambda_0", lambda0});

  std::vector<eval::MetricsReport> reports;
  for (const auto& v : variants) {
    const train::RetrieverResult rr = train::train_retriever(d, v.cfg);
    const train::JointResult jr = train::train_joint(d, rr.model, retrieved_for(d, rr.model, v.cfg.k_retrieved), v.cfg);
    eval::MetricsReport r =
        evaluate_models(d, rr.model, &jr.model, claims, jr.model.cfg.evidence_setting, jr.model.cfg.k_retrieved);
    r.metadata = metadata(data, split, v.cfg);
    r.metadata["variant"] = v.name;
    reports.push_back(std::move(r));
    out << "trained " << v.name << "\n";
  }

  const std::vector<std::string> metrics{"retrieval.map", "verification.macro_f1", "generation.rougeL"};
  const auto base_values = eval::flatten(reports.front());
  auto value = [](const std::map<std::string, double>& m, const std::string& k) {
    const auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
  };
  std::ostringstream csv, table;
  csv << "variant";
  for (const auto& m : metrics) csv << "," << m << ",delta_" << m;
  csv << "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %10s %10s %10s %10s %10s %10s\n", "variant", "MAP", "dMAP", "MacroF1",
                "dMacroF1", "ROUGE-L", "dROUGE-L");
  table << line;
  ordered_json j = ordered_json::array();
  for (const auto& r : reports) {
    const auto values = eval::flatten(r);
    const std::string& name = r.metadata.at("variant");
    csv << name;
    ordered_json row;
    row["variant"] = name;
    double cells[6];
    for (std::size_t i = 0; i < metrics.size(); ++i) {
      const double v = value(values, metrics[i]);
      const double delta = v - value(base_values, metrics[i]);
      csv << "," << num(v) << "," << num(delta);
      row[metrics[i]] = v;
      row["delta_" + metrics[i]] = delta;
      cells[2 * i] = v;
      cells[2 * i + 1] = delta;
    }
    csv << "\n";
    std::snprintf(line, sizeof line, "%-20s %10.4f %+10.4f %10.4f %+10.4f %10.4f %+10.4f\n", name.c_str(), cells[0],
                  cells[1], cells[2], cells[3], cells[4], cells[5]);
    table << line;
    j.push_back(row);
  }
  write_file(fs::path(o.out) / "ablation.csv", csv.str());
  write_file(fs::path(o.out) / "ablation.txt", table.str());
  write_file(fs::path(o.out) / "ablation.json", j.dump(2) + "\n");
  out << table.str();
  return 0;
}

int cmd_report(const Options& o, std::ostream& out) {
  bool wrote = false;
  if (!o.runs.empty()) {
    std::vector<eval::MetricsReport> runs;
    std::stringstream ss(o.runs);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::ifstream f(item);
      if (!f) throw Error(ErrorKind::MissingFile, item);
      runs.push_back(eval::report_from_json(json::parse(f)));
    }
    const fs::path p = fs::path(o.out) / "report_runs.json";
    eval::emit_report(runs, p);
    out << eval::format_table(runs) << "wrote " << p.string() << "\n";
    wrote = true;
  }

  const fs::path ablation = fs::path(o.out) / "ablation.json";
  if (fs::exists(ablation)) {
    std::ifstream f(ablation);
    const json rows = json::parse(f);
    std::ostringstream csv;
    csv << "variant,metric,value\n";
    for (const auto& row : rows) {
      for (const char* m : {"retrieval.map", "verification.macro_f1", "generation.rougeL"}) {
        csv << row.at("variant").get<std::string>() << "," << m << "," << num(row.at(m).get<double>()) << "\n";
      }
    }
    write_file(fs::path(o.out) / "plot_ablation.csv", csv.str());
    out << "wrote " << (fs::path(o.out) / "plot_ablation.csv").string() << "\n";
    wrote = true;
  }

  fs::path model = model_path(o, "joint.ckpt");
  if (o.model.empty() && !fs::exists(model)) model = fs::path(o.out) / "retriever.ckpt";
  if (fs::exists(model)) {
    const data::Dataset d = data::load_corpus(data_dir(o));
    const auto [split, claims] = eval_split(d, o);
    const ckpt::Checkpoint c = ckpt::load_checkpoint(model);
    const train::RetrieverModel rm =
        c.meta_value("kind") == "joint" ? train::joint_from_checkpoint(c).retrieval_model() : train::retriever_from_checkpoint(c);
    const eval::MetricsReport r = evaluate_models(d, rm, nullptr, claims, rm.cfg.evidence_setting, rm.cfg.k_retrieved);
    std::ostringstream csv;
    csv << "k,precision,recall\n";
    if (r.retrieval) {
      for (const auto& [k, p] : r.retrieval->p_at) csv << k << "," << num(p) << "," << num(r.retrieval->r_at.at(k)) << "\n";
    }
    write_file(fs::path(o.out) / "plot_kappa.csv", csv.str());
    out << "wrote " << (fs::path(o.out) / "plot_kappa.csv").string() << "\n";
    wrote = true;
  }
  if (!wrote) throw UsageError("nothing to report: no --runs, no ablation.json and no model under " + o.out);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"mever: multi-modal evidence retrieval, verification and explanation", "mever"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--data", o.data, "corpus directory (default: $MEVER_DATA_DIR)");
  app.add_option("--out", o.out, "output / workspace directory");
  app.add_option("--config", o.config, "key=value config file");
  app.add_option("--model", o.model, "checkpoint to read (default: under --out)");
  app.add_option("--set", o.sets, "config override key=value (repeatable)");
  app.add_option("--split", o.split, "claim split to evaluate or predict");
  o.seed_opt = app.add_option("--seed", o.seed, "random seed");
  o.k_opt = app.add_option("--k", o.k, "evidence kept per claim")->check(CLI::PositiveNumber);
  o.setting_opt = app.add_option("--setting", o.setting, "gold or retrieved")->check(CLI::IsMember({"gold", "retrieved"}));
  o.lambda_opt = app.add_option("--lambda", o.lambda, "regularizer weight")->check(CLI::NonNegativeNumber);
  o.ablate_opt = app.add_option("--ablate", o.ablate, "comma-separated ablation flags");

  auto* synth = app.add_subcommand("synth", "write a synthetic corpus");
  synth->add_option("--claims", o.claims, "number of claims");
  synth->add_option("--evidence", o.evidence, "number of evidence texts");
  synth->add_option("--images", o.images, "number of images");
  synth->add_flag("--nei", o.nei, "include NEI claims (3-way labels)");
  synth->add_flag("--no-explanations", o.no_explanations, "omit gold explanations");
  auto* prepare = app.add_subcommand("prepare", "validate a corpus and write train/val/test splits");
  prepare->add_option("--train", o.train_frac, "train+val share of claims");
  prepare->add_option("--val", o.val_frac, "validation share of the train+val claims");
  auto* train_ret = app.add_subcommand("train-retriever", "train the contrastive retriever");
  train_ret->add_option("--resume", o.resume, "training state to resume from");
  auto* build_index = app.add_subcommand("build-index", "embed every evidence text into an index file");
  build_index->add_option("--index", o.index, "index file (default: <out>/index.bin)");
  auto* retrieve = app.add_subcommand("retrieve", "top-k evidence per claim");
  retrieve->add_option("--index", o.index, "index file (default: <out>/index.bin)");
  auto* train_joint = app.add_subcommand("train-joint", "train verification and explanation");
  train_joint->add_option("--resume", o.resume, "training state to resume from");
  auto* predict = app.add_subcommand("predict", "labels and explanations as JSON lines");
  auto* evaluate = app.add_subcommand("evaluate", "retrieval, verification and generation metrics");
  auto* ablate = app.add_subcommand("ablate", "train every single-mechanism ablation and tabulate deltas");
  auto* report = app.add_subcommand("report", "plot-ready CSV and multi-run summaries");
  report->add_option("--runs", o.runs, "comma-separated report JSON files to aggregate");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "usage error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (prepare->parsed()) return cmd_prepare(o, out);
    if (train_ret->parsed()) return cmd_train_retriever(o, out);
    if (build_index->parsed()) return cmd_build_index(o, out);
    if (retrieve->parsed()) return cmd_retrieve(o, out);
    if (train_joint->parsed()) return cmd_train_joint(o, out);
    if (predict->parsed()) return cmd_predict(o, out);
    if (evaluate->parsed()) return cmd_evaluate(o, out);
    if (ablate->parsed()) return cmd_ablate(o, out);
    if (report->parsed()) return cmd_report(o, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << app.help();
  return 1;
}

}  // namespace mever::cli

#include "mever/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mever/error.hpp"

namespace mever::eval {

using nlohmann::json;
using nlohmann::ordered_json;

double average_precision(const std::vector<std::string>& ranked, const std::set<std::string>& gold) {
  if (gold.empty()) throw Error(ErrorKind::EmptyGold, "average precision over empty gold set");
  double total = 0.0;
  std::size_t hits = 0;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (gold.count(ranked[i]) == 0 || !seen.insert(ranked[i]).second) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return total / static_cast<double>(gold.size());
}

namespace {

const std::set<std::string>& gold_of(const GoldSets& gold, const std::string& claim) {
  const auto it = gold.find(claim);
  if (it == gold.end() || it->second.empty()) throw Error(ErrorKind::EmptyGold, "no gold evidence for " + claim);
  return it->second;
}

}  // namespace

double mean_average_precision(const Rankings& rankings, const GoldSets& gold) {
  if (rankings.empty()) throw Error(ErrorKind::EmptyGold, "MAP over no claims");
  double s = 0.0;
  for (const auto& [claim, ranked] : rankings) s += average_precision(ranked, gold_of(gold, claim));
  return s / static_cast<double>(rankings.size());
}

PrecisionRecall precision_recall_at_k(const Rankings& rankings, const GoldSets& gold, int k) {
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  if (rankings.empty()) throw Error(ErrorKind::EmptyGold, "precision/recall over no claims");
  PrecisionRecall out;
  for (const auto& [claim, ranked] : rankings) {
    const auto& g = gold_of(gold, claim);
    std::set<std::string> top(ranked.begin(), ranked.begin() + std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(ranked.size())));
    std::size_t hit = 0;
    for (const auto& id : top) hit += g.count(id);
    out.precision += static_cast<double>(hit) / k;
    out.recall += static_cast<double>(hit) / static_cast<double>(g.size());
  }
  out.precision /= static_cast<double>(rankings.size());
  out.recall /= static_cast<double>(rankings.size());
  return out;
}

F1Result f1_scores(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                   const std::vector<std::string>& label_set) {
  if (preds.size() != golds.size()) throw Error(ErrorKind::LengthMismatch, "predictions and golds differ in length");
  if (preds.empty()) throw Error(ErrorKind::LengthMismatch, "F1 over no predictions");
  const std::size_t n = label_set.size();
  auto index = [&](const std::string& l) {
    const auto it = std::find(label_set.begin(), label_set.end(), l);
    if (it == label_set.end()) throw Error(ErrorKind::UnknownLabel, l);
    return static_cast<std::size_t>(it - label_set.begin());
  };
  F1Result r;
  r.labels = label_set;
  r.confusion.assign(n, std::vector<std::size_t>(n, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) ++r.confusion[index(golds[i])][index(preds[i])];

  std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t l = 0; l < n; ++l) {
    std::size_t tp = r.confusion[l][l], fp = 0, fn = 0;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == l) continue;
      fp += r.confusion[o][l];
      fn += r.confusion[l][o];
    }
    LabelScores s;
    s.support = tp + fn;
    s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    r.macro += s.f1;
    r.per_label[label_set[l]] = s;
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  r.macro /= static_cast<double>(n);
  const double p = tp_all + fp_all == 0 ? 0.0 : static_cast<double>(tp_all) / static_cast<double>(tp_all + fp_all);
  const double rc = tp_all + fn_all == 0 ? 0.0 : static_cast<double>(tp_all) / static_cast<double>(tp_all + fn_all);
  r.micro = p + rc == 0.0 ? 0.0 : 2.0 * p * rc / (p + rc);
  return r;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

using Tokens = std::vector<std::string>;

Tokens reference_tokens(std::string_view reference) {
  Tokens r = tokenize(reference);
  if (r.empty()) throw Error(ErrorKind::EmptyReference, "reference has no tokens");
  return r;
}

std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, std::size_t> c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

std::size_t clipped_overlap(const std::map<Tokens, std::size_t>& cand, const std::map<Tokens, std::size_t>& ref) {
  std::size_t s = 0;
  for (const auto& [g, c] : cand) {
    const auto it = ref.find(g);
    if (it != ref.end()) s += std::min(c, it->second);
  }
  return s;
}

double f1(double overlap, double cand_total, double ref_total) {
  if (overlap == 0.0 || cand_total == 0.0 || ref_total == 0.0) return 0.0;
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge(std::string_view candidate, std::string_view reference, Rouge variant) {
  const Tokens ref = reference_tokens(reference);
  const Tokens cand = tokenize(candidate);
  if (cand.empty()) return 0.0;
  if (variant == Rouge::L) {
    return f1(static_cast<double>(lcs(cand, ref)), static_cast<double>(cand.size()), static_cast<double>(ref.size()));
  }
  const std::size_t n = variant == Rouge::R1 ? 1 : 2;
  const auto cc = ngram_counts(cand, n);
  const auto rc = ngram_counts(ref, n);
  const double cand_total = cand.size() >= n ? static_cast<double>(cand.size() - n + 1) : 0.0;
  const double ref_total = ref.size() >= n ? static_cast<double>(ref.size() - n + 1) : 0.0;
  return f1(static_cast<double>(clipped_overlap(cc, rc)), cand_total, ref_total);
}

double bleu(std::string_view candidate, std::string_view reference, int max_n) {
  if (max_n < 1) throw Error(ErrorKind::InvalidArgument, "BLEU order must be >= 1");
  const Tokens ref = reference_tokens(reference);
  const Tokens cand = tokenize(candidate);
  if (cand.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto un = static_cast<std::size_t>(n);
    const std::size_t total = cand.size() >= un ? cand.size() - un + 1 : 0;
    const std::size_t match = clipped_overlap(ngram_counts(cand, un), ngram_counts(ref, un));
    const double p = match == 0 ? 1e-9 / static_cast<double>(std::max<std::size_t>(total, 1))
                                : static_cast<double>(match) / static_cast<double>(total);
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

double meteor(std::string_view candidate, std::string_view reference) {
  const Tokens ref = reference_tokens(reference);
  const Tokens cand = tokenize(candidate);
  if (cand.empty()) return 0.0;
  // Each candidate word, left to right, takes the earliest unused equal
  // reference word.
  std::vector<bool> used(ref.size(), false);
  std::vector<long> aligned(cand.size(), -1);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && ref[j] == cand[i]) {
        used[j] = true;
        aligned[i] = static_cast<long>(j);
        ++matches;
        break;
      }
    }
  }
  if (matches == 0) return 0.0;
  std::size_t chunks = 0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (aligned[i] < 0) continue;
    const bool continues = i > 0 && aligned[i - 1] >= 0 && aligned[i] == aligned[i - 1] + 1;
    if (!continues) ++chunks;
  }
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
  return f_mean * (1.0 - penalty);
}

GenerationScores generation_scores(const std::vector<std::string>& candidates,
                                   const std::vector<std::string>& references) {
  if (candidates.size() != references.size()) throw Error(ErrorKind::LengthMismatch, "candidates vs references");
  if (candidates.empty()) throw Error(ErrorKind::EmptyReference, "no references to score against");
  GenerationScores g;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    g.rouge1 += rouge(candidates[i], references[i], Rouge::R1);
    g.rouge2 += rouge(candidates[i], references[i], Rouge::R2);
    g.rougeL += rouge(candidates[i], references[i], Rouge::L);
    g.meteor += meteor(candidates[i], references[i]);
    g.bleu2 += bleu(candidates[i], references[i], 2);
    g.bleu4 += bleu(candidates[i], references[i], 4);
  }
  const double n = static_cast<double>(candidates.size());
  for (double* v : {&g.rouge1, &g.rouge2, &g.rougeL, &g.meteor, &g.bleu2, &g.bleu4}) *v /= n;
  return g;
}

RetrievalScores retrieval_scores(const Rankings& rankings, const GoldSets& gold, const std::vector<int>& ks) {
  RetrievalScores s;
  s.map = mean_average_precision(rankings, gold);
  for (int k : ks) {
    const PrecisionRecall pr = precision_recall_at_k(rankings, gold, k);
    s.p_at[k] = pr.precision;
    s.r_at[k] = pr.recall;
  }
  return s;
}

std::string report_timestamp() {
  const char* e = std::getenv("SOURCE_DATE_EPOCH");
  return e != nullptr && *e != '\0' ? std::string(e) : std::string("unset");
}

ordered_json to_json(const MetricsReport& r) {
  ordered_json j;
  j["metadata"] = ordered_json::object();
  for (const auto& [k, v] : r.metadata) j["metadata"][k] = v;
  if (r.retrieval) {
    ordered_json rj;
    rj["map"] = r.retrieval->map;
    rj["p_at"] = ordered_json::object();
    rj["r_at"] = ordered_json::object();
    for (const auto& [k, v] : r.retrieval->p_at) rj["p_at"][std::to_string(k)] = v;
    for (const auto& [k, v] : r.retrieval->r_at) rj["r_at"][std::to_string(k)] = v;
    j["retrieval"] = rj;
  }
  if (r.verification) {
    const F1Result& f = *r.verification;
    ordered_json vj;
    vj["micro_f1"] = f.micro;
    vj["macro_f1"] = f.macro;
    vj["labels"] = f.labels;
    vj["per_label"] = ordered_json::object();
    for (const auto& l : f.labels) {
      const LabelScores& s = f.per_label.at(l);
      vj["per_label"][l] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
    }
    vj["confusion"] = f.confusion;
    j["verification"] = vj;
  }
  if (r.generation) {
    const GenerationScores& g = *r.generation;
    j["generation"] = {{"rouge1", g.rouge1}, {"rouge2", g.rouge2}, {"rougeL", g.rougeL},
                       {"meteor", g.meteor}, {"bleu2", g.bleu2},   {"bleu4", g.bleu4}};
  }
  return j;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  for (const auto& [k, v] : j.at("metadata").items()) r.metadata[k] = v.get<std::string>();
  if (j.contains("retrieval")) {
    const auto& rj = j["retrieval"];
    RetrievalScores s;
    s.map = rj.at("map").get<double>();
    for (const auto& [k, v] : rj.at("p_at").items()) s.p_at[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : rj.at("r_at").items()) s.r_at[std::stoi(k)] = v.get<double>();
    r.retrieval = s;
  }
  if (j.contains("verification")) {
    const auto& vj = j["verification"];
    F1Result f;
    f.micro = vj.at("micro_f1").get<double>();
    f.macro = vj.at("macro_f1").get<double>();
    f.labels = vj.at("labels").get<std::vector<std::string>>();
    for (const auto& l : f.labels) {
      const auto& s = vj.at("per_label").at(l);
      f.per_label[l] = LabelScores{s.at("precision").get<double>(), s.at("recall").get<double>(),
                                   s.at("f1").get<double>(), s.at("support").get<std::size_t>()};
    }
    f.confusion = vj.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    r.verification = f;
  }
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    r.generation = GenerationScores{g.at("rouge1").get<double>(), g.at("rouge2").get<double>(),
                                    g.at("rougeL").get<double>(), g.at("meteor").get<double>(),
                                    g.at("bleu2").get<double>(),  g.at("bleu4").get<double>()};
  }
  return r;
}

std::map<std::string, double> flatten(const MetricsReport& r) {
  std::map<std::string, double> out;
  if (r.retrieval) {
    out["retrieval.map"] = r.retrieval->map;
    for (const auto& [k, v] : r.retrieval->p_at) out["retrieval.p_at." + std::to_string(k)] = v;
    for (const auto& [k, v] : r.retrieval->r_at) out["retrieval.r_at." + std::to_string(k)] = v;
  }
  if (r.verification) {
    out["verification.micro_f1"] = r.verification->micro;
    out["verification.macro_f1"] = r.verification->macro;
  }
  if (r.generation) {
    const GenerationScores& g = *r.generation;
    out["generation.rouge1"] = g.rouge1;
    out["generation.rouge2"] = g.rouge2;
    out["generation.rougeL"] = g.rougeL;
    out["generation.meteor"] = g.meteor;
    out["generation.bleu2"] = g.bleu2;
    out["generation.bleu4"] = g.bleu4;
  }
  return out;
}

namespace {

struct Summary {
  std::map<std::string, double> mean, std;
};

Summary summarize(const std::vector<MetricsReport>& runs) {
  Summary s;
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : runs) {
    for (const auto& [k, v] : flatten(r)) values[k].push_back(v);
  }
  for (const auto& [k, vs] : values) {
    double m = 0.0;
    for (double v : vs) m += v;
    m /= static_cast<double>(vs.size());
    double var = 0.0;
    for (double v : vs) var += (v - m) * (v - m);
    s.mean[k] = m;
    s.std[k] = vs.size() > 1 ? std::sqrt(var / static_cast<double>(vs.size() - 1)) : 0.0;
  }
  return s;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string format_table(const std::vector<MetricsReport>& runs) {
  if (runs.empty()) throw Error(ErrorKind::InvalidArgument, "no runs to tabulate");
  const Summary s = summarize(runs);
  const bool with_std = runs.size() > 1;
  std::ostringstream out;
  for (const auto& [k, v] : runs.front().metadata) out << "# " << k << ": " << v << "\n";
  char line[128];
  std::snprintf(line, sizeof line, with_std ? "%-26s %10s %10s\n" : "%-26s %10s\n", "metric", "mean", "std");
  out << line;
  for (const auto& [k, m] : s.mean) {
    if (with_std) {
      std::snprintf(line, sizeof line, "%-26s %10s %10s\n", k.c_str(), fixed(m).c_str(), fixed(s.std.at(k)).c_str());
    } else {
      std::snprintf(line, sizeof line, "%-26s %10s\n", k.c_str(), fixed(m).c_str());
    }
    out << line;
  }
  return out.str();
}

void emit_report(const std::vector<MetricsReport>& runs, const std::filesystem::path& path) {
  if (runs.empty()) throw Error(ErrorKind::InvalidArgument, "no runs to report");
  ordered_json j;
  if (runs.size() == 1) {
    j = to_json(runs.front());
  } else {
    const Summary s = summarize(runs);
    j["metadata"] = to_json(runs.front())["metadata"];
    j["runs"] = ordered_json::array();
    for (const auto& r : runs) j["runs"].push_back(to_json(r));
    j["mean"] = s.mean;
    j["std"] = s.std;
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  f << j.dump(2) << "\n";
  std::ofstream t(path.string() + ".txt");
  if (!t) throw Error(ErrorKind::IoFailure, "cannot write " + path.string() + ".txt");
  t << format_table(runs);
  if (!f || !t) throw Error(ErrorKind::IoFailure, "report write failed");
}

}  // namespace mever::eval

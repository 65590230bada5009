#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mever::eval {

using Rankings = std::map<std::string, std::vector<std::string>>;
using GoldSets = std::map<std::string, std::set<std::string>>;

// Mean over gold items of the precision at each gold hit; gold never
// retrieved contributes 0.
double average_precision(const std::vector<std::string>& ranked, const std::set<std::string>& gold);
double mean_average_precision(const Rankings& rankings, const GoldSets& gold);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

PrecisionRecall precision_recall_at_k(const Rankings& rankings, const GoldSets& gold, int k);

struct LabelScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct F1Result {
  double micro = 0.0;
  double macro = 0.0;
  std::vector<std::string> labels;
  std::map<std::string, LabelScores> per_label;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][pred], label_set order
};

F1Result f1_scores(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                   const std::vector<std::string>& label_set);

// Lowercased words; whitespace and ASCII punctuation separate words and
// punctuation itself is dropped.
std::vector<std::string> tokenize(std::string_view text);

enum class Rouge { R1, R2, L };

double rouge(std::string_view candidate, std::string_view reference, Rouge variant);
double bleu(std::string_view candidate, std::string_view reference, int max_n);
double meteor(std::string_view candidate, std::string_view reference);

struct GenerationScores {
  double rouge1 = 0.0, rouge2 = 0.0, rougeL = 0.0, meteor = 0.0, bleu2 = 0.0, bleu4 = 0.0;
};

// Means over aligned candidate/reference pairs.
GenerationScores generation_scores(const std::vector<std::string>& candidates,
                                   const std::vector<std::string>& references);

struct RetrievalScores {
  double map = 0.0;
  std::map<int, double> p_at;
  std::map<int, double> r_at;
};

RetrievalScores retrieval_scores(const Rankings& rankings, const GoldSets& gold, const std::vector<int>& ks = {1, 3, 5, 7});

struct MetricsReport {
  std::map<std::string, std::string> metadata;  // dataset, split, evidence_setting, seed, timestamp
  std::optional<RetrievalScores> retrieval;
  std::optional<F1Result> verification;
  std::optional<GenerationScores> generation;
};

// SOURCE_DATE_EPOCH when set, "unset" otherwise, so reports are reproducible.
std::string report_timestamp();

nlohmann::ordered_json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

// Metric name -> value, e.g. "retrieval.p_at.3".
std::map<std::string, double> flatten(const MetricsReport& r);

std::string format_table(const std::vector<MetricsReport>& runs);

// Writes <path> (JSON) and <path>.txt (table). One run: the report itself.
// Several runs: {"metadata", "runs", "mean", "std"} with sample std.
void emit_report(const std::vector<MetricsReport>& runs, const std::filesystem::path& path);

}  // namespace mever::eval

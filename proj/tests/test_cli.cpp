#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mever/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = mever::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> with_root(const fs::path& root, std::vector<std::string> args) {
  std::vector<std::string> base{"--data", (root / "data").string(), "--out", (root / "out").string(), "--seed", "7",
                                "--set",  "d=8",  "--set", "layers=1", "--set", "max_epochs_retriever=2",
                                "--set",  "max_epochs_joint=1", "--set", "max_len=4"};
  base.insert(base.end(), args.begin(), args.end());
  return base;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(f, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace

TEST_CASE("cli usage errors exit with 1") {
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"--k", "0", "--data", "x", "evaluate"}).code == 1);
  CHECK(run({"--setting", "silver", "--data", "x", "evaluate"}).code == 1);
}

TEST_CASE("cli runtime errors exit with 2") {
  const fs::path missing = fs::temp_directory_path() / "mever_cli_missing_corpus";
  fs::remove_all(missing);
  const Result r = run({"--data", missing.string(), "--out", (missing / "out").string(), "train-retriever"});
  CHECK(r.code == 2);
  CHECK(r.err.find("MissingFile") != std::string::npos);
}

TEST_CASE("cli pipeline from synthetic corpus to report") {
  const fs::path root = fs::temp_directory_path() / "mever_cli_pipeline";
  fs::remove_all(root);
  REQUIRE(run(with_root(root, {"synth", "--claims", "8", "--evidence", "4"})).code == 0);
  CHECK(fs::exists(root / "data" / "claims.jsonl"));
  REQUIRE(run(with_root(root, {"train-retriever"})).code == 0);
  CHECK(fs::exists(root / "out" / "retriever.ckpt"));
  CHECK(lines_of(root / "out" / "retriever_log.csv").size() == 3);
  REQUIRE(run(with_root(root, {"build-index"})).code == 0);
  REQUIRE(run(with_root(root, {"retrieve"})).code == 0);
  for (const auto& line : lines_of(root / "out" / "retrieved.jsonl")) CHECK(json::parse(line).contains("claim_id"));
  REQUIRE(run(with_root(root, {"train-joint"})).code == 0);
  REQUIRE(run(with_root(root, {"predict"})).code == 0);
  const auto preds = lines_of(root / "out" / "predictions.jsonl");
  CHECK(preds.size() == 8);
  for (const auto& line : preds) {
    const json j = json::parse(line);
    CHECK(j.contains("predicted_label"));
    CHECK(j.contains("explanation"));
  }
  for (const char* setting : {"gold", "retrieved"}) {
    REQUIRE(run(with_root(root, {"--setting", setting, "evaluate"})).code == 0);
    const fs::path report = root / "out" / (std::string("report_") + setting + ".json");
    REQUIRE(fs::exists(report));
    std::ifstream f(report);
    const json j = json::parse(f);
    CHECK(j["metadata"]["evidence_setting"] == setting);
  }
  const Result rep = run(with_root(root, {"report", "--runs",
                                          (root / "out" / "report_gold.json").string() + "," +
                                              (root / "out" / "report_retrieved.json").string()}));
  CHECK(rep.code == 0);
  CHECK(fs::exists(root / "out" / "report_runs.json"));
  fs::remove_all(root);
}

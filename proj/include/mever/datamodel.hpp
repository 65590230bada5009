#pragma once

// Corpus schema: claims, evidence texts, images, splits and the label set.
// On disk a corpus is a directory holding claims.jsonl, evidence.jsonl,
// images/<id>.png, splits.json and (optionally) meta.json.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mever::data {

inline const std::string kSupport = "SUPPORT";
inline const std::string kRefute = "REFUTE";
inline const std::string kNei = "NEI";

struct ClaimRecord {
  std::string id;
  std::string text;
  std::vector<std::string> image_ids;
  std::vector<std::string> gold_evidence_ids;  // empty for NEI
  std::string label;
  std::optional<std::string> explanation;

  bool operator==(const ClaimRecord&) const = default;
};

struct EvidenceRecord {
  std::string id;
  std::string text;
  std::vector<std::string> image_ids;

  bool operator==(const EvidenceRecord&) const = default;
};

// 8-bit raster, row-major, channel-interleaved (HWC).
struct ImageRecord {
  std::string id;
  std::string uri;
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  bool operator==(const ImageRecord&) const = default;
};

struct Dataset {
  std::vector<ClaimRecord> claims;
  std::vector<EvidenceRecord> evidence;
  std::vector<ImageRecord> images;
  std::map<std::string, std::vector<std::string>> splits;
  std::vector<std::string> label_set = {kSupport, kRefute};
  bool has_explanations = false;

  const ClaimRecord* find_claim(const std::string& id) const;
  const EvidenceRecord* find_evidence(const std::string& id) const;
  const ImageRecord* find_image(const std::string& id) const;
  // Claims of one split, in split order. Unknown split yields empty.
  std::vector<const ClaimRecord*> split_claims(const std::string& split) const;
  int label_index(const std::string& label) const;  // -1 when absent

  bool operator==(const Dataset&) const = default;
};

struct ValidationIssue {
  std::string record_id;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> errors;
  std::vector<ValidationIssue> warnings;
  std::map<std::string, std::size_t> counts;

  bool ok() const { return errors.empty(); }
};

struct ValidationOptions {
  int patch_size = 8;
  int channels = 3;
};

Dataset load_corpus(const std::filesystem::path& root);
void save_corpus(const Dataset& d, const std::filesystem::path& root);

ValidationReport validate_dataset(const Dataset& d, const ValidationOptions& opts = {});

using TextImageSimilarity = std::function<double(const std::string& text, const ImageRecord& image)>;

// Gives every evidence text without images its top_k most similar images.
// Ties break on lexicographic image id.
Dataset align_images(Dataset d, const TextImageSimilarity& sim, int top_k = 3);

struct SyntheticOptions {
  std::uint64_t seed = 7;
  int n_claims = 16;
  int n_evidence = 8;
  int n_images = 8;
  int vocab = 32;
  bool with_explanations = true;
  bool with_nei = false;
  int image_size = 16;
};

// Deterministic toy corpus. Evidence texts come in pairs with identical
// wording so that only their images tell them apart; each claim carries the
// image of its gold evidence.
Dataset generate_synthetic(const SyntheticOptions& opts);

// 80/20-style split where `val` is carved out of the training share.
Dataset split_dataset(Dataset d, double train, double val, std::uint64_t seed);

}  // namespace mever::data

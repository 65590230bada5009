#include "mever/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "mever/error.hpp"
#include "mever/image_io.hpp"

namespace mever::data {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

template <typename Record>
const Record* find_by_id(const std::vector<Record>& records, const std::string& id) {
  auto it = std::find_if(records.begin(), records.end(), [&](const Record& r) { return r.id == id; });
  return it == records.end() ? nullptr : &*it;
}

std::vector<std::string> string_list(const json& j, const char* key, std::size_t line, const fs::path& file) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  const json& v = j.at(key);
  if (!v.is_array()) {
    throw Error(ErrorKind::MalformedRecord, file.string() + ":" + std::to_string(line) + ": '" + key + "' not a list");
  }
  for (const auto& e : v) {
    if (!e.is_string()) {
      throw Error(ErrorKind::MalformedRecord,
                  file.string() + ":" + std::to_string(line) + ": '" + key + "' holds a non-string");
    }
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::string required_string(const json& j, const char* key, std::size_t line, const fs::path& file) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw Error(ErrorKind::MalformedRecord,
                file.string() + ":" + std::to_string(line) + ": missing string field '" + key + "'");
  }
  return j.at(key).get<std::string>();
}

template <typename Fn>
void for_each_jsonl(const fs::path& file, Fn&& fn) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::MissingFile, file.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::MalformedRecord, file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) {
      throw Error(ErrorKind::MalformedRecord, file.string() + ":" + std::to_string(line_no) + ": not an object");
    }
    fn(j, line_no);
  }
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + file.string());
  out << text;
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + file.string());
}

}  // namespace

const ClaimRecord* Dataset::find_claim(const std::string& id) const { return find_by_id(claims, id); }
const EvidenceRecord* Dataset::find_evidence(const std::string& id) const { return find_by_id(evidence, id); }
const ImageRecord* Dataset::find_image(const std::string& id) const { return find_by_id(images, id); }

std::vector<const ClaimRecord*> Dataset::split_claims(const std::string& split) const {
  std::vector<const ClaimRecord*> out;
  auto it = splits.find(split);
  if (it == splits.end()) return out;
  for (const auto& id : it->second) {
    if (const ClaimRecord* c = find_claim(id)) out.push_back(c);
  }
  return out;
}

int Dataset::label_index(const std::string& label) const {
  auto it = std::find(label_set.begin(), label_set.end(), label);
  return it == label_set.end() ? -1 : static_cast<int>(it - label_set.begin());
}

Dataset load_corpus(const fs::path& root) {
  for (const char* name : {"claims.jsonl", "evidence.jsonl", "splits.json"}) {
    if (!fs::exists(root / name)) throw Error(ErrorKind::MissingFile, (root / name).string());
  }
  if (!fs::is_directory(root / "images")) throw Error(ErrorKind::MissingFile, (root / "images").string());

  Dataset d;
  bool any_nei = false;
  bool any_explanation = false;
  for_each_jsonl(root / "claims.jsonl", [&](const json& j, std::size_t line) {
    const fs::path f = root / "claims.jsonl";
    ClaimRecord c;
    c.id = required_string(j, "id", line, f);
    c.text = required_string(j, "text", line, f);
    c.image_ids = string_list(j, "image_ids", line, f);
    c.gold_evidence_ids = string_list(j, "gold_evidence_ids", line, f);
    c.label = required_string(j, "label", line, f);
    if (j.contains("explanation") && !j.at("explanation").is_null()) {
      if (!j.at("explanation").is_string()) {
        throw Error(ErrorKind::MalformedRecord, f.string() + ":" + std::to_string(line) + ": explanation");
      }
      c.explanation = j.at("explanation").get<std::string>();
      any_explanation = true;
    }
    any_nei = any_nei || c.label == kNei;
    d.claims.push_back(std::move(c));
  });
  for_each_jsonl(root / "evidence.jsonl", [&](const json& j, std::size_t line) {
    const fs::path f = root / "evidence.jsonl";
    EvidenceRecord e;
    e.id = required_string(j, "id", line, f);
    e.text = required_string(j, "text", line, f);
    e.image_ids = string_list(j, "image_ids", line, f);
    d.evidence.push_back(std::move(e));
  });

  std::vector<fs::path> pngs;
  for (const auto& entry : fs::directory_iterator(root / "images")) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") pngs.push_back(entry.path());
  }
  std::sort(pngs.begin(), pngs.end());
  for (const auto& p : pngs) {
    Raster r = read_png(p);
    ImageRecord img;
    img.id = p.stem().string();
    img.uri = "images/" + p.filename().string();
    img.height = r.height;
    img.width = r.width;
    img.channels = r.channels;
    img.pixels = std::move(r.pixels);
    d.images.push_back(std::move(img));
  }

  {
    std::ifstream in(root / "splits.json");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::MalformedRecord, (root / "splits.json").string() + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::MalformedRecord, "splits.json must be an object");
    for (const auto& [name, ids] : j.items()) {
      d.splits[name] = string_list(j, name.c_str(), 1, root / "splits.json");
      (void)ids;
    }
  }

  d.label_set = any_nei ? std::vector<std::string>{kSupport, kRefute, kNei} : std::vector<std::string>{kSupport, kRefute};
  d.has_explanations = any_explanation;
  if (fs::exists(root / "meta.json")) {
    std::ifstream in(root / "meta.json");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::MalformedRecord, (root / "meta.json").string() + ": " + e.what());
    }
    if (j.contains("label_set")) d.label_set = string_list(j, "label_set", 1, root / "meta.json");
    if (j.contains("explanations")) d.has_explanations = j.at("explanations").get<bool>();
  }

  ValidationReport report = validate_dataset(d, ValidationOptions{1, 3});
  if (!report.ok()) {
    const auto& first = report.errors.front();
    const bool dangling = std::any_of(report.errors.begin(), report.errors.end(), [](const ValidationIssue& i) {
      return i.message.find("dangling") != std::string::npos || i.message.find("empty") != std::string::npos;
    });
    throw Error(dangling ? ErrorKind::DanglingReference : ErrorKind::MalformedRecord,
                first.record_id + ": " + first.message + " (" + std::to_string(report.errors.size()) + " errors)");
  }
  return d;
}

void save_corpus(const Dataset& d, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + (root / "images").string());

  std::string claims;
  for (const auto& c : d.claims) {
    json j;
    j["id"] = c.id;
    j["text"] = c.text;
    j["image_ids"] = c.image_ids;
    j["gold_evidence_ids"] = c.gold_evidence_ids;
    j["label"] = c.label;
    if (c.explanation) j["explanation"] = *c.explanation;
    claims += j.dump() + "\n";
  }
  write_text(root / "claims.jsonl", claims);

  std::string evidence;
  for (const auto& e : d.evidence) {
    json j;
    j["id"] = e.id;
    j["text"] = e.text;
    j["image_ids"] = e.image_ids;
    evidence += j.dump() + "\n";
  }
  write_text(root / "evidence.jsonl", evidence);

  for (const auto& img : d.images) {
    write_png(root / "images" / (img.id + ".png"), Raster{img.height, img.width, img.channels, img.pixels});
  }

  json splits = json::object();
  for (const char* name : {"train", "val", "test"}) {
    if (auto it = d.splits.find(name); it != d.splits.end()) splits[name] = it->second;
  }
  for (const auto& [name, ids] : d.splits) {
    if (!splits.contains(name)) splits[name] = ids;
  }
  write_text(root / "splits.json", splits.dump() + "\n");

  json meta;
  meta["label_set"] = d.label_set;
  meta["explanations"] = d.has_explanations;
  write_text(root / "meta.json", meta.dump() + "\n");
}

ValidationReport validate_dataset(const Dataset& d, const ValidationOptions& opts) {
  ValidationReport r;
  auto error = [&](const std::string& id, std::string msg) { r.errors.push_back({id, std::move(msg)}); };
  r.counts["claims"] = d.claims.size();
  r.counts["evidence"] = d.evidence.size();
  r.counts["images"] = d.images.size();

  if (d.label_set.size() != 2 && d.label_set.size() != 3) {
    error("<dataset>", "label_set must hold 2 or 3 labels");
  }
  if (d.evidence.empty()) error("<dataset>", "evidence corpus is empty");

  std::set<std::string> image_ids, evidence_ids, claim_ids;
  for (const auto& img : d.images) {
    if (!image_ids.insert(img.id).second) error(img.id, "duplicate image id");
    if (img.height < opts.patch_size || img.width < opts.patch_size) {
      error(img.id, "image smaller than patch size " + std::to_string(opts.patch_size));
    }
    if (img.channels != opts.channels) {
      error(img.id, "image has " + std::to_string(img.channels) + " channels, expected " +
                        std::to_string(opts.channels));
    }
    if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * img.channels) {
      error(img.id, "pixel buffer size does not match height*width*channels");
    }
  }
  for (const auto& e : d.evidence) {
    if (!evidence_ids.insert(e.id).second) error(e.id, "duplicate evidence id");
    for (const auto& i : e.image_ids) {
      if (!image_ids.contains(i)) error(e.id, "dangling image reference '" + i + "'");
    }
  }
  for (const auto& c : d.claims) {
    if (!claim_ids.insert(c.id).second) error(c.id, "duplicate claim id");
    if (d.label_index(c.label) < 0) error(c.id, "label '" + c.label + "' not in label_set");
    for (const auto& i : c.image_ids) {
      if (!image_ids.contains(i)) error(c.id, "dangling image reference '" + i + "'");
    }
    for (const auto& e : c.gold_evidence_ids) {
      if (!evidence_ids.contains(e)) error(c.id, "dangling evidence reference '" + e + "'");
    }
    if (c.explanation.has_value() != d.has_explanations) {
      error(c.id, d.has_explanations ? "explanation missing" : "explanation present but dataset declares none");
    }
    if (c.label != kNei && c.gold_evidence_ids.empty()) r.warnings.push_back({c.id, "no gold evidence"});
  }

  std::set<std::string> seen;
  for (const auto& [name, ids] : d.splits) {
    for (const auto& id : ids) {
      if (!claim_ids.contains(id)) error(id, "split '" + name + "' holds dangling claim id");
      if (!seen.insert(id).second) error(id, "claim appears in more than one split");
    }
  }
  return r;
}

Dataset align_images(Dataset d, const TextImageSimilarity& sim, int top_k) {
  if (top_k < 1) throw Error(ErrorKind::InvalidArgument, "top_k must be >= 1");
  for (auto& e : d.evidence) {
    if (!e.image_ids.empty()) continue;
    if (d.images.empty()) throw Error(ErrorKind::EmptyImagePool, "evidence '" + e.id + "' needs alignment");
    std::vector<std::pair<double, const std::string*>> scored;
    scored.reserve(d.images.size());
    for (const auto& img : d.images) scored.emplace_back(sim(e.text, img), &img.id);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return *a.second < *b.second;
    });
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(top_k), scored.size());
    for (std::size_t i = 0; i < n; ++i) e.image_ids.push_back(*scored[i].second);
  }
  return d;
}

namespace {

std::string padded(const std::string& prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03d", prefix.c_str(), i);
  return buf;
}

// Colored bars on a dark background; content depends only on (seed, index).
ImageRecord render_bars(std::uint64_t seed, int index, int size) {
  std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(index) * 7919ULL + 17ULL);
  std::uniform_int_distribution<int> dark(0, 60), bright(120, 255), height(size / 4, size);
  ImageRecord img;
  img.id = padded("img", index);
  img.uri = "images/" + img.id + ".png";
  img.height = size;
  img.width = size;
  img.channels = 3;
  img.pixels.assign(static_cast<std::size_t>(size) * size * 3, 0);
  const std::uint8_t bg[3] = {static_cast<std::uint8_t>(dark(rng)), static_cast<std::uint8_t>(dark(rng)),
                              static_cast<std::uint8_t>(dark(rng))};
  for (int p = 0; p < size * size; ++p) {
    for (int ch = 0; ch < 3; ++ch) img.pixels[static_cast<std::size_t>(p) * 3 + ch] = bg[ch];
  }
  const int n_bars = 4;
  const int bar_w = std::max(1, size / n_bars);
  for (int b = 0; b < n_bars; ++b) {
    const int h = height(rng);
    const std::uint8_t col[3] = {static_cast<std::uint8_t>(bright(rng)), static_cast<std::uint8_t>(bright(rng)),
                                 static_cast<std::uint8_t>(bright(rng))};
    for (int y = size - h; y < size; ++y) {
      for (int x = b * bar_w; x < std::min(size, (b + 1) * bar_w - (bar_w > 1 ? 1 : 0)); ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          img.pixels[(static_cast<std::size_t>(y) * size + x) * 3 + ch] = col[ch];
        }
      }
    }
  }
  return img;
}

}  // namespace

Dataset generate_synthetic(const SyntheticOptions& o) {
  if (o.n_claims < 1 || o.n_evidence < 1 || o.n_images < 1) {
    throw Error(ErrorKind::InvalidArgument, "synthetic counts must be >= 1");
  }
  if (o.vocab < 10) throw Error(ErrorKind::InvalidArgument, "synthetic vocab must be >= 10");

  std::mt19937_64 rng(o.seed);
  Dataset d;
  d.label_set = o.with_nei ? std::vector<std::string>{kSupport, kRefute, kNei}
                           : std::vector<std::string>{kSupport, kRefute};
  d.has_explanations = o.with_explanations;

  std::vector<std::string> pool;
  for (int i = 0; i < o.vocab; ++i) pool.push_back(padded("kw", i));
  std::shuffle(pool.begin(), pool.end(), rng);

  for (int k = 0; k < o.n_images; ++k) d.images.push_back(render_bars(o.seed, k, o.image_size));

  // Evidence come in pairs sharing topic words and wording.
  const int n_groups = (o.n_evidence + 1) / 2;
  struct Group {
    std::string a, b, dir, opposite;
  };
  std::vector<Group> groups;
  for (int g = 0; g < n_groups; ++g) {
    const bool rises = (rng() & 1ULL) != 0;
    groups.push_back({pool[static_cast<std::size_t>(2 * g) % pool.size()],
                      pool[static_cast<std::size_t>(2 * g + 1) % pool.size()], rises ? "rises" : "falls",
                      rises ? "falls" : "rises"});
  }
  for (int m = 0; m < o.n_evidence; ++m) {
    const Group& g = groups[static_cast<std::size_t>(m / 2)];
    EvidenceRecord e;
    e.id = padded("ev", m);
    e.text = "the chart of " + g.a + " " + g.b + " shows the value " + g.dir;
    e.image_ids = {padded("img", m % o.n_images)};
    d.evidence.push_back(std::move(e));
  }

  const int n_labels = static_cast<int>(d.label_set.size());
  int non_nei = 0;
  int nei = 0;
  for (int j = 0; j < o.n_claims; ++j) {
    ClaimRecord c;
    c.id = padded("cl", j);
    c.label = d.label_set[static_cast<std::size_t>(j % n_labels)];
    if (c.label == kNei) {
      const std::string x = pool[static_cast<std::size_t>(2 * n_groups + 2 * nei) % pool.size()];
      const std::string y = pool[static_cast<std::size_t>(2 * n_groups + 2 * nei + 1) % pool.size()];
      c.text = "the " + x + " " + y + " value is unknown";
      if (o.with_explanations) c.explanation = "the evidence does not mention " + x + " " + y;
      ++nei;
    } else {
      const int m = (non_nei / 2) % o.n_evidence;
      const Group& g = groups[static_cast<std::size_t>(m / 2)];
      const bool support = c.label == kSupport;
      c.text = "the " + g.a + " " + g.b + " value " + (support ? g.dir : g.opposite);
      c.gold_evidence_ids = {d.evidence[static_cast<std::size_t>(m)].id};
      c.image_ids = d.evidence[static_cast<std::size_t>(m)].image_ids;
      if (o.with_explanations) {
        c.explanation = "the chart shows " + g.a + " " + g.b + " " + g.dir + " so the claim is " +
                        (support ? "supported" : "refuted");
      }
      ++non_nei;
    }
    d.claims.push_back(std::move(c));
  }
  for (const auto& c : d.claims) d.splits["train"].push_back(c.id);
  return d;
}

Dataset split_dataset(Dataset d, double train, double val, std::uint64_t seed) {
  if (!(train > 0.0 && train < 1.0) || !(val >= 0.0 && val < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "split fractions out of range");
  }
  std::vector<std::string> ids;
  for (const auto& c : d.claims) ids.push_back(c.id);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const auto n = static_cast<long>(ids.size());
  const long n_trainval = std::lround(train * static_cast<double>(n));
  const long n_val = std::lround(val * static_cast<double>(n_trainval));
  const long n_train = n_trainval - n_val;
  const long n_test = n - n_trainval;
  if (n_train < 1 || n_test < 1 || (val > 0.0 && n_val < 1)) {
    throw Error(ErrorKind::TooFewClaims, std::to_string(n) + " claims cannot fill every split");
  }
  d.splits.clear();
  d.splits["train"].assign(ids.begin(), ids.begin() + n_train);
  d.splits["val"].assign(ids.begin() + n_train, ids.begin() + n_trainval);
  d.splits["test"].assign(ids.begin() + n_trainval, ids.end());
  return d;
}

}  // namespace mever::data

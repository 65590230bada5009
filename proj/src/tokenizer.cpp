#include "mever/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "mever/error.hpp"

namespace mever {

Vocabulary::Vocabulary() {
  for (const char* w : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"}) add(w);
}

void Vocabulary::add(const std::string& w) {
  if (index_.contains(w)) return;
  index_.emplace(w, static_cast<int>(words_.size()));
  words_.push_back(w);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : split(t)) words.insert(std::move(w));
  }
  Vocabulary v;
  for (const auto& w : words) v.add(w);
  return v;
}

Vocabulary Vocabulary::synthetic(int size) {
  if (size < kNumSpecial) throw Error(ErrorKind::InvalidArgument, "vocabulary smaller than special set");
  Vocabulary v;
  for (int i = kNumSpecial; i < size; ++i) v.add("w" + std::to_string(i));
  return v;
}

std::vector<std::string> Vocabulary::split(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (i < kNumSpecial || i >= size()) continue;
    if (!out.empty()) out.push_back(' ');
    out += words_[static_cast<std::size_t>(i)];
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& w : words_) {
    out += w;
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::deserialize(const std::string& text) {
  Vocabulary v;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (n++ < kNumSpecial) continue;
    v.add(line);
  }
  return v;
}

}  // namespace mever

#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mever {

// Whitespace + lowercase word vocabulary with fixed special ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kBos = 4;
  static constexpr int kEos = 5;
  static constexpr int kNumSpecial = 6;

  Vocabulary();

  // Specials first, then every distinct word of `texts` in sorted order.
  static Vocabulary build(const std::vector<std::string>& texts);
  // Specials plus placeholder words, for fixed-size test models.
  static Vocabulary synthetic(int size);

  static std::vector<std::string> split(std::string_view text);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;  // drops special ids

  int size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

  // One word per line, specials included.
  std::string serialize() const;
  static Vocabulary deserialize(const std::string& text);

 private:
  void add(const std::string& w);

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace mever

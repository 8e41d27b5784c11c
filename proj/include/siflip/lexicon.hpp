#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "siflip/errors.hpp"

namespace siflip {

/// Ordered word vocabulary; ids are positions in `words()`.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second) throw LexiconError("duplicate lexicon entry: " + words_[i]);
    }
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  bool contains(const std::string& w) const { return index_.count(w) != 0; }

  std::size_t id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) throw LexiconError("word not in lexicon: '" + w + "'");
    return it->second;
  }

  const std::string& word(std::size_t id) const {
    if (id >= words_.size()) throw LexiconError("token id " + std::to_string(id) + " outside lexicon");
    return words_[id];
  }

  std::vector<std::size_t> ids(const std::vector<std::string>& ws) const {
    std::vector<std::size_t> out;
    out.reserve(ws.size());
    for (const auto& w : ws) out.push_back(id(w));
    return out;
  }

  /// First `n` entries of a fixed GRID-style word list, padded with w<k>.
  static Lexicon standard(std::size_t n) {
    static const char* kWords[] = {"bin",  "lay",  "place", "set",   "blue",  "green", "red",   "white", "at",
                                   "by",   "in",   "with",  "zero",  "one",   "two",   "three", "four",  "five",
                                   "six",  "seven", "eight", "nine", "again", "now",   "please", "soon", "then",
                                   "over", "under", "left", "right", "up",   "down",  "stop",  "go",    "wait"};
    constexpr std::size_t kCount = sizeof(kWords) / sizeof(kWords[0]);
    std::vector<std::string> ws;
    for (std::size_t i = 0; i < n; ++i) ws.push_back(i < kCount ? std::string(kWords[i]) : "w" + std::to_string(i));
    return Lexicon(std::move(ws));
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace siflip

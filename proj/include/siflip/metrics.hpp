#pragma once

// Levenshtein distance and the character / word error rates built on it.

#include <algorithm>
#include <string>
#include <vector>

#include "siflip/lexicon.hpp"

namespace siflip {

/// Minimal number of unit-cost insertions, deletions and substitutions.
template <typename Seq>
std::size_t edit_distance(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// Word ids spelled out as characters, words separated by single spaces.
inline std::string spell(const std::vector<std::size_t>& words, const Lexicon& lexicon) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += lexicon.word(words[i]);
  }
  return out;
}

/// Accumulates edit distances and reference lengths across samples.
struct ErrorCounts {
  std::size_t char_errors = 0;
  std::size_t char_total = 0;
  std::size_t word_errors = 0;
  std::size_t word_total = 0;

  void add(const std::vector<std::size_t>& ref, const std::vector<std::size_t>& hyp, const Lexicon& lexicon) {
    char_errors += edit_distance(spell(ref, lexicon), spell(hyp, lexicon));
    char_total += spell(ref, lexicon).size();
    word_errors += edit_distance(ref, hyp);
    word_total += ref.size();
  }

  double cer() const { return char_total ? static_cast<double>(char_errors) / static_cast<double>(char_total) : 0.0; }
  double wer() const { return word_total ? static_cast<double>(word_errors) / static_cast<double>(word_total) : 0.0; }
};

}  // namespace siflip

#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "siflip/metrics.hpp"

using namespace siflip;

namespace {

// Exponential-time recursion over the last symbol of each sequence.
std::size_t naive_distance(const std::string& a, const std::string& b) {
  std::function<std::size_t(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    return std::min({d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1)});
  };
  return d(a.size(), b.size());
}

}  // namespace

TEST(EditDistance, KnownPairs) {
  EXPECT_EQ(edit_distance(std::string("kitten"), std::string("sitting")), 3u);
  EXPECT_EQ(edit_distance(std::string(""), std::string("abc")), 3u);
  EXPECT_EQ(edit_distance(std::string("abc"), std::string("")), 3u);
  EXPECT_EQ(edit_distance(std::string("same"), std::string("same")), 0u);
  EXPECT_EQ(edit_distance(std::vector<std::size_t>{1, 2, 3}, std::vector<std::size_t>{1, 3}), 1u);
}

TEST(EditDistance, MatchesRecursiveOracleExhaustively) {
  // Every pair of strings over {a, b} up to length 4.
  std::vector<std::string> all{""};
  for (std::size_t len = 1; len <= 4; ++len)
    for (std::size_t bits = 0; bits < (1u << len); ++bits) {
      std::string s;
      for (std::size_t k = 0; k < len; ++k) s += (bits >> k) & 1 ? 'b' : 'a';
      all.push_back(s);
    }
  for (const auto& a : all)
    for (const auto& b : all) {
      const auto d = edit_distance(a, b);
      ASSERT_EQ(d, naive_distance(a, b)) << a << " / " << b;
      ASSERT_EQ(d, edit_distance(b, a));
    }
}

TEST(EditDistance, TriangleInequalityOnRandomStrings) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(0, 8), ch(0, 2);
  auto rand_str = [&] {
    std::string s(len(rng), 'a');
    for (auto& c : s) c = static_cast<char>('a' + ch(rng));
    return s;
  };
  for (int k = 0; k < 300; ++k) {
    const auto a = rand_str(), b = rand_str(), c = rand_str();
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
    EXPECT_LE(edit_distance(a, b), std::max(a.size(), b.size()));
  }
}

TEST(ErrorCounts, PerfectAndEmptyHypotheses) {
  const Lexicon lex({"red", "go", "blue"});
  ErrorCounts perfect;
  perfect.add({0, 1}, {0, 1}, lex);
  EXPECT_EQ(perfect.cer(), 0.0);
  EXPECT_EQ(perfect.wer(), 0.0);

  ErrorCounts empty;
  empty.add({0, 1}, {}, lex);
  EXPECT_EQ(empty.cer(), 1.0);
  EXPECT_EQ(empty.wer(), 1.0);
  EXPECT_EQ(empty.char_total, 6u);  // "red go"
}

TEST(ErrorCounts, AggregatesOverSamplesBeforeDividing) {
  const Lexicon lex({"red", "go", "blue"});
  ErrorCounts c;
  c.add({0}, {1}, lex);        // "red" -> "go": 3 edits over 3 chars
  c.add({1, 2}, {1, 2}, lex);  // 0 edits over 7 chars
  EXPECT_EQ(c.char_errors, 3u);
  EXPECT_EQ(c.char_total, 10u);
  EXPECT_DOUBLE_EQ(c.cer(), 0.3);
  EXPECT_DOUBLE_EQ(c.wer(), 1.0 / 3.0);
  EXPECT_EQ(spell({2, 0}, lex), "blue red");
  EXPECT_EQ(ErrorCounts{}.cer(), 0.0);
}

#pragma once

// Frame-level labels from word boundaries, negative pseudo-label sequences,
// and the forced-aligner style boundary TSV format.

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "siflip/errors.hpp"
#include "siflip/lexicon.hpp"
#include "siflip/rng.hpp"

namespace siflip {

/// Inclusive frame span of one word.
struct WordSpan {
  std::size_t token = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const WordSpan&) const = default;
};

struct WordBoundaries {
  std::vector<WordSpan> entries;
  bool operator==(const WordBoundaries&) const = default;
};

/// One row of a boundary file before lexicon lookup.
struct NamedSpan {
  std::string token;
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const NamedSpan&) const = default;
};

enum class Polarity { positive, negative };

struct LabelSequence {
  std::vector<std::size_t> labels;
  Polarity polarity = Polarity::positive;

  std::size_t size() const { return labels.size(); }
};

/// Throws AlignmentError unless spans are ordered and tile [0, frames-1].
inline void validate_tiling(const WordBoundaries& b, std::size_t frames) {
  if (b.entries.empty()) throw AlignmentError("no word boundaries");
  std::size_t expect = 0;
  for (std::size_t i = 0; i < b.entries.size(); ++i) {
    const auto& e = b.entries[i];
    if (e.end < e.start) throw AlignmentError("span " + std::to_string(i) + " ends before it starts");
    if (e.start > expect) throw AlignmentError("gap before frame " + std::to_string(e.start) + " (span " + std::to_string(i) + ")");
    if (e.start < expect) throw AlignmentError("span " + std::to_string(i) + " overlaps the previous span at frame " + std::to_string(e.start));
    expect = e.end + 1;
  }
  if (expect != frames)
    throw AlignmentError("boundaries cover " + std::to_string(expect) + " frames but the sample has " + std::to_string(frames));
}

/// Expands word spans into one token label per frame.
inline LabelSequence assign_frame_labels(const WordBoundaries& b, std::size_t frames) {
  validate_tiling(b, frames);
  LabelSequence out;
  out.labels.reserve(frames);
  for (const auto& e : b.entries) out.labels.insert(out.labels.end(), e.end - e.start + 1, e.token);
  return out;
}

/// Variant that also checks the span tokens against the sentence.
inline LabelSequence assign_frame_labels(const WordBoundaries& b, const std::vector<std::size_t>& words, std::size_t frames) {
  if (b.entries.size() != words.size())
    throw AlignmentError("boundary count " + std::to_string(b.entries.size()) + " does not match word count " + std::to_string(words.size()));
  for (std::size_t i = 0; i < words.size(); ++i)
    if (b.entries[i].token != words[i]) throw AlignmentError("span " + std::to_string(i) + " token does not match the sentence");
  return assign_frame_labels(b, frames);
}

/// Maximal runs of equal labels as (start, end) inclusive.
inline std::vector<std::pair<std::size_t, std::size_t>> label_runs(const std::vector<std::size_t>& labels) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i == 0 || labels[i] != labels[i - 1]) runs.emplace_back(i, i);
    else runs.back().second = i;
  }
  return runs;
}

struct NegativeOptions {
  /// Draw a fresh replacement per frame instead of per word span.
  bool per_frame = false;
  /// Also exclude the previous span's replacement so adjacent runs never merge.
  bool avoid_adjacent_collisions = false;
};

/// Replaces every word span with a different lexicon token; every frame of the
/// result differs from the positive label at that frame.
inline LabelSequence make_negative_labels(const LabelSequence& positive, std::size_t lexicon_size, Rng& rng,
                                          NegativeOptions opts = {}) {
  if (lexicon_size < 2) throw LexiconError("cannot build negative labels from a lexicon with fewer than 2 words");
  if (opts.avoid_adjacent_collisions && lexicon_size < 3)
    throw LexiconError("collision-avoiding negatives need a lexicon of at least 3 words");
  for (auto l : positive.labels)
    if (l >= lexicon_size) throw LexiconError("label " + std::to_string(l) + " outside lexicon");
  LabelSequence out;
  out.polarity = Polarity::negative;
  out.labels.resize(positive.size());

  // Uniform draw from [0, V) minus up to two excluded ids.
  auto draw = [&](std::size_t a, std::size_t b) {
    std::vector<std::size_t> excl{a};
    if (b != a && b < lexicon_size) excl.push_back(b);
    std::sort(excl.begin(), excl.end());
    std::uniform_int_distribution<std::size_t> dist(0, lexicon_size - excl.size() - 1);
    std::size_t k = dist(rng);
    for (auto e : excl)
      if (k >= e) ++k;
    return k;
  };

  if (opts.per_frame) {
    for (std::size_t i = 0; i < positive.size(); ++i) out.labels[i] = draw(positive.labels[i], positive.labels[i]);
    return out;
  }
  std::size_t prev = lexicon_size;  // sentinel: no previous replacement
  for (auto [s, e] : label_runs(positive.labels)) {
    const std::size_t orig = positive.labels[s];
    const std::size_t rep = draw(orig, opts.avoid_adjacent_collisions ? prev : orig);
    std::fill(out.labels.begin() + static_cast<long>(s), out.labels.begin() + static_cast<long>(e) + 1, rep);
    prev = rep;
  }
  return out;
}

/// Parses `token<TAB>start<TAB>end` lines; rows must be ordered and disjoint.
inline std::vector<NamedSpan> parse_boundary_text(std::istream& in, const std::string& source = "<stream>") {
  std::vector<NamedSpan> rows;
  std::vector<std::size_t> line_of;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3 || fields[0].empty())
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected 'token<TAB>start<TAB>end'");
    NamedSpan span;
    span.token = fields[0];
    try {
      std::size_t used = 0;
      span.start = std::stoul(fields[1], &used);
      if (used != fields[1].size() || fields[1][0] == '-') throw std::invalid_argument("start");
      span.end = std::stoul(fields[2], &used);
      if (used != fields[2].size() || fields[2][0] == '-') throw std::invalid_argument("end");
    } catch (const std::exception&) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": frame indices must be non-negative integers");
    }
    if (span.end < span.start) throw ParseError(source + ":" + std::to_string(lineno) + ": end frame precedes start frame");
    if (!rows.empty()) {
      const auto& prev = rows.back();
      if (span.start <= prev.end)
        throw AlignmentError(source + ": row " + std::to_string(lineno) + " (" + span.token + " " + std::to_string(span.start) +
                             "-" + std::to_string(span.end) + ") is out of order or overlaps row " +
                             std::to_string(line_of.back()) + " (" + prev.token + " " + std::to_string(prev.start) + "-" +
                             std::to_string(prev.end) + ")");
    }
    rows.push_back(std::move(span));
    line_of.push_back(lineno);
  }
  return rows;
}

inline std::vector<NamedSpan> parse_boundary_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open boundary file: " + path);
  return parse_boundary_text(in, path);
}

inline std::string format_boundaries(const std::vector<NamedSpan>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.token + "\t" + std::to_string(r.start) + "\t" + std::to_string(r.end) + "\n";
  return out;
}

inline void write_boundary_file(const std::string& path, const std::vector<NamedSpan>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write boundary file: " + path);
  out << format_boundaries(rows);
}

inline WordBoundaries resolve_boundaries(const std::vector<NamedSpan>& rows, const Lexicon& lexicon) {
  WordBoundaries b;
  for (const auto& r : rows) b.entries.push_back({lexicon.id(r.token), r.start, r.end});
  return b;
}

inline std::vector<NamedSpan> name_boundaries(const WordBoundaries& b, const Lexicon& lexicon) {
  std::vector<NamedSpan> rows;
  for (const auto& e : b.entries) rows.push_back({lexicon.word(e.token), e.start, e.end});
  return rows;
}

}  // namespace siflip

#pragma once

// Factorized synthetic lipreading corpus: each frame is a speaker-scaled word
// motion template plus a fixed per-speaker appearance offset plus pixel noise.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "siflip/alignment.hpp"
#include "siflip/config_io.hpp"
#include "siflip/errors.hpp"
#include "siflip/lexicon.hpp"
#include "siflip/rng.hpp"

namespace siflip {

struct GenConfig {
  std::size_t speakers = 5;
  std::size_t unseen = 2;
  std::size_t vocab = 20;
  std::size_t min_words = 2;
  std::size_t max_words = 4;
  std::size_t min_frames_per_word = 3;
  std::size_t max_frames_per_word = 6;
  std::size_t t_max = 32;
  std::size_t height = 16;
  std::size_t width = 16;
  /// > 0 switches to flat-feature frames of this many values (height 1).
  std::size_t flat_dim = 0;
  double noise = 0.05;
  double template_scale = 1.0;
  double appearance_scale = 1.0;
  double gain_min = 0.8;
  double gain_max = 1.2;
  std::size_t template_keyframes = 3;
  std::size_t pattern_components = 4;
  std::size_t train_per_speaker = 200;
  std::size_t seen_test_per_speaker = 40;
  std::size_t unseen_per_speaker = 60;

  std::size_t frame_height() const { return flat_dim > 0 ? 1 : height; }
  std::size_t frame_width() const { return flat_dim > 0 ? flat_dim : width; }
  std::size_t frame_size() const { return frame_height() * frame_width(); }
  std::size_t seen_speakers() const { return speakers - unseen; }

  void validate() const {
    if (speakers < 3) throw ConfigError("speakers must be >= 3");
    if (unseen >= speakers) throw ConfigError("unseen speakers (" + std::to_string(unseen) + ") must be fewer than speakers (" + std::to_string(speakers) + ")");
    if (vocab < 4) throw ConfigError("vocab must be >= 4");
    if (min_words < 1 || min_words > max_words) throw ConfigError("need 1 <= min_words <= max_words");
    if (min_frames_per_word < 1 || min_frames_per_word > max_frames_per_word)
      throw ConfigError("need 1 <= min_frames_per_word <= max_frames_per_word");
    if (max_words * max_frames_per_word > t_max)
      throw ConfigError("t_max " + std::to_string(t_max) + " cannot fit the longest sentence (" +
                        std::to_string(max_words * max_frames_per_word) + " frames)");
    if (frame_size() == 0) throw ConfigError("frames must have at least one value");
    if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
    if (!(appearance_scale >= 0.0) || !(template_scale >= 0.0)) throw ConfigError("scales must be >= 0");
    if (!(gain_min > 0.0) || gain_max < gain_min) throw ConfigError("need 0 < gain_min <= gain_max");
    if (template_keyframes < 1 || pattern_components < 1) throw ConfigError("template_keyframes and pattern_components must be >= 1");
  }

  OrderedJson to_json() const {
    return OrderedJson{{"speakers", speakers},
                       {"unseen", unseen},
                       {"vocab", vocab},
                       {"min_words", min_words},
                       {"max_words", max_words},
                       {"min_frames_per_word", min_frames_per_word},
                       {"max_frames_per_word", max_frames_per_word},
                       {"t_max", t_max},
                       {"height", height},
                       {"width", width},
                       {"flat_dim", flat_dim},
                       {"noise", noise},
                       {"template_scale", template_scale},
                       {"appearance_scale", appearance_scale},
                       {"gain_min", gain_min},
                       {"gain_max", gain_max},
                       {"template_keyframes", template_keyframes},
                       {"pattern_components", pattern_components},
                       {"train_per_speaker", train_per_speaker},
                       {"seen_test_per_speaker", seen_test_per_speaker},
                       {"unseen_per_speaker", unseen_per_speaker}};
  }

  static GenConfig from_json(const Json& j) {
    reject_unknown_keys(j, "generator",
                        {"speakers", "unseen", "vocab", "min_words", "max_words", "min_frames_per_word",
                         "max_frames_per_word", "t_max", "height", "width", "flat_dim", "noise", "template_scale",
                         "appearance_scale", "gain_min", "gain_max", "template_keyframes", "pattern_components",
                         "train_per_speaker", "seen_test_per_speaker", "unseen_per_speaker"});
    GenConfig c;
    read_field(j, "speakers", c.speakers);
    read_field(j, "unseen", c.unseen);
    read_field(j, "vocab", c.vocab);
    read_field(j, "min_words", c.min_words);
    read_field(j, "max_words", c.max_words);
    read_field(j, "min_frames_per_word", c.min_frames_per_word);
    read_field(j, "max_frames_per_word", c.max_frames_per_word);
    read_field(j, "t_max", c.t_max);
    read_field(j, "height", c.height);
    read_field(j, "width", c.width);
    read_field(j, "flat_dim", c.flat_dim);
    read_field(j, "noise", c.noise);
    read_field(j, "template_scale", c.template_scale);
    read_field(j, "appearance_scale", c.appearance_scale);
    read_field(j, "gain_min", c.gain_min);
    read_field(j, "gain_max", c.gain_max);
    read_field(j, "template_keyframes", c.template_keyframes);
    read_field(j, "pattern_components", c.pattern_components);
    read_field(j, "train_per_speaker", c.train_per_speaker);
    read_field(j, "seen_test_per_speaker", c.seen_test_per_speaker);
    read_field(j, "unseen_per_speaker", c.unseen_per_speaker);
    return c;
  }
};

enum class Split { train, seen_test, unseen_test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::seen_test: return "seen_test";
    case Split::unseen_test: return "unseen_test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "seen_test") return Split::seen_test;
  if (s == "unseen_test") return Split::unseen_test;
  throw ConfigError("unknown split '" + s + "' (expected train, seen_test or unseen_test)");
}

struct SpeakerProfile {
  std::size_t speaker_id = 0;
  std::vector<double> appearance_offset;  // one value per frame pixel
  double articulation_gain = 1.0;
};

/// Keyframes of one word's motion, each a full frame.
struct WordTemplate {
  std::vector<std::vector<double>> keyframes;
};

struct VideoSample {
  std::vector<float> frames;  // T x H x W, row-major
  std::size_t length = 0;     // T
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t speaker_id = 0;
  std::vector<std::size_t> words;
  WordBoundaries boundaries;  // entry i covers words[i]
  Split split = Split::train;
  std::string path;

  std::size_t frame_size() const { return height * width; }
};

struct RenderedUtterance {
  std::vector<float> frames;
  std::size_t length = 0;
  WordBoundaries boundaries;
};

/// Low-frequency random pattern with unit RMS: a sum of a few 2-D cosines.
inline std::vector<double> smooth_pattern(std::size_t h, std::size_t w, std::size_t components, Rng& rng) {
  std::normal_distribution<double> amp(0.0, 1.0);
  std::uniform_int_distribution<int> freq(0, 2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> out(h * w, 0.0);
  for (std::size_t k = 0; k < components; ++k) {
    const double a = amp(rng);
    const double fy = h > 1 ? freq(rng) : 0.0;
    const double fx = freq(rng);
    const double ph = phase(rng);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[y * w + x] += a * std::cos(2.0 * std::numbers::pi * (fx * static_cast<double>(x) / static_cast<double>(w) +
                                                                  fy * static_cast<double>(y) / static_cast<double>(h)) +
                                       ph);
  }
  double ss = 0.0;
  for (double v : out) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(out.size()));
  if (rms > 0.0)
    for (auto& v : out) v /= rms;
  return out;
}

inline std::vector<WordTemplate> make_templates(const GenConfig& cfg, std::uint64_t seed) {
  std::vector<WordTemplate> out(cfg.vocab);
  for (std::size_t w = 0; w < cfg.vocab; ++w) {
    Rng rng = derive_stream(seed, "template", w);
    for (std::size_t k = 0; k < cfg.template_keyframes; ++k) {
      auto p = smooth_pattern(cfg.frame_height(), cfg.frame_width(), cfg.pattern_components, rng);
      for (auto& v : p) v *= cfg.template_scale;
      out[w].keyframes.push_back(std::move(p));
    }
  }
  return out;
}

inline SpeakerProfile make_speaker(const GenConfig& cfg, std::uint64_t seed, std::size_t id) {
  Rng rng = derive_stream(seed, "speaker", id);
  SpeakerProfile p;
  p.speaker_id = id;
  std::uniform_real_distribution<double> gain(cfg.gain_min, cfg.gain_max);
  p.articulation_gain = cfg.gain_min == cfg.gain_max ? cfg.gain_min : gain(rng);
  p.appearance_offset = smooth_pattern(cfg.frame_height(), cfg.frame_width(), cfg.pattern_components, rng);
  for (auto& v : p.appearance_offset) v *= cfg.appearance_scale;
  return p;
}

/// Renders words back to back; each word lasts a uniform number of frames in
/// [min_frames_per_word, max_frames_per_word] and follows its template,
/// linearly interpolated between keyframes.
inline RenderedUtterance render_utterance(const SpeakerProfile& profile, const std::vector<std::size_t>& words,
                                          const std::vector<WordTemplate>& templates, const GenConfig& cfg, Rng& rng) {
  const std::size_t fs = cfg.frame_size();
  if (profile.appearance_offset.size() != fs) throw ConfigError("appearance offset size does not match frame size");
  RenderedUtterance out;
  std::uniform_int_distribution<std::size_t> span(cfg.min_frames_per_word, cfg.max_frames_per_word);
  std::size_t t = 0;
  for (auto w : words) {
    if (w >= templates.size()) throw LexiconError("word id " + std::to_string(w) + " not in lexicon");
    const std::size_t len = span(rng);
    out.boundaries.entries.push_back({w, t, t + len - 1});
    t += len;
  }
  out.length = t;
  out.frames.resize(t * fs);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (const auto& e : out.boundaries.entries) {
    const auto& keys = templates[e.token].keyframes;
    const std::size_t len = e.end - e.start + 1;
    for (std::size_t f = 0; f < len; ++f) {
      const double phase = (static_cast<double>(f) + 0.5) / static_cast<double>(len) * static_cast<double>(keys.size() - 1);
      const std::size_t k0 = std::min(static_cast<std::size_t>(phase), keys.size() - 1);
      const std::size_t k1 = std::min(k0 + 1, keys.size() - 1);
      const double a = phase - static_cast<double>(k0);
      float* dst = out.frames.data() + (e.start + f) * fs;
      for (std::size_t p = 0; p < fs; ++p) {
        const double m = (1.0 - a) * keys[k0][p] + a * keys[k1][p];
        double v = profile.articulation_gain * m + profile.appearance_offset[p];
        if (cfg.noise > 0.0) v += cfg.noise * noise(rng);
        dst[p] = static_cast<float>(v);
      }
    }
  }
  return out;
}

struct Corpus {
  GenConfig config;
  std::uint64_t seed = 0;
  Lexicon lexicon;
  std::vector<SpeakerProfile> speakers;
  std::vector<VideoSample> samples;
  std::string fingerprint;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].split == s) out.push_back(i);
    return out;
  }

  std::set<std::size_t> speakers_in(Split s) const {
    std::set<std::size_t> out;
    for (const auto& x : samples)
      if (x.split == s) out.insert(x.speaker_id);
    return out;
  }
};

inline std::string config_fingerprint(const GenConfig& cfg, std::uint64_t seed) {
  std::uint64_t h = fnv1a(cfg.to_json().dump());
  h = fnv1a(&seed, sizeof(seed), h);
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

inline std::string sample_file_name(std::size_t index) {
  std::ostringstream ss;
  ss << "samples/" << std::setw(6) << std::setfill('0') << index << ".bin";
  return ss.str();
}

/// Builds the whole corpus in memory.  The last `unseen` speaker ids are held
/// out; each sample draws from its own stream keyed by (seed, sample index).
inline Corpus generate_corpus(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Corpus c;
  c.config = cfg;
  c.seed = seed;
  c.lexicon = Lexicon::standard(cfg.vocab);
  c.fingerprint = config_fingerprint(cfg, seed);
  const auto templates = make_templates(cfg, seed);
  for (std::size_t s = 0; s < cfg.speakers; ++s) c.speakers.push_back(make_speaker(cfg, seed, s));

  std::size_t index = 0;
  for (std::size_t s = 0; s < cfg.speakers; ++s) {
    const bool held_out = s >= cfg.seen_speakers();
    std::vector<std::pair<Split, std::size_t>> plan;
    if (held_out) plan.emplace_back(Split::unseen_test, cfg.unseen_per_speaker);
    else {
      plan.emplace_back(Split::train, cfg.train_per_speaker);
      plan.emplace_back(Split::seen_test, cfg.seen_test_per_speaker);
    }
    for (auto [split, count] : plan)
      for (std::size_t k = 0; k < count; ++k, ++index) {
        Rng rng = derive_stream(seed, "sample", index);
        std::uniform_int_distribution<std::size_t> nwords(cfg.min_words, cfg.max_words);
        std::uniform_int_distribution<std::size_t> word(0, cfg.vocab - 1);
        VideoSample v;
        v.words.resize(nwords(rng));
        for (auto& w : v.words) w = word(rng);
        auto r = render_utterance(c.speakers[s], v.words, templates, cfg, rng);
        v.frames = std::move(r.frames);
        v.length = r.length;
        v.boundaries = std::move(r.boundaries);
        v.height = cfg.frame_height();
        v.width = cfg.frame_width();
        v.speaker_id = s;
        v.split = split;
        v.path = sample_file_name(index);
        c.samples.push_back(std::move(v));
      }
  }
  return c;
}

/// Throws PipelineError if any unseen_test speaker also appears in train.
inline void check_split_hygiene(const Corpus& c) {
  const auto train = c.speakers_in(Split::train);
  for (auto s : c.speakers_in(Split::unseen_test))
    if (train.count(s)) throw PipelineError("speaker " + std::to_string(s) + " is in both train and unseen_test");
}

// ---------------------------------------------------------------- on-disk format
// Sample file: "SFLV", u32 version, u8 dtype (4 = float32), u8 ndim, u16 zero,
// ndim x u64 dims, then little-endian float32 data.

inline void write_sample_file(const std::filesystem::path& path, const VideoSample& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write sample file: " + path.string());
  const char magic[4] = {'S', 'F', 'L', 'V'};
  const std::uint32_t version = 1;
  const std::uint8_t dtype = 4, ndim = 3;
  const std::uint16_t pad = 0;
  const std::uint64_t dims[3] = {v.length, v.height, v.width};
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&dtype), 1);
  out.write(reinterpret_cast<const char*>(&ndim), 1);
  out.write(reinterpret_cast<const char*>(&pad), sizeof pad);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(v.frames.data()), static_cast<std::streamsize>(v.frames.size() * sizeof(float)));
}

inline void read_sample_file(const std::filesystem::path& path, VideoSample& v) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open sample file: " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint8_t dtype = 0, ndim = 0;
  std::uint16_t pad = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&dtype), 1);
  in.read(reinterpret_cast<char*>(&ndim), 1);
  in.read(reinterpret_cast<char*>(&pad), sizeof pad);
  if (!in || std::memcmp(magic, "SFLV", 4) != 0 || version != 1 || dtype != 4 || ndim != 3)
    throw ParseError("bad sample file header: " + path.string());
  std::uint64_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  v.length = dims[0];
  v.height = dims[1];
  v.width = dims[2];
  v.frames.resize(v.length * v.height * v.width);
  in.read(reinterpret_cast<char*>(v.frames.data()), static_cast<std::streamsize>(v.frames.size() * sizeof(float)));
  if (!in) throw ParseError("truncated sample file: " + path.string());
}

inline OrderedJson manifest_record(const VideoSample& v, const Lexicon& lexicon) {
  OrderedJson words = OrderedJson::array(), bounds = OrderedJson::array(), labels = OrderedJson::array();
  for (auto w : v.words) words.push_back(lexicon.word(w));
  for (std::size_t i = 0; i < v.boundaries.entries.size(); ++i) {
    const auto& e = v.boundaries.entries[i];
    bounds.push_back({i, e.start, e.end});
  }
  for (auto l : assign_frame_labels(v.boundaries, v.words, v.length).labels) labels.push_back(l);
  return OrderedJson{{"sample_path", v.path},
                     {"speaker_id", v.speaker_id},
                     {"words", words},
                     {"boundaries", bounds},
                     {"split", split_name(v.split)},
                     {"labels", labels}};
}

/// Writes samples/, manifest.jsonl and corpus.json under `dir`.
inline void write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw Error("cannot write manifest in " + dir.string());
  for (const auto& v : c.samples) {
    write_sample_file(dir / v.path, v);
    manifest << manifest_record(v, c.lexicon).dump() << '\n';
  }
  OrderedJson speakers = OrderedJson::array();
  for (const auto& s : c.speakers)
    speakers.push_back({{"speaker_id", s.speaker_id},
                        {"articulation_gain", s.articulation_gain},
                        {"held_out", s.speaker_id >= c.config.seen_speakers()}});
  OrderedJson meta{{"format_version", 1},
                   {"seed", c.seed},
                   {"config_fingerprint", c.fingerprint},
                   {"config", c.config.to_json()},
                   {"lexicon", c.lexicon.words()},
                   {"speakers", speakers}};
  std::ofstream out(dir / "corpus.json", std::ios::binary);
  out << meta.dump(2) << '\n';
}

/// Loads a corpus directory written by write_corpus and re-validates it.
inline Corpus load_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "corpus.json") || !fs::exists(dir / "manifest.jsonl"))
    throw InputError("no corpus found in " + dir.string());
  Corpus c;
  const Json meta = load_json_file((dir / "corpus.json").string());
  c.seed = meta.at("seed").get<std::uint64_t>();
  c.fingerprint = meta.at("config_fingerprint").get<std::string>();
  c.config = GenConfig::from_json(meta.at("config"));
  c.lexicon = Lexicon(meta.at("lexicon").get<std::vector<std::string>>());
  for (const auto& s : meta.at("speakers")) {
    SpeakerProfile p;
    p.speaker_id = s.at("speaker_id").get<std::size_t>();
    p.articulation_gain = s.at("articulation_gain").get<double>();
    c.speakers.push_back(std::move(p));
  }
  std::ifstream in(dir / "manifest.jsonl");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json r;
    try {
      r = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("manifest.jsonl:" + std::to_string(lineno) + ": " + e.what());
    }
    VideoSample v;
    v.path = r.at("sample_path").get<std::string>();
    v.speaker_id = r.at("speaker_id").get<std::size_t>();
    v.split = parse_split(r.at("split").get<std::string>());
    v.words = c.lexicon.ids(r.at("words").get<std::vector<std::string>>());
    for (const auto& b : r.at("boundaries")) {
      const auto wi = b.at(0).get<std::size_t>();
      if (wi >= v.words.size()) throw AlignmentError("manifest.jsonl:" + std::to_string(lineno) + ": word index out of range");
      v.boundaries.entries.push_back({v.words[wi], b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>()});
    }
    read_sample_file(dir / v.path, v);
    validate_tiling(v.boundaries, v.length);
    c.samples.push_back(std::move(v));
  }
  check_split_hygiene(c);
  return c;
}

}  // namespace siflip

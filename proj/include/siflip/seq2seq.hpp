#pragma once

// GRU encoder-decoder with dot-product attention over the visual features.
// Output categories are the lexicon plus PAD, BOS and EOS.

#include <string>
#include <vector>

#include "siflip/layers.hpp"

namespace siflip {

namespace tokens {
inline constexpr std::size_t pad = 0;
inline constexpr std::size_t bos = 1;
inline constexpr std::size_t eos = 2;
inline constexpr std::size_t first_word = 3;

inline std::size_t from_word(std::size_t word_id) { return word_id + first_word; }
inline std::size_t to_word(std::size_t token) { return token - first_word; }
}  // namespace tokens

struct Seq2SeqConfig {
  std::size_t hidden = 64;
  std::size_t embed = 32;
  std::size_t mlp_hidden = 64;
  std::size_t max_len = 16;
};

template <typename T>
struct EncodedSequence {
  Var<T> states;  // T x hidden
  Var<T> last;    // 1 x hidden
};

template <typename T>
struct AttentionResult {
  Var<T> weights;  // 1 x T
  Var<T> context;  // 1 x hidden
};

template <typename T>
struct DecodeStep {
  Var<T> log_probs;  // 1 x m
  Var<T> state;      // 1 x hidden
};

template <typename T>
class Seq2Seq {
 public:
  Seq2Seq(ParameterStore<T>& store, std::size_t input_dim, std::size_t vocab, const Seq2SeqConfig& cfg, Rng& rng)
      : cfg_(cfg), categories_(vocab + tokens::first_word) {
    if (cfg.hidden == 0 || cfg.embed == 0 || cfg.mlp_hidden == 0 || cfg.max_len == 0)
      throw ConfigError("seq2seq dims must be >= 1");
    encoder_ = Gru<T>(store, "s2s.encoder", input_dim, cfg.hidden, rng);
    embed_ = &store.add("s2s.embedding", {categories_, cfg.embed});
    std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.embed)));
    for (auto& x : embed_->value) x = static_cast<T>(init(rng));
    decoder_ = Gru<T>(store, "s2s.decoder", cfg.embed, cfg.hidden, rng);
    attn_proj_ = &store.add("s2s.attn_proj", {cfg.hidden, cfg.hidden});
    glorot_uniform(*attn_proj_, cfg.hidden, cfg.hidden, rng);
    mlp_hidden_ = Linear<T>(store, "s2s.mlp_hidden", 2 * cfg.hidden, cfg.mlp_hidden, rng);
    mlp_out_ = Linear<T>(store, "s2s.mlp_out", cfg.mlp_hidden, categories_, rng);
  }

  /// m_total = lexicon size + 3 special tokens.
  std::size_t categories() const { return categories_; }
  const Seq2SeqConfig& config() const { return cfg_; }
  Linear<T>& output_layer() { return mlp_out_; }

  EncodedSequence<T> encode_sequence(Var<T> v) const {
    if (v.rows() == 0) throw ShapeError("seq2seq: empty input sequence");
    Graph<T>& g = *v.graph();
    auto run = encoder_.run(v, encoder_.zero_state(g));
    return {run.states, run.last};
  }

  /// Scores (W h_d) . h_e_i, softmax over i, context = sum_i w_i h_e_i.
  AttentionResult<T> attention(Var<T> h_d, Var<T> h_e) const {
    Graph<T>& g = *h_d.graph();
    Var<T> query = ad::matmul(h_d, g.param(*attn_proj_));
    Var<T> w = ad::row_softmax(ad::matmul_nt(query, h_e));
    return {w, ad::matmul(w, h_e)};
  }

  DecodeStep<T> decode_step(std::size_t prev_token, Var<T> h_d, Var<T> h_e) const {
    if (prev_token >= categories_) throw VocabError("decoder token " + std::to_string(prev_token) + " out of range");
    Graph<T>& g = *h_d.graph();
    Var<T> x = ad::embedding(g.param(*embed_), {prev_token});
    Var<T> h = decoder_.step(x, h_d);
    auto att = attention(h, h_e);
    Var<T> logits = mlp_out_(ad::tanh(mlp_hidden_(ad::concat_cols<T>({h, att.context}))));
    return {ad::row_log_softmax(logits), h};
  }

  /// Decoder token targets for a word sequence: words then EOS.
  std::vector<std::size_t> targets(const std::vector<std::size_t>& words) const {
    if (words.size() + 1 > cfg_.max_len)
      throw ShapeError("target of " + std::to_string(words.size() + 1) + " tokens exceeds max_len " + std::to_string(cfg_.max_len));
    std::vector<std::size_t> out;
    for (auto w : words) {
      if (tokens::from_word(w) >= categories_) throw VocabError("word id " + std::to_string(w) + " outside decoder vocabulary");
      out.push_back(tokens::from_word(w));
    }
    out.push_back(tokens::eos);
    return out;
  }

  /// Teacher-forced log-probabilities, one row per target position.
  Var<T> teacher_forced(Var<T> v, const std::vector<std::size_t>& target_tokens) const {
    auto enc = encode_sequence(v);
    Var<T> h = enc.last;
    std::size_t prev = tokens::bos;
    std::vector<Var<T>> rows;
    for (auto tok : target_tokens) {
      auto step = decode_step(prev, h, enc.states);
      rows.push_back(step.log_probs);
      h = step.state;
      prev = tok;
    }
    return ad::concat_rows(rows);
  }

  /// L_PT = -(1/n) sum_i log p(target_i), teacher forced, targets incl. EOS.
  Var<T> predicted_text_loss(Var<T> v, const std::vector<std::size_t>& words) const {
    const auto tgt = targets(words);
    Var<T> logp = ad::pick(teacher_forced(v, tgt), tgt);
    return ad::scale(ad::mean_all(logp), T(-1));
  }

  /// Greedy decoding; never emits PAD or BOS, stops at EOS.  Returns word ids.
  std::vector<std::size_t> greedy_decode(Var<T> v, std::size_t max_len = 0) const {
    if (max_len == 0) max_len = cfg_.max_len;
    auto enc = encode_sequence(v);
    Var<T> h = enc.last;
    std::size_t prev = tokens::bos;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < max_len; ++i) {
      auto step = decode_step(prev, h, enc.states);
      const auto& lp = step.log_probs.value();
      std::size_t best = tokens::eos;
      for (std::size_t k = tokens::eos; k < lp.size(); ++k)
        if (lp[k] > lp[best]) best = k;
      if (best == tokens::eos) break;
      out.push_back(tokens::to_word(best));
      h = step.state;
      prev = best;
    }
    return out;
  }

 private:
  Seq2SeqConfig cfg_;
  std::size_t categories_;
  Gru<T> encoder_, decoder_;
  Parameter<T>* embed_ = nullptr;
  Parameter<T>* attn_proj_ = nullptr;
  Linear<T> mlp_hidden_, mlp_out_;
};

}  // namespace siflip

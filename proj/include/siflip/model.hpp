#pragma once

// The full lipreading network: visual encoder feeding a seq2seq decoder, a
// text-alignment branch and an adversarial speaker branch.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "siflip/alignment.hpp"
#include "siflip/config_io.hpp"
#include "siflip/edgr.hpp"
#include "siflip/encoder.hpp"
#include "siflip/idcfl.hpp"
#include "siflip/seq2seq.hpp"
#include "siflip/synthcorpus.hpp"

namespace siflip {

enum class SpeakerTap { post_conv, post_recurrent };

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t text_layers = 1;
  std::size_t text_heads = 4;
  std::size_t text_ff_dim = 128;
  std::string similarity = "cosine";  // cosine | dot
  std::string ce_reduction = "mean";  // mean | sum
  double tau_init = 0.07;
  bool share_tau = true;
  std::size_t speaker_hidden = 32;
  std::string speaker_tap = "post_conv";  // post_conv | post_recurrent
  Seq2SeqConfig seq2seq;

  SpeakerTap tap() const {
    if (speaker_tap == "post_conv") return SpeakerTap::post_conv;
    if (speaker_tap == "post_recurrent") return SpeakerTap::post_recurrent;
    throw ConfigError("speaker_tap must be post_conv or post_recurrent");
  }

  IdcflOptions idcfl_options() const {
    IdcflOptions o;
    if (similarity == "cosine") o.similarity = SimilarityKind::cosine;
    else if (similarity == "dot") o.similarity = SimilarityKind::dot;
    else throw ConfigError("similarity must be cosine or dot");
    if (ce_reduction == "mean") o.ce_reduction = Reduction::mean;
    else if (ce_reduction == "sum") o.ce_reduction = Reduction::sum;
    else throw ConfigError("ce_reduction must be mean or sum");
    o.tau_init = tau_init;
    o.share_tau = share_tau;
    return o;
  }

  void validate() const {
    encoder.validate();
    (void)tap();
    (void)idcfl_options();
    if (encoder.model_dim % text_heads != 0) throw ConfigError("model_dim must be divisible by text_heads");
    if (speaker_hidden == 0) throw ConfigError("speaker_hidden must be >= 1");
  }

  OrderedJson to_json() const {
    return OrderedJson{{"encoder", encoder.to_json()},
                       {"text_layers", text_layers},
                       {"text_heads", text_heads},
                       {"text_ff_dim", text_ff_dim},
                       {"similarity", similarity},
                       {"ce_reduction", ce_reduction},
                       {"tau_init", tau_init},
                       {"share_tau", share_tau},
                       {"speaker_hidden", speaker_hidden},
                       {"speaker_tap", speaker_tap},
                       {"seq2seq",
                        {{"hidden", seq2seq.hidden},
                         {"embed", seq2seq.embed},
                         {"mlp_hidden", seq2seq.mlp_hidden},
                         {"max_len", seq2seq.max_len}}}};
  }

  static ModelConfig from_json(const Json& j) {
    reject_unknown_keys(j, "model",
                        {"encoder", "text_layers", "text_heads", "text_ff_dim", "similarity", "ce_reduction", "tau_init",
                         "share_tau", "speaker_hidden", "speaker_tap", "seq2seq"});
    ModelConfig c;
    if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j.at("encoder"));
    read_field(j, "text_layers", c.text_layers);
    read_field(j, "text_heads", c.text_heads);
    read_field(j, "text_ff_dim", c.text_ff_dim);
    read_field(j, "similarity", c.similarity);
    read_field(j, "ce_reduction", c.ce_reduction);
    read_field(j, "tau_init", c.tau_init);
    read_field(j, "share_tau", c.share_tau);
    read_field(j, "speaker_hidden", c.speaker_hidden);
    read_field(j, "speaker_tap", c.speaker_tap);
    if (j.contains("seq2seq")) {
      const Json& s = j.at("seq2seq");
      reject_unknown_keys(s, "seq2seq", {"hidden", "embed", "mlp_hidden", "max_len"});
      read_field(s, "hidden", c.seq2seq.hidden);
      read_field(s, "embed", c.seq2seq.embed);
      read_field(s, "mlp_hidden", c.seq2seq.mlp_hidden);
      read_field(s, "max_len", c.seq2seq.max_len);
    }
    return c;
  }
};

/// Data-dependent sizes a model is built for.
struct ModelShape {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t vocab = 20;
  std::size_t speakers = 5;

  static ModelShape of(const Corpus& c) {
    return {c.config.frame_height(), c.config.frame_width(), c.lexicon.size(), c.config.speakers};
  }
};

/// Which branches run in a training forward pass and how.
struct BranchOptions {
  bool idcfl = true;
  bool edgr = true;
  bool use_cl = true;
  bool use_ce = true;
  double lambda = 1.0;
};

template <typename T>
struct LossTerms {
  Var<T> l_pt, l_cl, l_ce, l_id, l_ed;
  Var<T> speaker_logits;
  EncoderOutput<T> features;
  Var<T> e_pos;
};

template <typename T>
class SiflipModel {
 public:
  SiflipModel(const ModelConfig& cfg, const ModelShape& shape, std::uint64_t seed) : cfg_(cfg), shape_(shape) {
    cfg.validate();
    Rng rng = derive_stream(seed, "init");
    encoder_ = std::make_unique<VisualEncoder<T>>(store_, cfg.encoder, shape.height, shape.width, rng);
    idcfl_ = std::make_unique<Idcfl<T>>(store_, shape.vocab, cfg.encoder.model_dim, cfg.text_layers, cfg.text_heads,
                                        cfg.text_ff_dim, cfg.encoder.dropout, cfg.idcfl_options(), rng);
    const std::size_t tap_dim =
        cfg.tap() == SpeakerTap::post_conv ? encoder_->conv_channels_out() : encoder_->recurrent_dim();
    speaker_ = std::make_unique<SpeakerClassifier<T>>(store_, 2 * tap_dim, cfg.speaker_hidden, shape.speakers, rng);
    seq2seq_ = std::make_unique<Seq2Seq<T>>(store_, cfg.encoder.model_dim, shape.vocab, cfg.seq2seq, rng);
  }

  SiflipModel(const SiflipModel&) = delete;
  SiflipModel& operator=(const SiflipModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const ModelShape& shape() const { return shape_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }
  VisualEncoder<T>& encoder() { return *encoder_; }
  const VisualEncoder<T>& encoder() const { return *encoder_; }
  Idcfl<T>& idcfl() { return *idcfl_; }
  const Idcfl<T>& idcfl() const { return *idcfl_; }
  SpeakerClassifier<T>& speaker() { return *speaker_; }
  const SpeakerClassifier<T>& speaker() const { return *speaker_; }
  Seq2Seq<T>& seq2seq() { return *seq2seq_; }
  const Seq2Seq<T>& seq2seq() const { return *seq2seq_; }

  /// Per-frame speaker-branch features f' (T x C).
  Var<T> speaker_frames(const EncoderOutput<T>& feats) const {
    return cfg_.tap() == SpeakerTap::post_conv ? ad::spatial_max(feats.conv_maps) : feats.f;
  }

  /// Loss terms for one sample.  `visual` drives encoder dropout and `text`
  /// the text-encoder dropout, so enabling a branch never shifts the
  /// randomness seen by another.
  LossTerms<T> losses(Graph<T>& g, const VideoSample& sample, const LabelSequence& positive, const LabelSequence* negative,
                      const BranchOptions& opts, const ForwardMode& visual, const ForwardMode& text) const {
    if (sample.height != shape_.height || sample.width != shape_.width)
      throw ConfigError("sample frame size does not match the model");
    LossTerms<T> out;
    out.features = encoder_->forward(g, sample.frames, sample.length, visual);
    out.l_pt = seq2seq_->predicted_text_loss(out.features.v, sample.words);
    const Var<T> zero = g.scalar(T(0));
    out.l_cl = out.l_ce = out.l_id = out.l_ed = zero;
    if (opts.idcfl) {
      Idcfl<T> const& branch = *idcfl_;
      auto r = branch.loss(out.features.v, positive, negative, text, opts.use_cl, opts.use_ce);
      out.l_cl = r.l_cl;
      out.l_ce = r.l_ce;
      out.l_id = r.l_id;
      out.e_pos = r.e_pos;
    }
    if (opts.edgr) {
      Var<T> pooled = speaker_pool(speaker_frames(out.features));
      out.speaker_logits = speaker_->logits(ad::grad_reverse(pooled, static_cast<T>(opts.lambda)));
      out.l_ed = speaker_ce_loss(out.speaker_logits, sample.speaker_id);
    }
    return out;
  }

  /// Greedy transcription in evaluation mode.
  std::vector<std::size_t> transcribe(const VideoSample& sample) const {
    Graph<T> g;
    g.set_grad_enabled(false);
    auto feats = encoder_->forward(g, sample.frames, sample.length, ForwardMode{});
    return seq2seq_->greedy_decode(feats.v);
  }

  /// Pooled speaker-branch embedding (mean | std) in evaluation mode.
  std::vector<T> speaker_embedding(const VideoSample& sample) const {
    Graph<T> g;
    g.set_grad_enabled(false);
    if (cfg_.tap() == SpeakerTap::post_conv) {
      Var<T> maps = encoder_->conv_maps(g, sample.frames, sample.length, ForwardMode{});
      return speaker_pool(ad::spatial_max(maps)).value();
    }
    auto feats = encoder_->forward(g, sample.frames, sample.length, ForwardMode{});
    return speaker_pool(feats.f).value();
  }

  /// Positive-pair similarity matrix for one sample (evaluation mode).
  std::vector<T> positive_similarity(const VideoSample& sample) const {
    Graph<T> g;
    g.set_grad_enabled(false);
    auto feats = encoder_->forward(g, sample.frames, sample.length, ForwardMode{});
    auto labels = assign_frame_labels(sample.boundaries, sample.words, sample.length);
    Var<T> l = idcfl_->text().encode(g, labels, ForwardMode{});
    return similarity(feats.v, l, idcfl_->options().similarity).value();
  }

 private:
  ModelConfig cfg_;
  ModelShape shape_;
  ParameterStore<T> store_;
  std::unique_ptr<VisualEncoder<T>> encoder_;
  std::unique_ptr<Idcfl<T>> idcfl_;
  std::unique_ptr<SpeakerClassifier<T>> speaker_;
  std::unique_ptr<Seq2Seq<T>> seq2seq_;
};

}  // namespace siflip

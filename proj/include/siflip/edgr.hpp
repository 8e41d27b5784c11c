#pragma once

// Explicit disentanglement: statistical speaker pooling, a speaker classifier,
// and the gradient reversal that turns the classifier into an adversary.

#include <cmath>
#include <span>
#include <string>

#include "siflip/config_io.hpp"
#include "siflip/layers.hpp"

namespace siflip {

/// concat(mean_t, std_t) of per-frame features (T x C) -> 1 x 2C.  Population
/// std, so a single frame yields a zero std half.
template <typename T>
Var<T> speaker_pool(Var<T> frames) {
  if (frames.rows() == 0) throw ShapeError("speaker_pool: empty sequence");
  return ad::concat_cols<T>({ad::col_mean(frames), ad::col_std(frames)});
}

enum class LambdaSchedule { constant, ramp };

struct GradReverseConfig {
  double lambda = 1.0;
  LambdaSchedule schedule = LambdaSchedule::constant;
  /// Steepness of the warm-up ramp lambda * (2 / (1 + exp(-gamma p)) - 1).
  double ramp_gamma = 10.0;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  }

  /// Reversal strength at training progress p in [0, 1].
  double lambda_at(double progress) const {
    if (schedule == LambdaSchedule::constant) return lambda;
    return lambda * (2.0 / (1.0 + std::exp(-ramp_gamma * progress)) - 1.0);
  }
};

/// Softmax(Linear(ReLU(Linear(pooled)))) over N speakers; this returns the
/// pre-softmax logits.
template <typename T>
class SpeakerClassifier {
 public:
  SpeakerClassifier(ParameterStore<T>& store, std::size_t in_dim, std::size_t hidden, std::size_t speakers, Rng& rng)
      : hidden_layer_(store, "speaker.hidden", in_dim, hidden, rng), output_(store, "speaker.output", hidden, speakers, rng) {
    if (speakers < 2) throw ConfigError("speaker classifier needs at least 2 speakers");
  }

  std::size_t speakers() const { return output_.out_dim(); }
  std::size_t input_dim() const { return hidden_layer_.in_dim(); }
  Linear<T>& hidden_layer() { return hidden_layer_; }
  Linear<T>& output_layer() { return output_; }

  Var<T> logits(Var<T> pooled) const {
    if (pooled.size() != input_dim())
      throw ConfigError("speaker classifier expects " + std::to_string(input_dim()) + " inputs, got " + std::to_string(pooled.size()));
    return output_(ad::relu(hidden_layer_(pooled)));
  }

  Var<T> probabilities(Var<T> pooled) const { return ad::row_softmax(logits(pooled)); }

 private:
  Linear<T> hidden_layer_, output_;
};

/// -log y'[speaker] computed from logits with log-sum-exp stabilization.
template <typename T>
Var<T> speaker_ce_loss(Var<T> logits, std::size_t speaker_id) {
  if (speaker_id >= logits.cols())
    throw IndexError("speaker id " + std::to_string(speaker_id) + " >= number of speakers " + std::to_string(logits.cols()));
  return ad::scale(ad::pick(ad::row_log_softmax(logits), {speaker_id}), T(-1));
}

/// -log y'[speaker] for an explicit probability vector.
inline double speaker_ce_loss(std::span<const double> probs, std::size_t speaker_id) {
  if (speaker_id >= probs.size())
    throw IndexError("speaker id " + std::to_string(speaker_id) + " >= number of speakers " + std::to_string(probs.size()));
  return -std::log(probs[speaker_id]);
}

}  // namespace siflip

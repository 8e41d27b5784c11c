#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "siflip/model.hpp"
#include "siflip/trainer.hpp"

namespace siflip::testing {

using Inputs = std::vector<std::pair<Shape, std::vector<double>>>;
using ScalarFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

/// Largest relative error between reverse-mode gradients of f with respect to
/// every input element and central finite differences.
inline double gradient_check(const Inputs& inputs, const ScalarFn& f, double h = 1e-6) {
  std::vector<std::vector<double>> analytic;
  {
    Graph<double> g;
    std::vector<Var<double>> xs;
    for (const auto& [s, v] : inputs) xs.push_back(g.input(s, v));
    Var<double> y = f(g, xs);
    g.backward(y);
    for (auto& x : xs) {
      const auto& gr = x.grad();
      analytic.push_back(gr.empty() ? std::vector<double>(x.size(), 0.0) : gr);
    }
  }
  auto eval = [&](const Inputs& in) {
    Graph<double> g;
    std::vector<Var<double>> xs;
    for (const auto& [s, v] : in) xs.push_back(g.constant(s, v));
    return f(g, xs).item();
  };
  double worst = 0.0;
  Inputs probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].second.size(); ++i) {
      const double x0 = probe[k].second[i];
      probe[k].second[i] = x0 + h;
      const double up = eval(probe);
      probe[k].second[i] = x0 - h;
      const double down = eval(probe);
      probe[k].second[i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic[k][i], numeric));
    }
  return worst;
}

/// A very small model so tests and gradient checks run in milliseconds.
inline ModelConfig micro_model(std::size_t d = 8) {
  ModelConfig m;
  m.encoder.conv_channels = {2};
  m.encoder.recurrent_hidden = 4;
  m.encoder.model_dim = d;
  m.encoder.attn_layers = 1;
  m.encoder.attn_heads = 2;
  m.encoder.ff_dim = 8;
  m.encoder.dropout = 0.0;
  m.text_layers = 1;
  m.text_heads = 2;
  m.text_ff_dim = 8;
  m.speaker_hidden = 4;
  m.seq2seq.hidden = 8;
  m.seq2seq.embed = 4;
  m.seq2seq.mlp_hidden = 8;
  m.seq2seq.max_len = 8;
  return m;
}

/// Tiny corpus: 4x4 frames, 3 speakers (1 unseen), few samples.
inline GenConfig micro_corpus_config() {
  GenConfig c;
  c.speakers = 3;
  c.unseen = 1;
  c.vocab = 6;
  c.min_words = 1;
  c.max_words = 2;
  c.min_frames_per_word = 2;
  c.max_frames_per_word = 3;
  c.t_max = 6;
  c.height = 4;
  c.width = 4;
  c.pattern_components = 2;
  c.train_per_speaker = 4;
  c.seen_test_per_speaker = 2;
  c.unseen_per_speaker = 2;
  return c;
}

inline TrainConfig micro_train(std::size_t epochs = 1) {
  TrainConfig t;
  t.model = micro_model();
  t.epochs = epochs;
  t.batch_size = 4;
  t.eval_every = 0;
  return t;
}

}  // namespace siflip::testing

#pragma once

// Building blocks shared by the visual, text and decoder networks.

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "siflip/autodiff.hpp"
#include "siflip/rng.hpp"

namespace siflip {

using ad::Graph;
using ad::Parameter;
using ad::Shape;
using ad::Var;

/// Owns every trainable tensor of a model; addresses are stable.
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<T>& add(std::string name, Shape shape) {
    for (const auto& p : params_)
      if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
    params_.emplace_back(std::move(name), std::move(shape));
    return params_.back();
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// FNV-1a over names and values in registration order.
  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("siflip-params");
    for (const auto& p : params_) {
      h = fnv1a(p.name, h);
      h = fnv1a(p.value.data(), p.value.size() * sizeof(T), h);
    }
    return h;
  }

 private:
  std::deque<Parameter<T>> params_;
};

/// Per-forward settings: training mode enables dropout.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;
};

template <typename T>
void glorot_uniform(Parameter<T>& p, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

template <typename T>
Var<T> apply_dropout(Var<T> x, double rate, const ForwardMode& mode) {
  if (!mode.training || rate <= 0.0 || mode.rng == nullptr) return x;
  return ad::dropout(x, static_cast<T>(rate), true, *mode.rng);
}

/// Sinusoidal position table; row = position (starting at 0), even columns
/// sin and odd columns cos of pos / 10000^(2i/d).
template <typename T>
std::vector<T> sinusoidal_positions(std::size_t length, std::size_t dim) {
  std::vector<T> pe(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      pe[pos * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

template <typename T>
Var<T> add_positions(Var<T> x) {
  Graph<T>& g = *x.graph();
  return ad::add(x, g.constant(x.shape(), sinusoidal_positions<T>(x.rows(), x.cols())));
}

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;  // in x out
  Parameter<T>* bias = nullptr;    // 1 x out

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    weight = &store.add(name + ".weight", {in, out});
    bias = &store.add(name + ".bias", {1, out});
    glorot_uniform(*weight, in, out, rng);
  }

  std::size_t in_dim() const { return weight->shape[0]; }
  std::size_t out_dim() const { return weight->shape[1]; }

  Var<T> operator()(Var<T> x) const {
    Graph<T>& g = *x.graph();
    return ad::linear(x, g.param(*weight), g.param(*bias));
  }
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
    gain = &store.add(name + ".gain", {1, dim});
    bias = &store.add(name + ".bias", {1, dim});
    std::fill(gain->value.begin(), gain->value.end(), T(1));
  }

  Var<T> operator()(Var<T> x) const {
    Graph<T>& g = *x.graph();
    return ad::layer_norm(x, g.param(*gain), g.param(*bias));
  }
};

/// Gated recurrent unit, gate layout [reset | update | candidate].
template <typename T>
struct Gru {
  Parameter<T>* w_input = nullptr;   // in x 3H
  Parameter<T>* w_hidden = nullptr;  // H x 3H
  Parameter<T>* b_input = nullptr;
  Parameter<T>* b_hidden = nullptr;
  std::size_t hidden = 0;

  Gru() = default;
  Gru(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t h, Rng& rng) : hidden(h) {
    w_input = &store.add(name + ".w_input", {in, 3 * h});
    w_hidden = &store.add(name + ".w_hidden", {h, 3 * h});
    b_input = &store.add(name + ".b_input", {1, 3 * h});
    b_hidden = &store.add(name + ".b_hidden", {1, 3 * h});
    glorot_uniform(*w_input, in, h, rng);
    glorot_uniform(*w_hidden, h, h, rng);
  }

  /// Input-side projection for a whole sequence (T x 3H).
  Var<T> project_inputs(Var<T> xs) const {
    Graph<T>& g = *xs.graph();
    return ad::linear(xs, g.param(*w_input), g.param(*b_input));
  }

  /// One step given the projected input row (1 x 3H) and previous state (1 x H).
  Var<T> step_projected(Var<T> xproj, Var<T> h) const {
    Graph<T>& g = *h.graph();
    const std::size_t hd = hidden;
    Var<T> hp = ad::linear(h, g.param(*w_hidden), g.param(*b_hidden));
    Var<T> r = ad::sigmoid(ad::add(ad::slice_cols(xproj, 0, hd), ad::slice_cols(hp, 0, hd)));
    Var<T> z = ad::sigmoid(ad::add(ad::slice_cols(xproj, hd, 2 * hd), ad::slice_cols(hp, hd, 2 * hd)));
    Var<T> n = ad::tanh(ad::add(ad::slice_cols(xproj, 2 * hd, 3 * hd), ad::mul(r, ad::slice_cols(hp, 2 * hd, 3 * hd))));
    return ad::add(n, ad::mul(z, ad::sub(h, n)));
  }

  Var<T> step(Var<T> x, Var<T> h) const { return step_projected(project_inputs(x), h); }

  struct Run {
    Var<T> states;  // T x H, in input time order
    Var<T> last;    // 1 x H, state after the final processed step
  };

  /// Runs over all rows of xs; reverse=true processes from the last row back.
  Run run(Var<T> xs, Var<T> h0, bool reverse = false) const {
    const std::size_t tt = xs.rows();
    if (tt == 0) throw ShapeError("gru: empty sequence");
    Var<T> proj = project_inputs(xs);
    std::vector<Var<T>> out(tt);
    Var<T> h = h0;
    for (std::size_t k = 0; k < tt; ++k) {
      const std::size_t t = reverse ? tt - 1 - k : k;
      h = step_projected(ad::slice_rows(proj, t, t + 1), h);
      out[t] = h;
    }
    return {ad::concat_rows(out), h};
  }

  Var<T> zero_state(Graph<T>& g) const { return g.constant({1, hidden}, std::vector<T>(hidden, T(0))); }
};

template <typename T>
struct MultiHeadSelfAttention {
  Linear<T> query, key, value, output;
  std::size_t heads = 1;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t n_heads, Rng& rng)
      : query(store, name + ".query", dim, dim, rng),
        key(store, name + ".key", dim, dim, rng),
        value(store, name + ".value", dim, dim, rng),
        output(store, name + ".output", dim, dim, rng),
        heads(n_heads) {
    if (n_heads == 0 || dim % n_heads != 0) throw ConfigError("model dim must be divisible by attention heads");
  }

  Var<T> operator()(Var<T> x) const {
    const std::size_t dim = x.cols(), dk = dim / heads;
    Var<T> q = query(x), k = key(x), v = value(x);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));
    std::vector<Var<T>> per_head;
    per_head.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var<T> qh = ad::slice_cols(q, h * dk, (h + 1) * dk);
      Var<T> kh = ad::slice_cols(k, h * dk, (h + 1) * dk);
      Var<T> vh = ad::slice_cols(v, h * dk, (h + 1) * dk);
      Var<T> w = ad::row_softmax(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
      per_head.push_back(ad::matmul(w, vh));
    }
    return output(heads == 1 ? per_head[0] : ad::concat_cols(per_head));
  }
};

/// Post-norm transformer encoder layer.
template <typename T>
struct TransformerLayer {
  MultiHeadSelfAttention<T> attention;
  LayerNorm<T> norm1, norm2;
  Linear<T> ff1, ff2;
  double dropout = 0.0;

  TransformerLayer() = default;
  TransformerLayer(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads,
                   std::size_t ff_dim, double drop, Rng& rng)
      : attention(store, name + ".attn", dim, heads, rng),
        norm1(store, name + ".norm1", dim),
        norm2(store, name + ".norm2", dim),
        ff1(store, name + ".ff1", dim, ff_dim, rng),
        ff2(store, name + ".ff2", ff_dim, dim, rng),
        dropout(drop) {}

  Var<T> operator()(Var<T> x, const ForwardMode& mode) const {
    Var<T> a = apply_dropout(attention(x), dropout, mode);
    x = norm1(ad::add(x, a));
    Var<T> f = apply_dropout(ff2(ad::relu(ff1(x))), dropout, mode);
    return norm2(ad::add(x, f));
  }
};

template <typename T>
struct TransformerEncoder {
  std::vector<TransformerLayer<T>> layers;

  TransformerEncoder() = default;
  TransformerEncoder(ParameterStore<T>& store, const std::string& name, std::size_t n_layers, std::size_t dim,
                     std::size_t heads, std::size_t ff_dim, double drop, Rng& rng) {
    for (std::size_t i = 0; i < n_layers; ++i)
      layers.emplace_back(store, name + ".layer" + std::to_string(i), dim, heads, ff_dim, drop, rng);
  }

  /// Adds sinusoidal positions, then applies every layer.
  Var<T> operator()(Var<T> x, const ForwardMode& mode) const {
    x = add_positions(x);
    for (const auto& layer : layers) x = layer(x, mode);
    return x;
  }
};

}  // namespace siflip

#pragma once

// Visual front-end: 3D convolutions, a bidirectional GRU and a position-encoded
// transformer encoder producing one d-dimensional feature per frame.

#include <span>
#include <string>
#include <vector>

#include "siflip/config_io.hpp"
#include "siflip/layers.hpp"

namespace siflip {

struct EncoderConfig {
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t kernel_t = 3;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t pool_h = 2;
  std::size_t pool_w = 2;
  std::size_t recurrent_hidden = 32;
  std::size_t model_dim = 64;
  std::size_t attn_layers = 2;
  std::size_t attn_heads = 4;
  std::size_t ff_dim = 128;
  double dropout = 0.1;

  /// Transformer sized as in the original large-corpus setup.
  static EncoderConfig large_scale() {
    EncoderConfig c;
    c.conv_channels = {32, 64, 96};
    c.recurrent_hidden = 256;
    c.model_dim = 512;
    c.attn_layers = 6;
    c.attn_heads = 8;
    c.ff_dim = 2048;
    return c;
  }

  void validate() const {
    if (conv_channels.empty()) throw ConfigError("encoder needs at least one conv layer");
    for (auto c : conv_channels)
      if (c == 0) throw ConfigError("conv channels must be >= 1");
    if (kernel_t == 0 || kernel_h == 0 || kernel_w == 0 || pool_h == 0 || pool_w == 0)
      throw ConfigError("kernel and pool sizes must be >= 1");
    if (kernel_t % 2 == 0 || kernel_h % 2 == 0 || kernel_w % 2 == 0)
      throw ConfigError("kernel sizes must be odd to preserve length with same padding");
    if (recurrent_hidden == 0 || model_dim == 0 || attn_heads == 0 || ff_dim == 0) throw ConfigError("encoder dims must be >= 1");
    if (model_dim % attn_heads != 0) throw ConfigError("model_dim must be divisible by attn_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  }

  OrderedJson to_json() const {
    return OrderedJson{{"conv_channels", conv_channels}, {"kernel_t", kernel_t},       {"kernel_h", kernel_h},
                       {"kernel_w", kernel_w},           {"pool_h", pool_h},           {"pool_w", pool_w},
                       {"recurrent_hidden", recurrent_hidden}, {"model_dim", model_dim}, {"attn_layers", attn_layers},
                       {"attn_heads", attn_heads},       {"ff_dim", ff_dim},           {"dropout", dropout}};
  }

  static EncoderConfig from_json(const Json& j) {
    reject_unknown_keys(j, "encoder",
                        {"conv_channels", "kernel_t", "kernel_h", "kernel_w", "pool_h", "pool_w", "recurrent_hidden",
                         "model_dim", "attn_layers", "attn_heads", "ff_dim", "dropout"});
    EncoderConfig c;
    read_field(j, "conv_channels", c.conv_channels);
    read_field(j, "kernel_t", c.kernel_t);
    read_field(j, "kernel_h", c.kernel_h);
    read_field(j, "kernel_w", c.kernel_w);
    read_field(j, "pool_h", c.pool_h);
    read_field(j, "pool_w", c.pool_w);
    read_field(j, "recurrent_hidden", c.recurrent_hidden);
    read_field(j, "model_dim", c.model_dim);
    read_field(j, "attn_layers", c.attn_layers);
    read_field(j, "attn_heads", c.attn_heads);
    read_field(j, "ff_dim", c.ff_dim);
    read_field(j, "dropout", c.dropout);
    return c;
  }
};

template <typename T>
struct EncoderOutput {
  Var<T> conv_maps;  // (C, T, H', W') after the last conv block
  Var<T> f_conv;     // T x d_c, flattened conv features
  Var<T> f;          // T x 2*hidden, bidirectional recurrent features
  Var<T> v;          // T x d, final visual embedding
};

template <typename T>
class VisualEncoder {
 public:
  struct ConvBlock {
    Parameter<T>* weight = nullptr;  // (Co, Ci, kt, kh, kw)
    Parameter<T>* bias = nullptr;    // Co
  };

  VisualEncoder(ParameterStore<T>& store, const EncoderConfig& cfg, std::size_t height, std::size_t width, Rng& rng)
      : cfg_(cfg), height_(height), width_(width) {
    cfg.validate();
    std::size_t ci = 1, h = height, w = width;
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
      if (h < cfg.kernel_h || w < cfg.kernel_w)
        throw ConfigError("conv layer " + std::to_string(i) + ": spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                          " is smaller than the kernel");
      if (h < cfg.pool_h || w < cfg.pool_w)
        throw ConfigError("conv layer " + std::to_string(i) + ": feature map too small to pool");
      const std::size_t co = cfg.conv_channels[i];
      const std::string name = "encoder.conv" + std::to_string(i);
      ConvBlock b;
      b.weight = &store.add(name + ".weight", {co, ci, cfg.kernel_t, cfg.kernel_h, cfg.kernel_w});
      b.bias = &store.add(name + ".bias", {co});
      const std::size_t k = cfg.kernel_t * cfg.kernel_h * cfg.kernel_w;
      glorot_uniform(*b.weight, ci * k, co * k, rng);
      conv_.push_back(b);
      ci = co;
      h /= cfg.pool_h;
      w /= cfg.pool_w;
    }
    out_h_ = h;
    out_w_ = w;
    conv_dim_ = ci * h * w;
    gru_fwd_ = Gru<T>(store, "encoder.gru_fwd", conv_dim_, cfg.recurrent_hidden, rng);
    gru_bwd_ = Gru<T>(store, "encoder.gru_bwd", conv_dim_, cfg.recurrent_hidden, rng);
    proj_ = Linear<T>(store, "encoder.proj", 2 * cfg.recurrent_hidden, cfg.model_dim, rng);
    attn_ = TransformerEncoder<T>(store, "encoder.attn", cfg.attn_layers, cfg.model_dim, cfg.attn_heads, cfg.ff_dim,
                                  cfg.dropout, rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  std::size_t conv_dim() const { return conv_dim_; }
  std::size_t conv_channels_out() const { return cfg_.conv_channels.back(); }
  std::size_t recurrent_dim() const { return 2 * cfg_.recurrent_hidden; }
  std::size_t model_dim() const { return cfg_.model_dim; }
  const Gru<T>& gru_forward() const { return gru_fwd_; }
  const Gru<T>& gru_backward() const { return gru_bwd_; }

  /// Conv -> ReLU -> spatial max-pool -> dropout per layer; T is preserved.
  Var<T> conv_maps(Graph<T>& g, std::span<const float> frames, std::size_t length, const ForwardMode& mode) const {
    if (length == 0) throw ShapeError("encoder: empty sequence");
    if (frames.size() != length * height_ * width_)
      throw ShapeError("encoder: frame buffer does not match (T, H, W) = (" + std::to_string(length) + ", " +
                       std::to_string(height_) + ", " + std::to_string(width_) + ")");
    std::vector<T> x(frames.begin(), frames.end());
    Var<T> h = g.constant({1, length, height_, width_}, std::move(x));
    return conv_stack(h, mode);
  }

  Var<T> conv_stack(Var<T> x, const ForwardMode& mode) const {
    Graph<T>& g = *x.graph();
    for (const auto& b : conv_) {
      x = ad::relu(ad::conv3d(x, g.param(*b.weight), g.param(*b.bias)));
      x = ad::max_pool_spatial(x, cfg_.pool_h, cfg_.pool_w);
      x = apply_dropout(x, cfg_.dropout, mode);
    }
    return x;
  }

  /// Rows are concat(forward_t, backward_t).
  Var<T> bidirectional(Var<T> f_in) const {
    if (f_in.rows() == 0) throw ShapeError("bidirectional GRU: empty sequence");
    Graph<T>& g = *f_in.graph();
    auto fwd = gru_fwd_.run(f_in, gru_fwd_.zero_state(g), false);
    auto bwd = gru_bwd_.run(f_in, gru_bwd_.zero_state(g), true);
    return ad::concat_cols<T>({fwd.states, bwd.states});
  }

  /// Linear projection to d, sinusoidal positions, transformer layers.
  Var<T> attend(Var<T> f, const ForwardMode& mode) const {
    if (f.cols() != proj_.in_dim()) throw ConfigError("attend: feature dim does not match projection input");
    return attn_(proj_(f), mode);
  }

  EncoderOutput<T> forward(Graph<T>& g, std::span<const float> frames, std::size_t length, const ForwardMode& mode) const {
    EncoderOutput<T> out;
    out.conv_maps = conv_maps(g, frames, length, mode);
    out.f_conv = ad::frames_to_rows(out.conv_maps);
    out.f = bidirectional(out.f_conv);
    out.v = attend(out.f, mode);
    return out;
  }

 private:
  EncoderConfig cfg_;
  std::size_t height_, width_;
  std::size_t out_h_ = 0, out_w_ = 0, conv_dim_ = 0;
  std::vector<ConvBlock> conv_;
  Gru<T> gru_fwd_, gru_bwd_;
  Linear<T> proj_;
  TransformerEncoder<T> attn_;
};

}  // namespace siflip

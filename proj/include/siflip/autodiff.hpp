#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// tensors.  A Graph is built per forward pass; parameters live outside the
// graph and receive accumulated gradients when Graph::backward runs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "siflip/errors.hpp"
#include "siflip/rng.hpp"

namespace siflip::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

/// Trainable tensor with persistent storage and a gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)), value(numel(shape), T(0)), grad(numel(shape), T(0)) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
class Graph;

/// Handle to a node in a Graph.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* g, std::size_t id) : graph_(g), id_(id) {}

  Graph<T>* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Shape& shape() const { return graph_->node(id_).shape; }
  std::size_t rows() const { return shape()[0]; }
  std::size_t cols() const { return shape().size() > 1 ? shape()[1] : 1; }
  std::size_t size() const { return value().size(); }
  const std::vector<T>& value() const { return graph_->node(id_).value; }
  const std::vector<T>& grad() const { return graph_->node(id_).grad; }
  T item() const { return value().at(0); }
  T at(std::size_t r, std::size_t c) const { return value()[r * cols() + c]; }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Graph() { nodes_.reserve(1024); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Shape shape, std::vector<T> value) { return push(std::move(shape), std::move(value), false, {}); }

  /// Differentiable input that is not a Parameter (used for gradient probes).
  Var<T> input(Shape shape, std::vector<T> value) { return push(std::move(shape), std::move(value), true, {}); }

  Var<T> scalar(T v) { return constant({1, 1}, {v}); }

  /// Inference graphs treat parameters as constants and record no closures.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Leaf bound to a Parameter; repeated calls in one graph share the node.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
    Var<T> v = push(p.shape, p.value, grad_enabled_, {});
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  /// Creates an op node; it requires grad when any parent does.
  Var<T> make(Shape shape, std::vector<T> value, std::initializer_list<Var<T>> parents, Backward bw) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || nodes_[p.id()].requires_grad;
    return push(std::move(shape), std::move(value), rg, rg ? std::move(bw) : Backward{});
  }
  Var<T> make(Shape shape, std::vector<T> value, const std::vector<Var<T>>& parents, Backward bw) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || nodes_[p.id()].requires_grad;
    return push(std::move(shape), std::move(value), rg, rg ? std::move(bw) : Backward{});
  }

  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& node(std::size_t id) { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, or nullptr when the node needs no gradient.
  T* grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T(0));
    return n.grad.data();
  }

  /// Reverse sweep from a scalar root; parameter leaves add into Parameter::grad.
  void backward(Var<T> root, T seed = T(1)) {
    if (root.size() != 1) throw ShapeError("backward root must be a scalar, got " + shape_str(root.shape()));
    if (!nodes_[root.id()].requires_grad) return;
    grad_of(root.id())[0] += seed;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& pg = n.param->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

 private:
  Var<T> push(Shape shape, std::vector<T> value, bool rg, Backward bw) {
    if (numel(shape) != value.size())
      throw ShapeError("node value size " + std::to_string(value.size()) + " does not match shape " + shape_str(shape));
    nodes_.push_back(Node{std::move(shape), std::move(value), {}, std::move(bw), nullptr, rg});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

namespace detail {

template <typename T>
void require_2d(const Var<T>& a, const char* op) {
  if (a.shape().size() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(Var<T> a, Fwd fwd, Deriv deriv) {
  Graph<T>& g = *a.graph();
  std::vector<T> out(a.size());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ia = a.id();
  return g.make(a.shape(), std::move(out), {a}, [ia, deriv](Graph<T>& gr, std::size_t self) {
    T* ga = gr.grad_of(ia);
    if (!ga) return;
    const auto& n = gr.node(self);
    const auto& x = gr.node(ia).value;
    for (std::size_t i = 0; i < n.value.size(); ++i) ga[i] += n.grad[i] * deriv(x[i], n.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same(a, b, "add");
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->make(a.shape(), std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& gs = g.node(self).grad;
    if (T* ga = g.grad_of(ia))
      for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i];
    if (T* gb = g.grad_of(ib))
      for (std::size_t i = 0; i < gs.size(); ++i) gb[i] += gs[i];
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same(a, b, "sub");
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->make(a.shape(), std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& gs = g.node(self).grad;
    if (T* ga = g.grad_of(ia))
      for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i];
    if (T* gb = g.grad_of(ib))
      for (std::size_t i = 0; i < gs.size(); ++i) gb[i] -= gs[i];
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same(a, b, "mul");
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->make(a.shape(), std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& gs = g.node(self).grad;
    const auto& av = g.node(ia).value;
    const auto& bv = g.node(ib).value;
    if (T* ga = g.grad_of(ia))
      for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i] * bv[i];
    if (T* gb = g.grad_of(ib))
      for (std::size_t i = 0; i < gs.size(); ++i) gb[i] += gs[i] * av[i];
  });
}

/// s * a + c elementwise with constant s, c.
template <typename T>
Var<T> affine(Var<T> a, T s, T c = T(0)) {
  return detail::unary(
      a, [s, c](T x) { return s * x + c; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return affine(a, s, T(0));
}

/// a * s where s is a 1x1 node.
template <typename T>
Var<T> scale_by(Var<T> a, Var<T> s) {
  if (s.size() != 1) throw ShapeError("scale_by: scale must be 1x1");
  const T sv = s.item();
  std::vector<T> out(a.value());
  for (auto& x : out) x *= sv;
  const std::size_t ia = a.id(), is = s.id();
  return a.graph()->make(a.shape(), std::move(out), {a, s}, [ia, is](Graph<T>& g, std::size_t self) {
    const auto& gs = g.node(self).grad;
    const auto& av = g.node(ia).value;
    const T sv = g.node(is).value[0];
    if (T* ga = g.grad_of(ia))
      for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i] * sv;
    if (T* gsc = g.grad_of(is)) {
      T acc = 0;
      for (std::size_t i = 0; i < gs.size(); ++i) acc += gs[i] * av[i];
      gsc[0] += acc;
    }
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> reciprocal(Var<T> a) {
  return detail::unary(
      a, [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; });
}

/// Identity forward; backward multiplies the upstream gradient by -lambda.
template <typename T>
Var<T> grad_reverse(Var<T> a, T lambda) {
  return detail::unary(
      a, [](T x) { return x; }, [lambda](T, T) { return -lambda; });
}

/// Inverted dropout; identity when not training or rate == 0.
template <typename T>
Var<T> dropout(Var<T> a, T rate, bool training, Rng& rng) {
  if (!training || rate <= T(0)) return a;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T inv = T(1) / (T(1) - rate);
  std::vector<T> mask(a.size());
  for (auto& m : mask) m = keep(rng) ? inv : T(0);
  Var<T> m = a.graph()->constant(a.shape(), std::move(mask));
  return mul(a, m);
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum_all(Var<T> a) {
  T s = 0;
  for (T x : a.value()) s += x;
  const std::size_t ia = a.id();
  return a.graph()->make({1, 1}, {s}, {a}, [ia](Graph<T>& g, std::size_t self) {
    if (T* ga = g.grad_of(ia)) {
      const T gs = g.node(self).grad[0];
      const std::size_t n = g.node(ia).value.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += gs;
    }
  });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

/// Column means of a T x C matrix -> 1 x C.
template <typename T>
Var<T> col_mean(Var<T> a) {
  detail::require_2d(a, "col_mean");
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) throw ShapeError("col_mean: empty input");
  std::vector<T> out(c, T(0));
  const auto& av = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += av[i * c + j];
  for (auto& x : out) x /= static_cast<T>(r);
  const std::size_t ia = a.id();
  return a.graph()->make({1, c}, std::move(out), {a}, [ia, r, c](Graph<T>& g, std::size_t self) {
    if (T* ga = g.grad_of(ia)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gs[j] / static_cast<T>(r);
    }
  });
}

/// Population (ddof = 0) column standard deviation -> 1 x C.  A zero-variance
/// column yields 0 with zero gradient.
template <typename T>
Var<T> col_std(Var<T> a) {
  detail::require_2d(a, "col_std");
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) throw ShapeError("col_std: empty input");
  const auto& av = a.value();
  std::vector<T> mean(c, T(0)), out(c, T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[j] += av[i * c + j];
  for (auto& m : mean) m /= static_cast<T>(r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T d = av[i * c + j] - mean[j];
      out[j] += d * d;
    }
  for (auto& x : out) x = std::sqrt(x / static_cast<T>(r));
  const std::size_t ia = a.id();
  return a.graph()->make({1, c}, std::move(out), {a}, [ia, r, c, mean](Graph<T>& g, std::size_t self) {
    T* ga = g.grad_of(ia);
    if (!ga) return;
    const auto& n = g.node(self);
    const auto& x = g.node(ia).value;
    for (std::size_t j = 0; j < c; ++j) {
      const T sd = n.value[j];
      if (sd <= T(0)) continue;
      const T k = n.grad[j] / (static_cast<T>(r) * sd);
      for (std::size_t i = 0; i < r; ++i) ga[i * c + j] += k * (x[i * c + j] - mean[j]);
    }
  });
}

// ---------------------------------------------------------------- linear algebra

/// (m x k) * (k x n)
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n, T(0));
  const T* av = a.value().data();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T x = av[i * k + p];
      if (x == T(0)) continue;
      const T* br = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += x * br[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->make({m, n}, std::move(out), {a, b}, [ia, ib, m, k, n](Graph<T>& g, std::size_t self) {
    const T* gs = g.node(self).grad.data();
    const T* av = g.node(ia).value.data();
    const T* bv = g.node(ib).value.data();
    if (T* ga = g.grad_of(ia)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T* br = bv + p * n;
          const T* gr = gs + i * n;
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
          ga[i * k + p] += acc;
        }
    }
    if (T* gb = g.grad_of(ib)) {
      for (std::size_t i = 0; i < m; ++i) {
        const T* gr = gs + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T x = av[i * k + p];
          if (x == T(0)) continue;
          T* br = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) br[j] += x * gr[j];
        }
      }
    }
  });
}

/// (m x k) * (n x k)^T -> m x n
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  std::vector<T> out(m * n, T(0));
  const T* av = a.value().data();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = acc;
    }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->make({m, n}, std::move(out), {a, b}, [ia, ib, m, k, n](Graph<T>& g, std::size_t self) {
    const T* gs = g.node(self).grad.data();
    const T* av = g.node(ia).value.data();
    const T* bv = g.node(ib).value.data();
    T* ga = g.grad_of(ia);
    T* gb = g.grad_of(ib);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T gij = gs[i * n + j];
        if (gij == T(0)) continue;
        if (ga)
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
        if (gb)
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
      }
  });
}

/// x * W + b with x (r x in), W (in x out), b (1 x out).
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  detail::require_2d(x, "linear");
  const std::size_t r = x.rows(), in = x.cols(), out_dim = w.cols();
  if (w.rows() != in) throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  if (b.size() != out_dim) throw ShapeError("linear: bias size mismatch");
  std::vector<T> out(r * out_dim);
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    T* o = out.data() + i * out_dim;
    std::copy(bv, bv + out_dim, o);
    for (std::size_t p = 0; p < in; ++p) {
      const T xi = xv[i * in + p];
      if (xi == T(0)) continue;
      const T* wr = wv + p * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += xi * wr[j];
    }
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.graph()->make({r, out_dim}, std::move(out), {x, w, b},
                         [ix, iw, ib, r, in, out_dim](Graph<T>& g, std::size_t self) {
                           const T* gs = g.node(self).grad.data();
                           const T* xv = g.node(ix).value.data();
                           const T* wv = g.node(iw).value.data();
                           if (T* gx = g.grad_of(ix))
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t p = 0; p < in; ++p) {
                                 const T* wr = wv + p * out_dim;
                                 const T* gr = gs + i * out_dim;
                                 T acc = 0;
                                 for (std::size_t j = 0; j < out_dim; ++j) acc += gr[j] * wr[j];
                                 gx[i * in + p] += acc;
                               }
                           if (T* gw = g.grad_of(iw))
                             for (std::size_t i = 0; i < r; ++i) {
                               const T* gr = gs + i * out_dim;
                               for (std::size_t p = 0; p < in; ++p) {
                                 const T xi = xv[i * in + p];
                                 if (xi == T(0)) continue;
                                 T* wr = gw + p * out_dim;
                                 for (std::size_t j = 0; j < out_dim; ++j) wr[j] += xi * gr[j];
                               }
                             }
                           if (T* gb = g.grad_of(ib))
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < out_dim; ++j) gb[j] += gs[i * out_dim + j];
                         });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  detail::require_2d(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(r * c);
  const auto& av = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  const std::size_t ia = a.id();
  return a.graph()->make({c, r}, std::move(out), {a}, [ia, r, c](Graph<T>& g, std::size_t self) {
    if (T* ga = g.grad_of(ia)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gs[j * r + i];
    }
  });
}

/// Adds a 1 x c row to every row of a.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  detail::require_2d(a, "add_row");
  const std::size_t r = a.rows(), c = a.cols();
  if (row.size() != c) throw ShapeError("add_row: row size mismatch");
  std::vector<T> out(a.value());
  const auto& rv = row.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += rv[j];
  const std::size_t ia = a.id(), ir = row.id();
  return a.graph()->make(a.shape(), std::move(out), {a, row}, [ia, ir, r, c](Graph<T>& g, std::size_t self) {
    const auto& gs = g.node(self).grad;
    if (T* ga = g.grad_of(ia))
      for (std::size_t i = 0; i < r * c; ++i) ga[i] += gs[i];
    if (T* gr = g.grad_of(ir))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gr[j] += gs[i * c + j];
  });
}

/// Repeats a 1 x c row n times.
template <typename T>
Var<T> broadcast_rows(Var<T> row, std::size_t n) {
  const std::size_t c = row.size();
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i) std::copy(row.value().begin(), row.value().end(), out.begin() + i * c);
  const std::size_t ir = row.id();
  return row.graph()->make({n, c}, std::move(out), {row}, [ir, n, c](Graph<T>& g, std::size_t self) {
    if (T* gr = g.grad_of(ir)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gr[j] += gs[i * c + j];
    }
  });
}

/// Diagonal of a square matrix as an n x 1 column.
template <typename T>
Var<T> diag(Var<T> a) {
  detail::require_2d(a, "diag");
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("diag: matrix not square " + shape_str(a.shape()));
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i * n + i];
  const std::size_t ia = a.id();
  return a.graph()->make({n, 1}, std::move(out), {a}, [ia, n](Graph<T>& g, std::size_t self) {
    if (T* ga = g.grad_of(ia)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += gs[i];
    }
  });
}

/// out[i] = a[i, idx[i]] as an r x 1 column.
template <typename T>
Var<T> pick(Var<T> a, std::vector<std::size_t> idx) {
  detail::require_2d(a, "pick");
  const std::size_t r = a.rows(), c = a.cols();
  if (idx.size() != r) throw ShapeError("pick: index count mismatch");
  std::vector<T> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] >= c) throw IndexError("pick: column " + std::to_string(idx[i]) + " out of range");
    out[i] = a.value()[i * c + idx[i]];
  }
  const std::size_t ia = a.id();
  return a.graph()->make({r, 1}, std::move(out), {a}, [ia, c, idx = std::move(idx)](Graph<T>& g, std::size_t self) {
    if (T* ga = g.grad_of(ia)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < idx.size(); ++i) ga[i * c + idx[i]] += gs[i];
    }
  });
}

// ---------------------------------------------------------------- structure

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t r0, std::size_t r1) {
  detail::require_2d(a, "slice_rows");
  const std::size_t c = a.cols();
  if (r0 > r1 || r1 > a.rows()) throw ShapeError("slice_rows: bad range");
  std::vector<T> out(a.value().begin() + r0 * c, a.value().begin() + r1 * c);
  const std::size_t ia = a.id();
  return a.graph()->make({r1 - r0, c}, std::move(out), {a}, [ia, r0, c](Graph<T>& g, std::size_t self) {
    if (T* ga = g.grad_of(ia)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < gs.size(); ++i) ga[r0 * c + i] += gs[i];
    }
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t c0, std::size_t c1) {
  detail::require_2d(a, "slice_cols");
  const std::size_t r = a.rows(), c = a.cols(), w = c1 - c0;
  if (c0 > c1 || c1 > c) throw ShapeError("slice_cols: bad range");
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy(a.value().begin() + i * c + c0, a.value().begin() + i * c + c1, out.begin() + i * w);
  const std::size_t ia = a.id();
  return a.graph()->make({r, w}, std::move(out), {a}, [ia, r, c, c0, w](Graph<T>& g, std::size_t self) {
    if (T* ga = g.grad_of(ia)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * c + c0 + j] += gs[i * w + j];
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths, ids;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
    widths.push_back(p.cols());
    ids.push_back(p.id());
    total += p.cols();
  }
  std::vector<T> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy(v.begin() + i * widths[k], v.begin() + (i + 1) * widths[k], out.begin() + i * total + off);
    off += widths[k];
  }
  return parts[0].graph()->make({r, total}, std::move(out), parts,
                                [ids, widths, r, total](Graph<T>& g, std::size_t self) {
                                  const auto& gs = g.node(self).grad;
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (T* gp = g.grad_of(ids[k]))
                                      for (std::size_t i = 0; i < r; ++i)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          gp[i * widths[k] + j] += gs[i * total + off + j];
                                    off += widths[k];
                                  }
                                });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> heights, ids;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
    heights.push_back(p.rows());
    ids.push_back(p.id());
    total += p.rows();
  }
  std::vector<T> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return parts[0].graph()->make({total, c}, std::move(out), parts, [ids, heights, c](Graph<T>& g, std::size_t self) {
    const auto& gs = g.node(self).grad;
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t n = heights[k] * c;
      if (T* gp = g.grad_of(ids[k]))
        for (std::size_t i = 0; i < n; ++i) gp[i] += gs[off + i];
      off += n;
    }
  });
}

/// Rows of an embedding table selected by ids.
template <typename T>
Var<T> embedding(Var<T> table, const std::vector<std::size_t>& ids) {
  detail::require_2d(table, "embedding");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) throw VocabError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " + std::to_string(v));
    std::copy(table.value().begin() + ids[i] * d, table.value().begin() + (ids[i] + 1) * d, out.begin() + i * d);
  }
  const std::size_t it = table.id();
  return table.graph()->make({ids.size(), d}, std::move(out), {table}, [it, ids, d](Graph<T>& g, std::size_t self) {
    if (T* gt = g.grad_of(it)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += gs[i * d + j];
    }
  });
}

// ---------------------------------------------------------------- row-wise normalizers

template <typename T>
Var<T> row_softmax(Var<T> a) {
  detail::require_2d(a, "row_softmax");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(a.value());
  for (std::size_t i = 0; i < r; ++i) {
    T* row = out.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= s;
  }
  const std::size_t ia = a.id();
  return a.graph()->make(a.shape(), std::move(out), {a}, [ia, r, c](Graph<T>& g, std::size_t self) {
    T* ga = g.grad_of(ia);
    if (!ga) return;
    const auto& n = g.node(self);
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = n.value.data() + i * c;
      const T* gy = n.grad.data() + i * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

/// Log-sum-exp stabilized log-softmax along each row.
template <typename T>
Var<T> row_log_softmax(Var<T> a) {
  detail::require_2d(a, "row_log_softmax");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(a.value());
  for (std::size_t i = 0; i < r; ++i) {
    T* row = out.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
  }
  const std::size_t ia = a.id();
  return a.graph()->make(a.shape(), std::move(out), {a}, [ia, r, c](Graph<T>& g, std::size_t self) {
    T* ga = g.grad_of(ia);
    if (!ga) return;
    const auto& n = g.node(self);
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = n.value.data() + i * c;
      const T* gy = n.grad.data() + i * c;
      T s = 0;
      for (std::size_t j = 0; j < c; ++j) s += gy[j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gy[j] - std::exp(y[j]) * s;
    }
  });
}

/// Row-wise layer normalization with learned gain and bias (1 x c each).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  detail::require_2d(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.size() != c || beta.size() != c) throw ShapeError("layer_norm: gain/bias size mismatch");
  std::vector<T> xhat(r * c), inv_sd(r), out(r * c);
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < r; ++i) {
    T mu = 0, var = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<T>(c);
    for (std::size_t j = 0; j < c; ++j) var += (xv[i * c + j] - mu) * (xv[i * c + j] - mu);
    var /= static_cast<T>(c);
    inv_sd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mu) * inv_sd[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph()->make(
      x.shape(), std::move(out), {x, gamma, beta},
      [ix, ig, ib, r, c, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Graph<T>& g, std::size_t self) {
        const auto& gs = g.node(self).grad;
        const auto& gv = g.node(ig).value;
        if (T* gg = g.grad_of(ig))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gg[j] += gs[i * c + j] * xhat[i * c + j];
        if (T* gb = g.grad_of(ib))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += gs[i * c + j];
        if (T* gx = g.grad_of(ix))
          for (std::size_t i = 0; i < r; ++i) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T d = gs[i * c + j] * gv[j];
              m1 += d;
              m2 += d * xhat[i * c + j];
            }
            m1 /= static_cast<T>(c);
            m2 /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T d = gs[i * c + j] * gv[j];
              gx[i * c + j] += inv_sd[i] * (d - m1 - xhat[i * c + j] * m2);
            }
          }
      });
}

/// Scales each row to unit L2 norm; an all-zero row maps to zeros.
template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
  detail::require_2d(x, "l2_normalize_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(x.value()), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += out[i * c + j] * out[i * c + j];
    norms[i] = std::sqrt(s);
    const T inv = norms[i] > T(0) ? T(1) / norms[i] : T(0);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= inv;
  }
  const std::size_t ix = x.id();
  return x.graph()->make(x.shape(), std::move(out), {x}, [ix, r, c, norms = std::move(norms)](Graph<T>& g, std::size_t self) {
    T* gx = g.grad_of(ix);
    if (!gx) return;
    const auto& n = g.node(self);
    for (std::size_t i = 0; i < r; ++i) {
      if (norms[i] <= T(0)) continue;
      const T* y = n.value.data() + i * c;
      const T* gy = n.grad.data() + i * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += (gy[j] - y[j] * dot) / norms[i];
    }
  });
}

// ---------------------------------------------------------------- video ops
// Video tensors are laid out (C, T, H, W).

/// Same-padded stride-1 3D convolution.  w: (Co, Ci, kt, kh, kw), b: Co values.
template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 5) throw ShapeError("conv3d: expected (C,T,H,W) input and 5-d kernel");
  const std::size_t ci = xs[0], tt = xs[1], hh = xs[2], ww = xs[3];
  const std::size_t co = ws[0], kt = ws[2], kh = ws[3], kw = ws[4];
  if (ws[1] != ci) throw ShapeError("conv3d: channel mismatch");
  if (b.size() != co) throw ShapeError("conv3d: bias size mismatch");
  const long pt = static_cast<long>(kt / 2), ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const std::size_t plane = hh * ww, vol = tt * plane;
  std::vector<T> out(co * vol);
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  const T* bv = b.value().data();
  for (std::size_t o = 0; o < co; ++o) std::fill(out.begin() + o * vol, out.begin() + (o + 1) * vol, bv[o]);
  // Iterate kernel taps outermost so the innermost loop runs over contiguous W.
  auto for_each_tap = [=](auto&& body) {
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t a = 0; a < kt; ++a)
          for (std::size_t p = 0; p < kh; ++p)
            for (std::size_t q = 0; q < kw; ++q) {
              const std::size_t widx = (((o * ci + c) * kt + a) * kh + p) * kw + q;
              const long dt = static_cast<long>(a) - pt, dh = static_cast<long>(p) - ph, dw = static_cast<long>(q) - pw;
              const long t0 = std::max(0L, -dt), t1 = std::min(static_cast<long>(tt), static_cast<long>(tt) - dt);
              const long h0 = std::max(0L, -dh), h1 = std::min(static_cast<long>(hh), static_cast<long>(hh) - dh);
              const long w0 = std::max(0L, -dw), w1 = std::min(static_cast<long>(ww), static_cast<long>(ww) - dw);
              for (long t = t0; t < t1; ++t)
                for (long h = h0; h < h1; ++h) {
                  const std::size_t orow = o * vol + static_cast<std::size_t>(t) * plane + static_cast<std::size_t>(h) * ww;
                  const std::size_t irow = c * vol + static_cast<std::size_t>(t + dt) * plane +
                                           static_cast<std::size_t>(h + dh) * ww;
                  body(widx, orow, irow, w0, w1, dw);
                }
            }
  };
  for_each_tap([&](std::size_t widx, std::size_t orow, std::size_t irow, long w0, long w1, long dw) {
    const T k = wv[widx];
    T* op = out.data() + orow;
    const T* ip = xv + irow;
    for (long j = w0; j < w1; ++j) op[j] += k * ip[j + dw];
  });
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.graph()->make({co, tt, hh, ww}, std::move(out), {x, w, b},
                         [ix, iw, ib, co, vol, for_each_tap](Graph<T>& g, std::size_t self) {
                           const T* gs = g.node(self).grad.data();
                           const T* xv = g.node(ix).value.data();
                           const T* wv = g.node(iw).value.data();
                           T* gx = g.grad_of(ix);
                           T* gw = g.grad_of(iw);
                           if (T* gb = g.grad_of(ib))
                             for (std::size_t o = 0; o < co; ++o)
                               for (std::size_t i = 0; i < vol; ++i) gb[o] += gs[o * vol + i];
                           if (!gx && !gw) return;
                           for_each_tap([&](std::size_t widx, std::size_t orow, std::size_t irow, long w0, long w1, long dw) {
                             const T* gp = gs + orow;
                             if (gw) {
                               const T* ip = xv + irow;
                               T acc = 0;
                               for (long j = w0; j < w1; ++j) acc += gp[j] * ip[j + dw];
                               gw[widx] += acc;
                             }
                             if (gx) {
                               const T k = wv[widx];
                               T* xp = gx + irow;
                               for (long j = w0; j < w1; ++j) xp[j + dw] += k * gp[j];
                             }
                           });
                         });
}

/// Non-overlapping (1, ph, pw) max pooling over the spatial axes.
template <typename T>
Var<T> max_pool_spatial(Var<T> x, std::size_t ph, std::size_t pw) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("max_pool_spatial: expected (C,T,H,W)");
  const std::size_t c = xs[0], tt = xs[1], hh = xs[2], ww = xs[3];
  const std::size_t oh = hh / ph, ow = ww / pw;
  if (oh == 0 || ow == 0) throw ConfigError("max_pool_spatial: pooling window larger than feature map");
  std::vector<T> out(c * tt * oh * ow);
  std::vector<std::size_t> arg(out.size());
  const auto& xv = x.value();
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < tt; ++t)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j, ++k) {
          std::size_t best = ((ch * tt + t) * hh + i * ph) * ww + j * pw;
          for (std::size_t a = 0; a < ph; ++a)
            for (std::size_t bb = 0; bb < pw; ++bb) {
              const std::size_t idx = ((ch * tt + t) * hh + i * ph + a) * ww + j * pw + bb;
              if (xv[idx] > xv[best]) best = idx;
            }
          out[k] = xv[best];
          arg[k] = best;
        }
  const std::size_t ix = x.id();
  return x.graph()->make({c, tt, oh, ow}, std::move(out), {x}, [ix, arg = std::move(arg)](Graph<T>& g, std::size_t self) {
    if (T* gx = g.grad_of(ix)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += gs[i];
    }
  });
}

/// Global max over the spatial axes of (C,T,H,W) -> T x C.
template <typename T>
Var<T> spatial_max(Var<T> x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("spatial_max: expected (C,T,H,W)");
  const std::size_t c = xs[0], tt = xs[1], plane = xs[2] * xs[3];
  std::vector<T> out(tt * c);
  std::vector<std::size_t> arg(tt * c);
  const auto& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < tt; ++t) {
      const std::size_t base = (ch * tt + t) * plane;
      std::size_t best = base;
      for (std::size_t i = 1; i < plane; ++i)
        if (xv[base + i] > xv[best]) best = base + i;
      out[t * c + ch] = xv[best];
      arg[t * c + ch] = best;
    }
  const std::size_t ix = x.id();
  return x.graph()->make({tt, c}, std::move(out), {x}, [ix, arg = std::move(arg)](Graph<T>& g, std::size_t self) {
    if (T* gx = g.grad_of(ix)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += gs[i];
    }
  });
}

/// (C,T,H,W) -> T x (C*H*W), one row per frame.
template <typename T>
Var<T> frames_to_rows(Var<T> x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("frames_to_rows: expected (C,T,H,W)");
  const std::size_t c = xs[0], tt = xs[1], plane = xs[2] * xs[3], d = c * plane;
  std::vector<T> out(tt * d);
  const auto& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < tt; ++t)
      std::copy(xv.begin() + (ch * tt + t) * plane, xv.begin() + (ch * tt + t + 1) * plane,
                out.begin() + t * d + ch * plane);
  const std::size_t ix = x.id();
  return x.graph()->make({tt, d}, std::move(out), {x}, [ix, c, tt, plane, d](Graph<T>& g, std::size_t self) {
    if (T* gx = g.grad_of(ix)) {
      const auto& gs = g.node(self).grad;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t t = 0; t < tt; ++t)
          for (std::size_t i = 0; i < plane; ++i) gx[(ch * tt + t) * plane + i] += gs[t * d + ch * plane + i];
    }
  });
}

}  // namespace siflip::ad

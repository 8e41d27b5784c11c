#pragma once

#include <cmath>
#include <vector>

#include "siflip/layers.hpp"

namespace siflip {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over every parameter of a store.  A parameter whose gradient has been
/// zero since the start keeps its value exactly.
template <typename T>
class Adam {
 public:
  Adam(ParameterStore<T>& store, AdamOptions opts) : store_(store), opts_(opts) {
    for (auto& p : store.all()) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  std::size_t steps() const { return step_; }
  void set_learning_rate(double lr) { opts_.learning_rate = lr; }

  void step() {
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    std::size_t k = 0;
    for (auto& p : store_.all()) {
      auto& m = m_[k];
      auto& v = v_[k];
      ++k;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
        const double update = opts_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
      }
    }
  }

 private:
  ParameterStore<T>& store_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

template <typename T>
double gradient_norm(const ParameterStore<T>& store) {
  double s = 0.0;
  for (const auto& p : store.all())
    for (auto g : p.grad) s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_gradients(ParameterStore<T>& store, double max_norm) {
  const double norm = gradient_norm(store);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : store.all())
      for (auto& g : p.grad) g *= s;
  }
  return norm;
}

}  // namespace siflip

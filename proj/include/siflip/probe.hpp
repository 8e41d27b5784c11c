#pragma once

// Linear speaker probe: multinomial logistic regression on frozen features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "siflip/errors.hpp"

namespace siflip {

struct ProbeOptions {
  std::size_t iterations = 300;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

struct ProbeData {
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> labels;
};

/// Fits a softmax classifier on standardized `train` features by full-batch
/// gradient descent from zero weights and returns accuracy on `test`.  Fully
/// deterministic.
inline double probe_accuracy(const ProbeData& train, const ProbeData& test, const ProbeOptions& opts = {}) {
  if (train.features.empty() || test.features.empty()) throw PipelineError("speaker probe needs train and test samples");
  if (train.features.size() != train.labels.size() || test.features.size() != test.labels.size())
    throw ShapeError("speaker probe: features and labels differ in count");
  const std::set<std::size_t> classes(train.labels.begin(), train.labels.end());
  if (classes.size() < 2) throw PipelineError("speaker probe needs at least 2 speakers in training data");
  const std::size_t k = *classes.rbegin() + 1;
  const std::size_t d = train.features.front().size();
  for (const auto* set : {&train, &test})
    for (const auto& f : set->features)
      if (f.size() != d) throw ShapeError("speaker probe: inconsistent feature sizes");

  std::vector<double> mean(d, 0.0), scale(d, 0.0);
  const double n = static_cast<double>(train.features.size());
  for (const auto& f : train.features)
    for (std::size_t j = 0; j < d; ++j) mean[j] += f[j] / n;
  for (const auto& f : train.features)
    for (std::size_t j = 0; j < d; ++j) scale[j] += (f[j] - mean[j]) * (f[j] - mean[j]) / n;
  for (auto& s : scale) s = s > 1e-12 ? 1.0 / std::sqrt(s) : 0.0;
  auto standardize = [&](const std::vector<double>& f) {
    std::vector<double> x(d);
    for (std::size_t j = 0; j < d; ++j) x[j] = (f[j] - mean[j]) * scale[j];
    return x;
  };
  std::vector<std::vector<double>> xs;
  for (const auto& f : train.features) xs.push_back(standardize(f));

  std::vector<double> w(d * k, 0.0), b(k, 0.0);
  auto scores = [&](const std::vector<double>& x) {
    std::vector<double> s(b);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < k; ++c) s[c] += x[j] * w[j * k + c];
    return s;
  };
  std::vector<double> gw(d * k), gb(k);
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      auto s = scores(xs[i]);
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (auto& v : s) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < k; ++c) {
        const double delta = (s[c] / z - (c == train.labels[i] ? 1.0 : 0.0)) / n;
        gb[c] += delta;
        for (std::size_t j = 0; j < d; ++j) gw[j * k + c] += delta * xs[i][j];
      }
    }
    for (std::size_t q = 0; q < w.size(); ++q) w[q] -= opts.learning_rate * (gw[q] + opts.l2 * w[q]);
    for (std::size_t c = 0; c < k; ++c) b[c] -= opts.learning_rate * gb[c];
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.features.size(); ++i) {
    auto s = scores(standardize(test.features[i]));
    const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    correct += best == test.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test.features.size());
}

}  // namespace siflip

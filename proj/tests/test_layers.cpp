#include <gtest/gtest.h>

#include <cmath>

#include "siflip/layers.hpp"
#include "test_util.hpp"

using namespace siflip;
using siflip::testing::random_values;

TEST(Positions, MatchSinCosFormula) {
  const std::size_t len = 7, dim = 6;
  const auto pe = sinusoidal_positions<double>(len, dim);
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t k = 0; k < dim / 2; ++k) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(dim));
      EXPECT_NEAR(pe[pos * dim + 2 * k], std::sin(angle), 1e-15);
      EXPECT_NEAR(pe[pos * dim + 2 * k + 1], std::cos(angle), 1e-15);
    }
  EXPECT_EQ(pe[0], 0.0);
  EXPECT_EQ(pe[1], 1.0);
}

TEST(ParameterStore, RejectsDuplicateNamesAndHashesValues) {
  ParameterStore<double> s;
  auto& p = s.add("a", {2, 2});
  EXPECT_THROW(s.add("a", {1}), ConfigError);
  const auto h0 = s.hash();
  p.value[3] = 1.0;
  EXPECT_NE(s.hash(), h0);
  p.value[3] = 0.0;
  EXPECT_EQ(s.hash(), h0);
  EXPECT_EQ(s.count(), 4u);
  EXPECT_EQ(s.find("a"), &p);
  EXPECT_EQ(s.find("b"), nullptr);
}

TEST(Linear, MatchesLoopOracle) {
  ParameterStore<double> s;
  Rng rng(1);
  Linear<double> lin(s, "l", 3, 2, rng);
  lin.bias->value = {0.5, -0.25};
  std::mt19937_64 r(2);
  const auto x = random_values(6, r);
  Graph<double> g;
  auto y = lin(g.constant({2, 3}, x));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double v = lin.bias->value[j];
      for (std::size_t k = 0; k < 3; ++k) v += x[i * 3 + k] * lin.weight->value[k * 2 + j];
      EXPECT_NEAR(y.at(i, j), v, 1e-14);
    }
}

TEST(Gru, StepMatchesScalarOracle) {
  ParameterStore<double> s;
  Rng rng(3);
  const std::size_t in = 3, hd = 2;
  Gru<double> gru(s, "gru", in, hd, rng);
  std::mt19937_64 r(4);
  gru.b_input->value = random_values(3 * hd, r);
  gru.b_hidden->value = random_values(3 * hd, r);
  const auto x = random_values(in, r), h = random_values(hd, r);
  Graph<double> g;
  auto out = gru.step(g.constant({1, in}, x), g.constant({1, hd}, h));

  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto gate = [&](std::size_t col) {
    double xi = gru.b_input->value[col], hh = gru.b_hidden->value[col];
    for (std::size_t k = 0; k < in; ++k) xi += x[k] * gru.w_input->value[k * 3 * hd + col];
    for (std::size_t k = 0; k < hd; ++k) hh += h[k] * gru.w_hidden->value[k * 3 * hd + col];
    return std::pair{xi, hh};
  };
  for (std::size_t j = 0; j < hd; ++j) {
    auto [rx, rh] = gate(j);
    auto [zx, zh] = gate(hd + j);
    auto [nx, nh] = gate(2 * hd + j);
    const double rr = sig(rx + rh), z = sig(zx + zh), n = std::tanh(nx + rr * nh);
    EXPECT_NEAR(out.value()[j], (1.0 - z) * n + z * h[j], 1e-14);
  }
}

TEST(Gru, ReverseRunKeepsTimeOrder) {
  ParameterStore<double> s;
  Rng rng(5);
  Gru<double> gru(s, "gru", 2, 3, rng);
  std::mt19937_64 r(6);
  const auto xs = random_values(8, r);
  Graph<double> g;
  auto run = gru.run(g.constant({4, 2}, xs), gru.zero_state(g), true);
  // The state at row 0 is the last one computed when running backwards.
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(run.states.at(0, j), run.last.value()[j]);
  EXPECT_EQ(run.states.rows(), 4u);
}

TEST(Transformer, PreservesShapeAndRejectsBadHeadCount) {
  ParameterStore<double> s;
  Rng rng(7);
  TransformerEncoder<double> enc(s, "t", 2, 8, 2, 16, 0.1, rng);
  std::mt19937_64 r(8);
  Graph<double> g;
  auto y = enc(g.constant({5, 8}, random_values(40, r)), ForwardMode{});
  EXPECT_EQ(y.shape(), (Shape{5, 8}));
  ParameterStore<double> s2;
  EXPECT_THROW(MultiHeadSelfAttention<double>(s2, "a", 6, 4, rng), ConfigError);
}

TEST(Transformer, GradientMatchesFiniteDifferences) {
  ParameterStore<double> s;
  Rng rng(9);
  TransformerLayer<double> layer(s, "t", 4, 2, 6, 0.0, rng);
  std::mt19937_64 r(10);
  siflip::testing::Inputs in = {{{3, 4}, random_values(12, r)}};
  const auto weights = random_values(12, r);
  const double err = siflip::testing::gradient_check(in, [&](Graph<double>& g, const std::vector<Var<double>>& x) {
    auto y = layer(x[0], ForwardMode{});
    return ad::sum_all(ad::mul(y, g.constant(y.shape(), weights)));
  });
  EXPECT_LT(err, 1e-5);
}

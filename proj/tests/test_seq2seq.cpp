#include <gtest/gtest.h>

#include <cmath>

#include "siflip/seq2seq.hpp"
#include "test_util.hpp"

using namespace siflip;
using siflip::testing::random_values;

namespace {

Seq2SeqConfig tiny() {
  Seq2SeqConfig c;
  c.hidden = 4;
  c.embed = 3;
  c.mlp_hidden = 5;
  c.max_len = 6;
  return c;
}

}  // namespace

TEST(Seq2Seq, CategoryCountIncludesSpecialTokens) {
  ParameterStore<double> s;
  Rng rng(1);
  Seq2Seq<double> m(s, 4, 7, tiny(), rng);
  EXPECT_EQ(m.categories(), 10u);
  EXPECT_EQ(m.targets({0, 6}), (std::vector<std::size_t>{3, 9, tokens::eos}));
  EXPECT_THROW(m.targets({7}), VocabError);
  EXPECT_THROW(m.targets({0, 0, 0, 0, 0, 0}), ShapeError);
}

TEST(Seq2Seq, AttentionMatchesLoopOracle) {
  ParameterStore<double> s;
  Rng rng(2);
  Seq2Seq<double> m(s, 4, 5, tiny(), rng);
  std::mt19937_64 r(3);
  const std::size_t t = 5, h = 4;
  const auto hd = random_values(h, r), he = random_values(t * h, r);
  Graph<double> g;
  auto att = m.attention(g.constant({1, h}, hd), g.constant({t, h}, he));
  const auto& W = s.find("s2s.attn_proj")->value;
  std::vector<double> q(h, 0.0), score(t, 0.0);
  for (std::size_t j = 0; j < h; ++j)
    for (std::size_t k = 0; k < h; ++k) q[j] += hd[k] * W[k * h + j];
  double z = 0;
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < h; ++j) score[i] += q[j] * he[i * h + j];
  }
  const double mx = *std::max_element(score.begin(), score.end());
  for (auto& v : score) z += std::exp(v - mx);
  double wsum = 0;
  for (std::size_t i = 0; i < t; ++i) {
    const double w = std::exp(score[i] - mx) / z;
    EXPECT_NEAR(att.weights.value()[i], w, 1e-12);
    wsum += att.weights.value()[i];
  }
  EXPECT_NEAR(wsum, 1.0, 1e-12);
  for (std::size_t j = 0; j < h; ++j) {
    double c = 0;
    for (std::size_t i = 0; i < t; ++i) c += att.weights.value()[i] * he[i * h + j];
    EXPECT_NEAR(att.context.value()[j], c, 1e-12);
  }
}

TEST(Seq2Seq, PredictedTextLossMatchesStepwiseDecoding) {
  ParameterStore<double> s;
  Rng rng(4);
  Seq2Seq<double> m(s, 4, 5, tiny(), rng);
  std::mt19937_64 r(5);
  const auto v = random_values(6 * 4, r);
  const std::vector<std::size_t> words{2, 0, 4};
  Graph<double> g;
  auto vin = g.constant({6, 4}, v);
  const double loss = m.predicted_text_loss(vin, words).item();

  auto enc = m.encode_sequence(vin);
  auto h = enc.last;
  std::size_t prev = tokens::bos;
  double total = 0;
  const auto tgt = m.targets(words);
  for (auto tok : tgt) {
    auto step = m.decode_step(prev, h, enc.states);
    double z = 0;
    for (double lp : step.log_probs.value()) z += std::exp(lp);
    EXPECT_NEAR(z, 1.0, 1e-12);
    total += step.log_probs.value()[tok];
    h = step.state;
    prev = tok;
  }
  EXPECT_NEAR(loss, -total / tgt.size(), 1e-12);
}

TEST(Seq2Seq, GreedyDecodingNeverEmitsSpecialTokens) {
  std::mt19937_64 r(6);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParameterStore<double> s;
    Rng rng(seed);
    Seq2Seq<double> m(s, 4, 5, tiny(), rng);
    // Push the PAD and BOS logits far above everything else.
    auto& out = m.output_layer();
    out.bias->value[tokens::pad] = 100.0;
    out.bias->value[tokens::bos] = 100.0;
    Graph<double> g;
    const auto words = m.greedy_decode(g.constant({3, 4}, random_values(12, r)));
    EXPECT_LE(words.size(), tiny().max_len);
    for (auto w : words) EXPECT_LT(w, 5u);
  }
}

TEST(Seq2Seq, GreedyDecodingRespectsMaxLen) {
  ParameterStore<double> s;
  Rng rng(7);
  Seq2Seq<double> m(s, 4, 5, tiny(), rng);
  m.output_layer().bias->value[tokens::eos] = -100.0;
  m.output_layer().bias->value[tokens::first_word] = 100.0;
  Graph<double> g;
  auto v = g.constant({3, 4}, std::vector<double>(12, 0.2));
  EXPECT_EQ(m.greedy_decode(v).size(), tiny().max_len);
  EXPECT_EQ(m.greedy_decode(v, 2), (std::vector<std::size_t>{0, 0}));
}

TEST(Seq2Seq, GradientMatchesFiniteDifferences) {
  ParameterStore<double> s;
  Rng rng(8);
  Seq2Seq<double> m(s, 3, 4, tiny(), rng);
  std::mt19937_64 r(9);
  siflip::testing::Inputs in = {{{4, 3}, random_values(12, r)}};
  const double err = siflip::testing::gradient_check(in, [&](Graph<double>&, const std::vector<Var<double>>& x) {
    return m.predicted_text_loss(x[0], {1, 3});
  });
  EXPECT_LT(err, 1e-5);
}

TEST(Seq2Seq, EmptyInputIsShapeError) {
  ParameterStore<double> s;
  Rng rng(8);
  Seq2Seq<double> m(s, 3, 4, tiny(), rng);
  Graph<double> g;
  EXPECT_THROW(m.predicted_text_loss(g.constant({0, 3}, {}), {1}), ShapeError);
}

// Acceptance checks.  Usage: siflip_acceptance [N ...]  (default: all)
// Prints one "criterion N: PASS|FAIL" line per criterion; exits 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "siflip/ablation.hpp"
#include "siflip/trainer.hpp"

using namespace siflip;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

// ------------------------------------------------------------ shared configs

ModelConfig micro_model() {
  ModelConfig m;
  m.encoder.conv_channels = {2};
  m.encoder.recurrent_hidden = 4;
  m.encoder.model_dim = 8;
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

/// Full model at desk size, as used for the overfit and ablation checks.
TrainConfig benchmark_config() {
  TrainConfig t;
  t.model.encoder.conv_channels = {4, 8, 8};
  t.lambda = 0.1;
  t.eval_every = 0;
  return t;
}

// ------------------------------------------------------------ criterion 1

Outcome grl_exactness() {
  std::mt19937_64 rng(101);
  double worst = 0.0, worst_classifier = 0.0, worst_model = 0.0, largest_plain = 0.0;
  std::size_t checked = 0;
  for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
    for (int k = 0; k < 100; ++k) {
      std::uniform_int_distribution<std::size_t> dim(1, 9);
      const Shape shape{dim(rng), dim(rng)};
      const auto x = uniform(shape[0] * shape[1], rng, -3, 3);
      const auto upstream = uniform(x.size(), rng, -3, 3);
      Graph<double> g;
      auto in = g.input(shape, x);
      g.backward(ad::sum_all(ad::mul(ad::grad_reverse(in, lambda), g.constant(shape, upstream))));
      for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(in.grad()[i] + lambda * upstream[i]));
      ++checked;
    }

    // Classifier parameters see the same gradient with and without the GRL.
    ParameterStore<double> store;
    Rng init(7);
    SpeakerClassifier<double> clf(store, 6, 5, 3, init);
    const auto frames = uniform(5 * 3, rng);
    auto classifier_grads = [&](bool reverse) {
      store.zero_grad();
      Graph<double> g;
      auto pooled = speaker_pool(g.input({5, 3}, frames));
      g.backward(speaker_ce_loss(clf.logits(reverse ? ad::grad_reverse(pooled, lambda) : pooled), 1));
      std::vector<double> out;
      for (const auto& p : store.all()) out.insert(out.end(), p.grad.begin(), p.grad.end());
      return out;
    };
    const auto a = classifier_grads(false), b = classifier_grads(true);
    for (std::size_t i = 0; i < a.size(); ++i) worst_classifier = std::max(worst_classifier, std::abs(a[i] - b[i]));

    // End to end: encoder gradients of L_ED are exactly -lambda times the unreversed ones.
    GenConfig gc;
    gc.speakers = 3;
    gc.unseen = 0;
    gc.vocab = 6;
    gc.min_words = gc.max_words = 2;
    gc.min_frames_per_word = gc.max_frames_per_word = 2;
    gc.t_max = 4;
    gc.height = gc.width = 4;
    gc.pattern_components = 2;
    gc.train_per_speaker = 1;
    gc.seen_test_per_speaker = 0;
    gc.unseen_per_speaker = 0;
    const Corpus corpus = generate_corpus(gc, 3);
    const auto& sample = corpus.samples[1];
    SiflipModel<double> model(micro_model(), ModelShape::of(corpus), 5);
    auto encoder_grads = [&](bool reverse) {
      model.params().zero_grad();
      Graph<double> g;
      auto feats = model.encoder().forward(g, sample.frames, sample.length, ForwardMode{});
      auto pooled = speaker_pool(model.speaker_frames(feats));
      g.backward(speaker_ce_loss(model.speaker().logits(reverse ? ad::grad_reverse(pooled, lambda) : pooled), sample.speaker_id));
      std::vector<double> out;
      for (const auto& p : model.params().all())
        if (p.name.rfind("encoder.", 0) == 0) out.insert(out.end(), p.grad.begin(), p.grad.end());
      return out;
    };
    const auto plain = encoder_grads(false), reversed = encoder_grads(true);
    for (std::size_t i = 0; i < plain.size(); ++i) {
      worst_model = std::max(worst_model, std::abs(reversed[i] + lambda * plain[i]));
      largest_plain = std::max(largest_plain, std::abs(plain[i]));
    }
  }
  const bool pass = worst <= 1e-9 && worst_classifier <= 1e-9 && worst_model <= 1e-9 && largest_plain > 0.0;
  return {pass, std::to_string(checked) + " tensors, max |dx + lambda*g| " + fmt(worst) + ", classifier diff " +
                    fmt(worst_classifier) + ", encoder diff " + fmt(worst_model) +
                    " (largest encoder gradient " + fmt(largest_plain) + ")"};
}

// ------------------------------------------------------------ criterion 2

double naive_infonce(const std::vector<double>& ep, const std::vector<double>& en, std::size_t n, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double den = std::exp(ep[i * n + i] / tau);
    for (std::size_t j = 0; j < n; ++j) den += std::exp(en[j * n + j] / tau);
    total += std::log(std::exp(ep[i * n + i] / tau) / den);
  }
  return -total / static_cast<double>(n);
}

double naive_ce(const std::vector<double>& ep, std::size_t n, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double den = 0;
    for (std::size_t j = 0; j < n; ++j) den += std::exp(ep[i * n + j] / tau);
    total += std::log(std::exp(ep[i * n + i] / tau) / den);
  }
  return -total / static_cast<double>(n);
}

const std::vector<double>& values_of(ParameterStore<double>& s, const std::string& name) {
  const auto* p = s.find(name);
  if (!p) throw std::runtime_error("no parameter " + name);
  return p->value;
}

// y = x W + b with W stored in x out.
std::vector<double> naive_linear(const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& b) {
  const std::size_t in = x.size(), out = b.size();
  std::vector<double> y(b);
  for (std::size_t j = 0; j < out; ++j)
    for (std::size_t k = 0; k < in; ++k) y[j] += x[k] * w[k * out + j];
  return y;
}

double naive_speaker_loss(ParameterStore<double>& s, const std::vector<double>& frames, std::size_t t, std::size_t c,
                          std::size_t speaker) {
  std::vector<double> pooled(2 * c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < t; ++i) mean += frames[i * c + j];
    mean /= static_cast<double>(t);
    double var = 0;
    for (std::size_t i = 0; i < t; ++i) var += (frames[i * c + j] - mean) * (frames[i * c + j] - mean);
    pooled[j] = mean;
    pooled[c + j] = std::sqrt(var / static_cast<double>(t));
  }
  auto h = naive_linear(pooled, values_of(s, "speaker.hidden.weight"), values_of(s, "speaker.hidden.bias"));
  for (auto& v : h) v = std::max(v, 0.0);
  const auto logits = naive_linear(h, values_of(s, "speaker.output.weight"), values_of(s, "speaker.output.bias"));
  double z = 0;
  for (double l : logits) z += std::exp(l);
  return -std::log(std::exp(logits[speaker]) / z);
}

struct NaiveGru {
  std::vector<double> wi, wh, bi, bh;
  std::size_t in, hd;

  NaiveGru(ParameterStore<double>& s, const std::string& name, std::size_t in_dim, std::size_t hidden)
      : wi(values_of(s, name + ".w_input")), wh(values_of(s, name + ".w_hidden")), bi(values_of(s, name + ".b_input")),
        bh(values_of(s, name + ".b_hidden")), in(in_dim), hd(hidden) {}

  std::vector<double> step(const std::vector<double>& x, const std::vector<double>& h) const {
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> gx(3 * hd), gh(3 * hd), out(hd);
    for (std::size_t col = 0; col < 3 * hd; ++col) {
      gx[col] = bi[col];
      gh[col] = bh[col];
      for (std::size_t k = 0; k < in; ++k) gx[col] += x[k] * wi[k * 3 * hd + col];
      for (std::size_t k = 0; k < hd; ++k) gh[col] += h[k] * wh[k * 3 * hd + col];
    }
    for (std::size_t j = 0; j < hd; ++j) {
      const double r = sig(gx[j] + gh[j]), z = sig(gx[hd + j] + gh[hd + j]);
      const double n = std::tanh(gx[2 * hd + j] + r * gh[2 * hd + j]);
      out[j] = (1.0 - z) * n + z * h[j];
    }
    return out;
  }
};

/// Teacher-forced decoder loss written with plain loops over stored weights.
double naive_text_loss(ParameterStore<double>& s, const std::vector<double>& v, std::size_t t, std::size_t d,
                       const Seq2SeqConfig& cfg, std::size_t categories, const std::vector<std::size_t>& words) {
  const std::size_t hd = cfg.hidden;
  NaiveGru enc(s, "s2s.encoder", d, hd), dec(s, "s2s.decoder", cfg.embed, hd);
  std::vector<std::vector<double>> states;
  std::vector<double> h(hd, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    h = enc.step(std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(i * d), v.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)), h);
    states.push_back(h);
  }
  std::vector<std::size_t> targets;
  for (auto w : words) targets.push_back(w + 3);
  targets.push_back(2);
  const auto& emb = values_of(s, "s2s.embedding");
  const auto& wa = values_of(s, "s2s.attn_proj");
  std::size_t prev = 1;
  double total = 0;
  for (auto tok : targets) {
    std::vector<double> x(emb.begin() + static_cast<std::ptrdiff_t>(prev * cfg.embed),
                          emb.begin() + static_cast<std::ptrdiff_t>((prev + 1) * cfg.embed));
    h = dec.step(x, h);
    std::vector<double> q(hd, 0.0), score(t, 0.0), ctx(hd, 0.0);
    for (std::size_t j = 0; j < hd; ++j)
      for (std::size_t k = 0; k < hd; ++k) q[j] += h[k] * wa[k * hd + j];
    double z = 0;
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < hd; ++j) score[i] += q[j] * states[i][j];
      z += std::exp(score[i]);
    }
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < hd; ++j) ctx[j] += std::exp(score[i]) / z * states[i][j];
    std::vector<double> cat(h);
    cat.insert(cat.end(), ctx.begin(), ctx.end());
    auto hidden = naive_linear(cat, values_of(s, "s2s.mlp_hidden.weight"), values_of(s, "s2s.mlp_hidden.bias"));
    for (auto& u : hidden) u = std::tanh(u);
    const auto logits = naive_linear(hidden, values_of(s, "s2s.mlp_out.weight"), values_of(s, "s2s.mlp_out.bias"));
    double zl = 0;
    for (std::size_t k = 0; k < categories; ++k) zl += std::exp(logits[k]);
    total += std::log(std::exp(logits[tok]) / zl);
    prev = tok;
  }
  return -total / static_cast<double>(targets.size());
}

Outcome loss_oracles() {
  std::mt19937_64 rng(202);
  double worst_cl = 0, worst_ce = 0, worst_ed = 0, worst_pt = 0, worst_closed = 0;
  for (int k = 0; k < 100; ++k) {
    std::uniform_int_distribution<std::size_t> len(1, 12);
    const std::size_t n = len(rng);
    const auto ep = uniform(n * n, rng), en = uniform(n * n, rng);
    const double tau = std::uniform_real_distribution<double>(0.05, 2.0)(rng);
    Graph<double> g;
    auto p = g.constant({n, n}, ep), q = g.constant({n, n}, en);
    worst_cl = std::max(worst_cl, std::abs(infonce_loss(p, q, g.scalar(tau)).item() - naive_infonce(ep, en, n, tau)));
    worst_ce = std::max(worst_ce, std::abs(alignment_ce_loss(p, g.scalar(tau)).item() - naive_ce(ep, n, tau)));

    // Closed forms.
    const double c = uniform(1, rng)[0];
    auto flat = g.constant({n, n}, std::vector<double>(n * n, c));
    worst_closed = std::max(worst_closed, std::abs(infonce_loss(flat, flat, g.scalar(tau)).item() - std::log(1.0 + n)));
    worst_closed = std::max(worst_closed, std::abs(alignment_ce_loss(flat, g.scalar(tau)).item() - std::log(static_cast<double>(n))));
    const std::size_t speakers = 2 + k % 7;
    worst_closed = std::max(worst_closed, std::abs(speaker_ce_loss(g.constant({1, speakers}, std::vector<double>(speakers, c)), k % speakers).item() -
                                                   std::log(static_cast<double>(speakers))));

    // Speaker loss through pooling and the classifier.
    {
      ParameterStore<double> s;
      Rng init(static_cast<std::uint64_t>(k));
      const std::size_t ch = 1 + k % 5, frames = len(rng);
      SpeakerClassifier<double> clf(s, 2 * ch, 6, speakers, init);
      for (auto& prm : s.all())
        for (auto& v : prm.value) v = uniform(1, rng)[0];
      const auto x = uniform(frames * ch, rng, -2, 2);
      Graph<double> h;
      const double got = speaker_ce_loss(clf.logits(speaker_pool(h.constant({frames, ch}, x))), k % speakers).item();
      worst_ed = std::max(worst_ed, std::abs(got - naive_speaker_loss(s, x, frames, ch, k % speakers)));
    }

    // Predicted-text loss through the attention decoder.
    {
      ParameterStore<double> s;
      Rng init(static_cast<std::uint64_t>(1000 + k));
      Seq2SeqConfig cfg;
      cfg.hidden = 5;
      cfg.embed = 3;
      cfg.mlp_hidden = 6;
      cfg.max_len = 8;
      const std::size_t d = 4, vocab = 6, t = len(rng);
      Seq2Seq<double> model(s, d, vocab, cfg, init);
      std::uniform_int_distribution<std::size_t> word(0, vocab - 1), count(1, 4);
      std::vector<std::size_t> words(count(rng));
      for (auto& w : words) w = word(rng);
      const auto v = uniform(t * d, rng, -2, 2);
      Graph<double> h;
      const double got = model.predicted_text_loss(h.constant({t, d}, v), words).item();
      worst_pt = std::max(worst_pt, std::abs(got - naive_text_loss(s, v, t, d, cfg, model.categories(), words)));
    }
  }
  const double worst = std::max({worst_cl, worst_ce, worst_ed, worst_pt, worst_closed});
  return {worst <= 1e-8, "max abs diff L_CL " + fmt(worst_cl) + ", L_CE " + fmt(worst_ce) + ", L_ED " + fmt(worst_ed) + ", L_PT " +
                             fmt(worst_pt) + ", closed forms " + fmt(worst_closed)};
}

// ------------------------------------------------------------ criterion 3

Outcome full_model_gradient() {
  GenConfig gc;
  gc.speakers = 3;
  gc.unseen = 0;
  gc.vocab = 6;
  gc.min_words = gc.max_words = 2;
  gc.min_frames_per_word = gc.max_frames_per_word = 2;
  gc.t_max = 4;
  gc.height = gc.width = 4;
  gc.pattern_components = 2;
  gc.train_per_speaker = 1;
  gc.seen_test_per_speaker = 0;
  gc.unseen_per_speaker = 0;
  const Corpus corpus = generate_corpus(gc, 11);
  const auto& sample = corpus.samples[2];
  if (sample.length != 4) return {false, "micro sample has T != 4"};

  TrainConfig tc;
  tc.model = micro_model();
  SiflipModel<double> model(tc.model, ModelShape::of(corpus), 13);
  const auto positive = assign_frame_labels(sample.boundaries, sample.words, sample.length);
  Rng neg_rng(17);
  const auto negative = make_negative_labels(positive, corpus.lexicon.size(), neg_rng);
  BranchOptions opts;
  opts.lambda = tc.lambda;

  auto parts = [&]() {
    Graph<double> g;
    auto t = model.losses(g, sample, positive, &negative, opts, ForwardMode{}, ForwardMode{});
    return std::pair{t.l_pt.item() + tc.alpha * t.l_id.item(), tc.beta * t.l_ed.item()};
  };
  model.params().zero_grad();
  {
    Graph<double> g;
    auto t = model.losses(g, sample, positive, &negative, opts, ForwardMode{}, ForwardMode{});
    g.backward(total_loss(t, tc.alpha, tc.beta));
  }

  // The GRL flips the L_ED contribution for parameters upstream of it, so the
  // reference is d(L_PT + a L_ID)/dp + s d(b L_ED)/dp with s = -lambda there.
  std::mt19937_64 rng(19);
  auto& params = model.params().all();
  double worst = 0.0;
  std::size_t sampled = 0, upstream = 0;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (sampled < 20) {
    const std::size_t pi = std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
    auto& p = params[pi];
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p.value.size() - 1)(rng);
    if (!seen.insert({pi, i}).second) continue;
    const bool before_grl = p.name.rfind("encoder.", 0) == 0;
    const double h = 1e-6, x0 = p.value[i];
    p.value[i] = x0 + h;
    const auto up = parts();
    p.value[i] = x0 - h;
    const auto down = parts();
    p.value[i] = x0;
    const double main = (up.first - down.first) / (2 * h), ed = (up.second - down.second) / (2 * h);
    const double reference = main + (before_grl ? -tc.lambda : 1.0) * ed;
    const double rel = std::abs(p.grad[i] - reference) / std::max({std::abs(p.grad[i]), std::abs(reference), 1e-7});
    worst = std::max(worst, rel);
    ++sampled;
    upstream += before_grl;
  }
  return {worst < 1e-3, "20 parameters (" + std::to_string(upstream) + " upstream of the GRL), max relative error " + fmt(worst)};
}

// ------------------------------------------------------------ criterion 4

/// Memoized top-down recursion over (prefix of a, prefix of b).
std::size_t recursive_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  std::function<long(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> long {
    if (i == 0) return static_cast<long>(j);
    if (j == 0) return static_cast<long>(i);
    long& m = memo[i][j];
    if (m >= 0) return m;
    m = std::min({d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1)});
    return m;
  };
  return static_cast<std::size_t>(d(a.size(), b.size()));
}

Outcome metric_oracle() {
  std::vector<std::vector<int>> all{{}};
  for (std::size_t len = 1; len <= 7; ++len) {
    std::size_t count = 1;
    for (std::size_t k = 0; k < len; ++k) count *= 3;
    for (std::size_t code = 0; code < count; ++code) {
      std::vector<int> s(len);
      std::size_t c = code;
      for (auto& x : s) {
        x = static_cast<int>(c % 3);
        c /= 3;
      }
      all.push_back(std::move(s));
    }
  }
  std::size_t pairs = 0, mismatches = 0;
  for (const auto& a : all)
    for (const auto& b : all) {
      ++pairs;
      if (edit_distance(a, b) != recursive_distance(a, b)) ++mismatches;
    }
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<std::size_t> len(8, 40);
  std::uniform_int_distribution<int> sym(0, 2);
  for (int k = 0; k < 500; ++k) {
    std::vector<int> a(len(rng)), b(len(rng));
    for (auto& x : a) x = sym(rng);
    for (auto& x : b) x = sym(rng);
    ++pairs;
    if (edit_distance(a, b) != recursive_distance(a, b)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(pairs) + " pairs, " + std::to_string(mismatches) + " mismatches"};
}

// ------------------------------------------------------------ criterion 5

Outcome overfit() {
  GenConfig gc;
  gc.speakers = 4;
  gc.unseen = 0;
  gc.train_per_speaker = 8;
  gc.seen_test_per_speaker = 0;
  gc.unseen_per_speaker = 0;
  const Corpus corpus = generate_corpus(gc, 21);
  TrainConfig tc = benchmark_config();
  tc.epochs = 200;
  Trainer<float> trainer(tc, corpus);
  double first_total = 0, last_total = 0, cer = 1.0;
  std::size_t epoch = 0;
  while (epoch < tc.epochs) {
    ++epoch;
    const auto l = trainer.train_epoch(epoch);
    if (epoch == 1) first_total = l.l_total;
    last_total = l.l_total;
    if (epoch % 10 == 0) {
      cer = evaluate(trainer.model(), corpus, Split::train).cer;
      if (cer < 0.05) break;
    }
  }
  return {cer < 0.05, "train CER " + fmt(cer) + " after " + std::to_string(epoch) + " epochs (L_Total " + fmt(first_total) +
                          " -> " + fmt(last_total) + ")"};
}

// ------------------------------------------------------------ criteria 6 and 7

struct AblationOutcome {
  Outcome ordering, probe;
};

AblationOutcome ablation() {
  const Corpus corpus = generate_corpus(GenConfig{}, 7);
  TrainConfig base = benchmark_config();
  std::vector<AblationCell> cells = module_cells();
  cells.push_back({"SIFLip lambda=0", [](TrainConfig& c) {
                     c.idcfl = c.edgr = true;
                     c.lambda = 0.0;
                   }});
  const char* out = std::getenv("SIFLIP_ACCEPTANCE_OUT");
  const auto r = run_ablation(base, corpus, cells, 3, out ? fs::path(out) : fs::path(), &std::cout);
  std::cout << format_table(r.cells);

  auto unseen = [&](const std::string& name) { return r.cell(name).unseen_cer.value_or(1.0); };
  auto probe = [&](const std::string& name) { return r.cell(name).probe_acc.value_or(1.0); };
  const double base_cer = unseen("Base"), full = unseen("SIFLip"), idcfl = unseen("+IDCFL"), edgr = unseen("+EDGR");
  const double improvement = (base_cer - full) / base_cer;
  AblationOutcome o;
  o.ordering.pass = full < base_cer && improvement >= 0.10 && idcfl < base_cer;
  o.ordering.detail = "median unseen CER Base " + fmt(base_cer) + ", +IDCFL " + fmt(idcfl) + ", +EDGR " + fmt(edgr) + ", SIFLip " +
                      fmt(full) + " (relative improvement " + fmt(100 * improvement, 3) + "%); EDGR effect " +
                      (base_cer - edgr > base_cer - idcfl ? "larger" : "smaller") + " than IDCFL (soft)";
  const double with = probe("SIFLip"), without = probe("SIFLip lambda=0");
  o.probe.pass = with < without;
  o.probe.detail = "median probe accuracy lambda=" + fmt(base.lambda) + " " + fmt(with) + " vs lambda=0 " + fmt(without);
  return o;
}

// ------------------------------------------------------------ criterion 8

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      files[fs::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(in), {});
    }
  return files;
}

Outcome determinism() {
  GenConfig gc;
  gc.train_per_speaker = 12;
  gc.seen_test_per_speaker = 4;
  gc.unseen_per_speaker = 4;
  const fs::path root = fs::temp_directory_path() / "siflip_acceptance_determinism";
  fs::remove_all(root);
  write_corpus(generate_corpus(gc, 99), root / "a");
  write_corpus(generate_corpus(gc, 99), root / "b");
  const bool corpora_equal = read_tree(root / "a") == read_tree(root / "b");
  const Corpus corpus = load_corpus(root / "a");
  TrainConfig tc = benchmark_config();
  tc.epochs = 3;
  tc.eval_every = 0;
  const auto r1 = train(tc, corpus, root / "run1");
  const auto r2 = train(tc, corpus, root / "run2");
  const bool hashes_equal = r1.final_hash == r2.final_hash;
  const bool checkpoints_equal = read_tree(root / "run1") == read_tree(root / "run2");
  fs::remove_all(root);
  return {corpora_equal && hashes_equal && checkpoints_equal,
          std::string("corpora ") + (corpora_equal ? "identical" : "DIFFER") + ", final hash " + hex64(r1.final_hash) + " vs " +
              hex64(r2.final_hash) + ", run directories " + (checkpoints_equal ? "identical" : "DIFFER")};
}

// ------------------------------------------------------------ criterion 9

Outcome alignment_properties() {
  GenConfig gc;
  gc.train_per_speaker = 200;
  gc.seen_test_per_speaker = 0;
  gc.unseen_per_speaker = 0;
  gc.unseen = 0;
  const Corpus corpus = generate_corpus(gc, 31);
  std::size_t violations = 0, samples = 0;
  for (const auto& s : corpus.samples) {
    if (samples == 1000) break;
    ++samples;
    const auto pos = assign_frame_labels(s.boundaries, s.words, s.length);
    if (pos.size() != s.length) ++violations;
    for (std::size_t w = 0; w < s.words.size(); ++w) {
      const auto& e = s.boundaries.entries[w];
      for (std::size_t t = e.start; t <= e.end; ++t)
        if (pos.labels[t] != s.words[w]) ++violations;
    }
    Rng rng = derive_stream(31, "negatives", samples);
    const auto neg = make_negative_labels(pos, corpus.lexicon.size(), rng);
    if (neg.size() != s.length) ++violations;
    for (std::size_t t = 0; t < s.length; ++t)
      if (neg.labels[t] == pos.labels[t]) ++violations;
  }
  return {violations == 0 && samples == 1000, std::to_string(samples) + " samples, " + std::to_string(violations) + " violations"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const std::map<int, std::string> names{{1, "GRL exactness"},         {2, "loss oracles"},
                                         {3, "full-model gradient"},   {4, "metric oracle"},
                                         {5, "overfit sanity"},        {6, "ablation ordering"},
                                         {7, "speaker-probe suppression"}, {8, "determinism"},
                                         {9, "alignment properties"}};
  std::map<int, std::function<Outcome()>> checks{{1, grl_exactness}, {2, loss_oracles},  {3, full_model_gradient},
                                                 {4, metric_oracle}, {5, overfit},       {8, determinism},
                                                 {9, alignment_properties}};
  std::map<int, Outcome> results;
  std::map<int, double> elapsed;
  for (int id : wanted) {
    if (id == 6 || id == 7) {
      if (results.count(6)) continue;
      const auto t0 = Clock::now();
      try {
        const auto o = ablation();
        results[6] = o.ordering;
        results[7] = o.probe;
      } catch (const std::exception& e) {
        results[6] = results[7] = {false, std::string("exception: ") + e.what()};
      }
      elapsed[6] = elapsed[7] = seconds_since(t0);
      continue;
    }
    if (!checks.count(id)) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    const auto t0 = Clock::now();
    try {
      results[id] = checks[id]();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("exception: ") + e.what()};
    }
    elapsed[id] = seconds_since(t0);
  }

  bool all = true;
  for (int id : wanted) {
    const auto& o = results.at(id);
    all = all && o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  [" << names.at(id) << "] " << o.detail << " ("
              << fmt(elapsed.at(id), 3) << " s)" << std::endl;
  }
  return all ? 0 : 1;
}

#pragma once

// Implicit disentanglement: frame-level visual/text contrastive alignment.

#include <atomic>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>

#include "siflip/alignment.hpp"
#include "siflip/layers.hpp"

namespace siflip {

enum class SimilarityKind { cosine, dot };
enum class Reduction { mean, sum };

/// Label-sequence encoder: embedding + sinusoidal positions + transformer.
template <typename T>
class TextEncoder {
 public:
  TextEncoder(ParameterStore<T>& store, std::size_t vocab, std::size_t dim, std::size_t layers, std::size_t heads,
              std::size_t ff_dim, double dropout, Rng& rng)
      : vocab_(vocab) {
    table_ = &store.add("text.embedding", {vocab, dim});
    std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    for (auto& x : table_->value) x = static_cast<T>(init(rng));
    encoder_ = TransformerEncoder<T>(store, "text.attn", layers, dim, heads, ff_dim, dropout, rng);
  }

  std::size_t vocab() const { return vocab_; }
  Parameter<T>& embedding_table() { return *table_; }

  Var<T> encode(Graph<T>& g, const LabelSequence& labels, const ForwardMode& mode) const {
    for (auto id : labels.labels)
      if (id >= vocab_) throw VocabError("label id " + std::to_string(id) + " outside text vocabulary of " + std::to_string(vocab_));
    return encoder_(ad::embedding(g.param(*table_), labels.labels), mode);
  }

 private:
  std::size_t vocab_;
  Parameter<T>* table_ = nullptr;
  TransformerEncoder<T> encoder_;
};

/// E[i][j] = cos(v_i, l_j); rows with zero norm contribute 0.
template <typename T>
Var<T> similarity(Var<T> v, Var<T> l, SimilarityKind kind = SimilarityKind::cosine) {
  if (v.shape() != l.shape())
    throw ShapeError("similarity: visual " + ad::shape_str(v.shape()) + " vs text " + ad::shape_str(l.shape()));
  if (kind == SimilarityKind::dot) return ad::matmul_nt(v, l);
  static std::atomic<bool> warned{false};
  auto has_zero_row = [](Var<T> x) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      bool zero = true;
      for (std::size_t j = 0; j < x.cols() && zero; ++j) zero = x.at(i, j) == T(0);
      if (zero) return true;
    }
    return false;
  };
  if ((has_zero_row(v) || has_zero_row(l)) && !warned.exchange(true))
    std::cerr << "warning: zero-norm feature row in similarity; treating its similarities as 0\n";
  return ad::matmul_nt(ad::l2_normalize_rows(v), ad::l2_normalize_rows(l));
}

template <typename T>
void require_positive_temperature(Var<T> tau) {
  if (tau.size() != 1) throw ShapeError("temperature must be a scalar");
  if (!(tau.item() > T(0))) throw DomainError("temperature must be > 0");
}

/// -(1/T) sum_i log[ exp(p_i/tau) / (exp(p_i/tau) + sum_j exp(n_j/tau)) ], with
/// p, n the diagonals of E_pos and E_neg.  Evaluated as a log-softmax over
/// [p_i, n_1..n_T] per row so large |E/tau| stays finite.
template <typename T>
Var<T> infonce_loss(Var<T> e_pos, Var<T> e_neg, Var<T> tau) {
  require_positive_temperature(tau);
  if (e_pos.shape() != e_neg.shape() || e_pos.rows() != e_pos.cols())
    throw ShapeError("infonce_loss: expected two square matrices of equal size");
  const std::size_t n = e_pos.rows();
  Var<T> pos = ad::diag(e_pos);                                        // n x 1
  Var<T> neg = ad::broadcast_rows(ad::transpose(ad::diag(e_neg)), n);  // row i holds every negative
  Var<T> logits = ad::scale_by(ad::concat_cols<T>({pos, neg}), ad::reciprocal(tau));
  Var<T> logp = ad::pick(ad::row_log_softmax(logits), std::vector<std::size_t>(n, 0));
  return ad::scale(ad::mean_all(logp), T(-1));
}

/// Cross-entropy of each row of softmax(E_pos / tau) against the identity
/// target: -(1/T) sum_i log softmax_i(E_pos/tau)[i] (or the plain sum).
template <typename T>
Var<T> alignment_ce_loss(Var<T> e_pos, Var<T> tau, Reduction reduction = Reduction::mean) {
  require_positive_temperature(tau);
  if (e_pos.rows() != e_pos.cols()) throw ShapeError("alignment_ce_loss: expected a square matrix");
  const std::size_t n = e_pos.rows();
  std::vector<std::size_t> target(n);
  std::iota(target.begin(), target.end(), std::size_t{0});
  Var<T> logp = ad::pick(ad::row_log_softmax(ad::scale_by(e_pos, ad::reciprocal(tau))), target);
  Var<T> total = ad::scale(ad::sum_all(logp), T(-1));
  return reduction == Reduction::mean ? ad::scale(total, T(1) / static_cast<T>(n)) : total;
}

struct IdcflOptions {
  SimilarityKind similarity = SimilarityKind::cosine;
  Reduction ce_reduction = Reduction::mean;
  double tau_init = 0.07;
  /// When false the alignment cross-entropy uses its own temperature.
  bool share_tau = true;
};

template <typename T>
struct IdcflLosses {
  Var<T> l_id, l_cl, l_ce;
  Var<T> e_pos, e_neg;
};

/// Text encoder plus trainable temperature(s), kept as log-temperatures so the
/// temperature stays positive under any update.
template <typename T>
class Idcfl {
 public:
  Idcfl(ParameterStore<T>& store, std::size_t vocab, std::size_t dim, std::size_t layers, std::size_t heads,
        std::size_t ff_dim, double dropout, IdcflOptions opts, Rng& rng)
      : opts_(opts), text_(store, vocab, dim, layers, heads, ff_dim, dropout, rng) {
    if (!(opts.tau_init > 0.0)) throw ConfigError("tau_init must be > 0");
    log_tau_ = &store.add("idcfl.log_tau", {1, 1});
    log_tau_->value[0] = static_cast<T>(std::log(opts.tau_init));
    log_tau_ce_ = &store.add("idcfl.log_tau_ce", {1, 1});
    log_tau_ce_->value[0] = static_cast<T>(std::log(opts.tau_init));
  }

  const IdcflOptions& options() const { return opts_; }
  const TextEncoder<T>& text() const { return text_; }
  TextEncoder<T>& text() { return text_; }
  T temperature() const { return std::exp(log_tau_->value[0]); }
  Parameter<T>& log_tau() { return *log_tau_; }

  Var<T> tau(Graph<T>& g) const { return ad::exp(g.param(*log_tau_)); }
  Var<T> tau_ce(Graph<T>& g) const { return opts_.share_tau ? tau(g) : ad::exp(g.param(*log_tau_ce_)); }

  /// L_ID = L_CL + L_CE for one sample's visual features and label pair.
  /// Knocked-out terms (use_cl / use_ce false) contribute an exact 0.
  IdcflLosses<T> loss(Var<T> v, const LabelSequence& positive, const LabelSequence* negative, const ForwardMode& mode,
                      bool use_cl = true, bool use_ce = true) const {
    if (negative == nullptr) throw PipelineError("idcfl: sample has no negative label sequence");
    if (positive.size() != v.rows() || negative->size() != v.rows())
      throw ShapeError("idcfl: label sequences must have one label per frame");
    Graph<T>& g = *v.graph();
    IdcflLosses<T> out;
    Var<T> l_pos = text_.encode(g, positive, mode);
    Var<T> l_neg = text_.encode(g, *negative, mode);
    out.e_pos = similarity(v, l_pos, opts_.similarity);
    out.e_neg = similarity(v, l_neg, opts_.similarity);
    out.l_cl = use_cl ? infonce_loss(out.e_pos, out.e_neg, tau(g)) : g.scalar(T(0));
    out.l_ce = use_ce ? alignment_ce_loss(out.e_pos, tau_ce(g), opts_.ce_reduction) : g.scalar(T(0));
    out.l_id = ad::add(out.l_cl, out.l_ce);
    return out;
  }

 private:
  IdcflOptions opts_;
  TextEncoder<T> text_;
  Parameter<T>* log_tau_ = nullptr;
  Parameter<T>* log_tau_ce_ = nullptr;
};

}  // namespace siflip

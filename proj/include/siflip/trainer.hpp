#pragma once

// Joint training of the full model, CER/WER evaluation and the speaker probe.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "siflip/checkpoint.hpp"
#include "siflip/metrics.hpp"
#include "siflip/model.hpp"
#include "siflip/optim.hpp"
#include "siflip/probe.hpp"

namespace siflip {

struct TrainConfig {
  double alpha = 0.5;
  double beta = 2.0;
  double lambda = 1.0;
  std::string lambda_schedule = "constant";  // constant | ramp
  double learning_rate = 1e-3;
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  int precision = 32;  // 32 | 64
  bool idcfl = true;
  bool edgr = true;
  bool use_cl = true;
  bool use_ce = true;
  bool freeze_negatives = false;
  bool negative_per_frame = false;
  double clip_norm = 5.0;
  double tau_min = 0.01;
  double max_loss = 1e6;
  /// Evaluate every this many epochs (the last epoch is always evaluated);
  /// 0 evaluates only after the last epoch.
  std::size_t eval_every = 10;
  bool probe = true;
  ModelConfig model;

  GradReverseConfig grad_reverse() const {
    GradReverseConfig g;
    g.lambda = lambda;
    if (lambda_schedule == "constant") g.schedule = LambdaSchedule::constant;
    else if (lambda_schedule == "ramp") g.schedule = LambdaSchedule::ramp;
    else throw ConfigError("lambda_schedule must be constant or ramp");
    return g;
  }

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(lambda >= 0.0)) throw ConfigError("alpha, beta and lambda must be >= 0");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
    if (!(tau_min > 0.0)) throw ConfigError("tau_min must be > 0");
    if (!(max_loss > 0.0)) throw ConfigError("max_loss must be > 0");
    (void)grad_reverse();
    model.validate();
  }

  OrderedJson to_json() const {
    return OrderedJson{{"alpha", alpha},
                       {"beta", beta},
                       {"lambda", lambda},
                       {"lambda_schedule", lambda_schedule},
                       {"learning_rate", learning_rate},
                       {"epochs", epochs},
                       {"batch_size", batch_size},
                       {"seed", seed},
                       {"precision", precision},
                       {"idcfl", idcfl},
                       {"edgr", edgr},
                       {"use_cl", use_cl},
                       {"use_ce", use_ce},
                       {"freeze_negatives", freeze_negatives},
                       {"negative_per_frame", negative_per_frame},
                       {"clip_norm", clip_norm},
                       {"tau_min", tau_min},
                       {"max_loss", max_loss},
                       {"eval_every", eval_every},
                       {"probe", probe},
                       {"model", model.to_json()}};
  }

  static TrainConfig from_json(const Json& j) {
    reject_unknown_keys(j, "train",
                        {"alpha", "beta", "lambda", "lambda_schedule", "learning_rate", "epochs", "batch_size", "seed",
                         "precision", "idcfl", "edgr", "use_cl", "use_ce", "freeze_negatives", "negative_per_frame",
                         "clip_norm", "tau_min", "max_loss", "eval_every", "probe", "model"});
    TrainConfig c;
    read_field(j, "alpha", c.alpha);
    read_field(j, "beta", c.beta);
    read_field(j, "lambda", c.lambda);
    read_field(j, "lambda_schedule", c.lambda_schedule);
    read_field(j, "learning_rate", c.learning_rate);
    read_field(j, "epochs", c.epochs);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "seed", c.seed);
    read_field(j, "precision", c.precision);
    read_field(j, "idcfl", c.idcfl);
    read_field(j, "edgr", c.edgr);
    read_field(j, "use_cl", c.use_cl);
    read_field(j, "use_ce", c.use_ce);
    read_field(j, "freeze_negatives", c.freeze_negatives);
    read_field(j, "negative_per_frame", c.negative_per_frame);
    read_field(j, "clip_norm", c.clip_norm);
    read_field(j, "tau_min", c.tau_min);
    read_field(j, "max_loss", c.max_loss);
    read_field(j, "eval_every", c.eval_every);
    read_field(j, "probe", c.probe);
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    return c;
  }
};

/// Named scalar losses of one sample or averaged over a batch/epoch.
struct LossBundle {
  double l_pt = 0.0, l_cl = 0.0, l_ce = 0.0, l_id = 0.0, l_ed = 0.0, l_total = 0.0;
};

/// Throws DivergenceError naming the first non-finite component.
inline void require_finite(const LossBundle& b) {
  const std::pair<const char*, double> parts[] = {{"L_PT", b.l_pt}, {"L_CL", b.l_cl}, {"L_CE", b.l_ce},
                                                  {"L_ID", b.l_id}, {"L_ED", b.l_ed}};
  for (auto [name, v] : parts)
    if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite ") + name + " (" + std::to_string(v) + ")");
}

/// L_Total = L_PT + alpha L_ID + beta L_ED; a disabled branch contributes 0.
inline double total_loss(const LossBundle& b, double alpha, double beta, bool idcfl = true, bool edgr = true) {
  require_finite(b);
  return b.l_pt + (idcfl ? alpha * b.l_id : 0.0) + (edgr ? beta * b.l_ed : 0.0);
}

template <typename T>
Var<T> total_loss(const LossTerms<T>& terms, double alpha, double beta, bool idcfl = true, bool edgr = true) {
  Var<T> total = terms.l_pt;
  if (idcfl) total = ad::add(total, ad::scale(terms.l_id, static_cast<T>(alpha)));
  if (edgr) total = ad::add(total, ad::scale(terms.l_ed, static_cast<T>(beta)));
  return total;
}

struct SampleResult {
  std::size_t index = 0;
  std::size_t speaker_id = 0;
  std::string reference, hypothesis;
  std::size_t char_errors = 0, char_length = 0, word_errors = 0, word_length = 0;
};

struct EvalReport {
  Split split = Split::seen_test;
  double cer = 0.0;
  double wer = 0.0;
  ErrorCounts counts;
  std::vector<SampleResult> samples;
};

template <typename T>
EvalReport evaluate(const SiflipModel<T>& model, const Corpus& corpus, Split split) {
  const auto idx = corpus.indices(split);
  if (idx.empty()) throw PipelineError(std::string("split ") + split_name(split) + " has no samples");
  EvalReport r;
  r.split = split;
  for (auto i : idx) {
    const auto& s = corpus.samples[i];
    const auto hyp = model.transcribe(s);
    SampleResult sr;
    sr.index = i;
    sr.speaker_id = s.speaker_id;
    sr.reference = spell(s.words, corpus.lexicon);
    sr.hypothesis = spell(hyp, corpus.lexicon);
    sr.char_errors = edit_distance(sr.reference, sr.hypothesis);
    sr.char_length = sr.reference.size();
    sr.word_errors = edit_distance(s.words, hyp);
    sr.word_length = s.words.size();
    r.counts.add(s.words, hyp, corpus.lexicon);
    r.samples.push_back(std::move(sr));
  }
  r.cer = r.counts.cer();
  r.wer = r.counts.wer();
  return r;
}

inline void write_hypotheses(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& s : r.samples) {
    OrderedJson j{{"index", s.index},           {"speaker_id", s.speaker_id},   {"reference", s.reference},
                  {"hypothesis", s.hypothesis}, {"char_errors", s.char_errors}, {"char_length", s.char_length},
                  {"word_errors", s.word_errors}, {"word_length", s.word_length}};
    out << j.dump() << "\n";
  }
}

/// Linear probe for speaker identity on frozen pooled speaker-branch features:
/// fit on train samples, score on held-out seen-speaker samples.
template <typename T>
double speaker_probe(const SiflipModel<T>& model, const Corpus& corpus, const ProbeOptions& opts = {}) {
  if (corpus.speakers_in(Split::train).size() < 2) throw PipelineError("speaker probe needs at least 2 training speakers");
  auto collect = [&](Split split) {
    ProbeData d;
    for (auto i : corpus.indices(split)) {
      const auto emb = model.speaker_embedding(corpus.samples[i]);
      d.features.emplace_back(emb.begin(), emb.end());
      d.labels.push_back(corpus.samples[i].speaker_id);
    }
    return d;
  };
  return probe_accuracy(collect(Split::train), collect(Split::seen_test), opts);
}

struct MetricsRow {
  std::size_t epoch = 0;
  LossBundle loss;
  std::optional<double> seen_cer, unseen_cer, probe_acc;
};

inline const char* kMetricsHeader = "epoch,l_pt,l_cl,l_ce,l_id,l_ed,l_total,seen_cer,unseen_cer,probe_acc";

inline std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream ss;
  ss << std::setprecision(10) << r.epoch << ',' << r.loss.l_pt << ',' << r.loss.l_cl << ',' << r.loss.l_ce << ','
     << r.loss.l_id << ',' << r.loss.l_ed << ',' << r.loss.l_total;
  for (const auto& v : {r.seen_cer, r.unseen_cer, r.probe_acc}) {
    ss << ',';
    if (v) ss << *v;
  }
  return ss.str();
}

struct TrainResult {
  std::vector<MetricsRow> history;
  std::uint64_t final_hash = 0;
  std::optional<double> seen_cer, unseen_cer, probe_acc;
};

/// JSON stored inside checkpoints: everything needed to rebuild the model.
inline std::string checkpoint_config(const TrainConfig& cfg, const ModelShape& shape) {
  OrderedJson j{{"train", cfg.to_json()},
                {"shape", {{"height", shape.height}, {"width", shape.width}, {"vocab", shape.vocab}, {"speakers", shape.speakers}}}};
  return j.dump();
}

inline std::pair<TrainConfig, ModelShape> parse_checkpoint_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  if (!j.contains("train") || !j.contains("shape")) throw ParseError("checkpoint config lacks train or shape section");
  ModelShape s;
  const Json& js = j.at("shape");
  read_field(js, "height", s.height);
  read_field(js, "width", s.width);
  read_field(js, "vocab", s.vocab);
  read_field(js, "speakers", s.speakers);
  return {TrainConfig::from_json(j.at("train")), s};
}

template <typename T>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Corpus& corpus)
      : cfg_(cfg), corpus_(corpus), model_((cfg.validate(), cfg.model), ModelShape::of(corpus), cfg.seed),
        adam_(model_.params(), AdamOptions{cfg.learning_rate}), train_idx_(corpus.indices(Split::train)) {
    if (train_idx_.empty()) throw PipelineError("corpus has no training samples");
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
      const auto& s = corpus.samples[i];
      positives_.push_back(assign_frame_labels(s.boundaries, s.words, s.length));
    }
    steps_per_epoch_ = (train_idx_.size() + cfg.batch_size - 1) / cfg.batch_size;
  }

  SiflipModel<T>& model() { return model_; }
  const SiflipModel<T>& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }

  BranchOptions branches(double progress) const {
    BranchOptions b;
    b.idcfl = cfg_.idcfl;
    b.edgr = cfg_.edgr;
    b.use_cl = cfg_.use_cl;
    b.use_ce = cfg_.use_ce;
    b.lambda = cfg_.grad_reverse().lambda_at(progress);
    return b;
  }

  LabelSequence negative_for(std::size_t sample_index, std::size_t epoch) const {
    const std::uint64_t key = (static_cast<std::uint64_t>(cfg_.freeze_negatives ? 0 : epoch) << 32) | sample_index;
    Rng rng = derive_stream(cfg_.seed, "negatives", key);
    NegativeOptions opts;
    opts.per_frame = cfg_.negative_per_frame;
    return make_negative_labels(positives_[sample_index], corpus_.lexicon.size(), rng, opts);
  }

  /// One pass over the training split in a seeded order.  Returns the mean
  /// loss components over the epoch's samples.
  LossBundle train_epoch(std::size_t epoch) {
    Rng order_rng = derive_stream(cfg_.seed, "order", epoch);
    Rng visual_rng = derive_stream(cfg_.seed, "dropout_visual", epoch);
    Rng text_rng = derive_stream(cfg_.seed, "dropout_text", epoch);
    auto order = train_idx_;
    std::shuffle(order.begin(), order.end(), order_rng);

    LossBundle sum;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      const double progress = static_cast<double>(adam_.steps()) /
                              static_cast<double>(std::max<std::size_t>(1, steps_per_epoch_ * std::max<std::size_t>(1, cfg_.epochs) - 1));
      const BranchOptions opts = branches(std::min(1.0, progress));
      model_.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const auto& sample = corpus_.samples[i];
        std::optional<LabelSequence> negative;
        if (cfg_.idcfl) negative = negative_for(i, epoch);
        Graph<T> g;
        auto terms = model_.losses(g, sample, positives_[i], negative ? &*negative : nullptr, opts,
                                   ForwardMode{true, &visual_rng}, ForwardMode{true, &text_rng});
        LossBundle b{terms.l_pt.item(), terms.l_cl.item(), terms.l_ce.item(), terms.l_id.item(), terms.l_ed.item(), 0.0};
        try {
          b.l_total = total_loss(b, cfg_.alpha, cfg_.beta, cfg_.idcfl, cfg_.edgr);
        } catch (const DivergenceError& e) {
          throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", sample " + std::to_string(i));
        }
        if (b.l_total > cfg_.max_loss)
          throw DivergenceError("L_Total " + std::to_string(b.l_total) + " exceeds " + std::to_string(cfg_.max_loss) +
                                " at epoch " + std::to_string(epoch) + ", sample " + std::to_string(i));
        Var<T> total = total_loss(terms, cfg_.alpha, cfg_.beta, cfg_.idcfl, cfg_.edgr);
        g.backward(total, static_cast<T>(1.0 / static_cast<double>(end - start)));
        sum.l_pt += b.l_pt;
        sum.l_cl += b.l_cl;
        sum.l_ce += b.l_ce;
        sum.l_id += b.l_id;
        sum.l_ed += b.l_ed;
        sum.l_total += b.l_total;
      }
      clip_gradients(model_.params(), cfg_.clip_norm);
      adam_.step();
      clamp_temperature();
    }
    const double n = static_cast<double>(order.size());
    return {sum.l_pt / n, sum.l_cl / n, sum.l_ce / n, sum.l_id / n, sum.l_ed / n, sum.l_total / n};
  }

  /// Trains for cfg.epochs.  With a non-empty `out_dir`, writes metrics.csv,
  /// checkpoint_init.bin / checkpoint_final.bin / checkpoint_best.bin and the
  /// final hypotheses there.
  TrainResult run(const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr) {
    TrainResult result;
    const bool write = !out_dir.empty();
    const std::string ck_config = checkpoint_config(cfg_, model_.shape());
    std::ofstream csv;
    if (write) {
      std::filesystem::create_directories(out_dir);
      save_checkpoint(out_dir / "checkpoint_init.bin", model_.params(), ck_config);
      csv.open(out_dir / "metrics.csv");
      if (!csv) throw Error("cannot write " + (out_dir / "metrics.csv").string());
      csv << kMetricsHeader << "\n" << std::flush;
    }
    const bool has_seen = !corpus_.indices(Split::seen_test).empty();
    const bool has_unseen = !corpus_.indices(Split::unseen_test).empty();
    double best_unseen = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      MetricsRow row;
      row.epoch = epoch;
      row.loss = train_epoch(epoch);
      const bool last = epoch == cfg_.epochs;
      if (last || (cfg_.eval_every > 0 && epoch % cfg_.eval_every == 0)) {
        std::optional<EvalReport> seen, unseen;
        if (has_seen) seen = evaluate(model_, corpus_, Split::seen_test);
        if (has_unseen) unseen = evaluate(model_, corpus_, Split::unseen_test);
        if (seen) row.seen_cer = seen->cer;
        if (unseen) row.unseen_cer = unseen->cer;
        if (cfg_.probe && has_seen && corpus_.speakers_in(Split::train).size() >= 2) row.probe_acc = speaker_probe(model_, corpus_);
        if (write && unseen && unseen->cer < best_unseen) {
          best_unseen = unseen->cer;
          save_checkpoint(out_dir / "checkpoint_best.bin", model_.params(), ck_config);
        }
        if (last) {
          result.seen_cer = row.seen_cer;
          result.unseen_cer = row.unseen_cer;
          result.probe_acc = row.probe_acc;
          if (write && seen) write_hypotheses(out_dir / "hypotheses_seen_test.jsonl", *seen);
          if (write && unseen) write_hypotheses(out_dir / "hypotheses_unseen_test.jsonl", *unseen);
        }
      }
      if (write) csv << format_metrics_row(row) << "\n" << std::flush;
      if (log) *log << format_metrics_row(row) << std::endl;
      result.history.push_back(row);
    }
    if (write && cfg_.epochs > 0) save_checkpoint(out_dir / "checkpoint_final.bin", model_.params(), ck_config);
    result.final_hash = model_.params().hash();
    return result;
  }

 private:
  void clamp_temperature() {
    const T floor = static_cast<T>(std::log(cfg_.tau_min));
    for (const char* name : {"idcfl.log_tau", "idcfl.log_tau_ce"})
      if (auto* p = model_.params().find(name))
        if (p->value[0] < floor) p->value[0] = floor;
  }

  TrainConfig cfg_;
  const Corpus& corpus_;
  SiflipModel<T> model_;
  Adam<T> adam_;
  std::vector<std::size_t> train_idx_;
  std::vector<LabelSequence> positives_;
  std::size_t steps_per_epoch_ = 1;
};

/// Trains at the configured precision.
inline TrainResult train(const TrainConfig& cfg, const Corpus& corpus, const std::filesystem::path& out_dir = {},
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (cfg.precision == 64) return Trainer<double>(cfg, corpus).run(out_dir, log);
  return Trainer<float>(cfg, corpus).run(out_dir, log);
}

}  // namespace siflip

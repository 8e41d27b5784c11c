#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "siflip/ablation.hpp"
#include "siflip/plot.hpp"
#include "siflip/trainer.hpp"

namespace fs = std::filesystem;
using namespace siflip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

fs::path output_root() {
  const char* env = std::getenv("SIFLIP_RUNS");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path resolve_output(const std::string& flag, const std::string& fallback) {
  return flag.empty() ? output_root() / fallback : fs::path(flag);
}

/// Work happens in a hidden sibling directory that is renamed into place
/// only once everything has been written.
class StagedDir {
 public:
  StagedDir(fs::path final_dir, bool force) : final_(std::move(final_dir)) {
    if (fs::exists(final_) && !force)
      throw ConfigError(final_.string() + " already exists (use --force to overwrite)");
    const fs::path parent = final_.has_parent_path() ? final_.parent_path() : fs::path(".");
    fs::create_directories(parent);
    staging_ = parent / ("." + final_.filename().string() + ".partial");
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    std::error_code ec;
    if (!committed_) fs::remove_all(staging_, ec);
  }

  const fs::path& path() const { return staging_; }

  void commit() {
    fs::remove_all(final_);
    fs::rename(staging_, final_);
    committed_ = true;
  }

 private:
  fs::path final_, staging_;
  bool committed_ = false;
};

void write_json(const fs::path& path, const OrderedJson& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// Config file (if any) with dotted overrides applied on top.
Json load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Json j = path.empty() ? Json::object() : load_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return j;
}

Corpus open_corpus(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--corpus is required");
  return load_corpus(dir);
}

void require_split(const Corpus& c, Split s) {
  if (c.indices(s).empty())
    throw ConfigError(std::string("corpus has no ") + split_name(s) + " samples");
}

struct CommonTrainFlags {
  std::string corpus, config, out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool force = false;
  bool quiet = false;

  void attach(CLI::App* app, bool with_out_dir = true) {
    app->add_option("--corpus", corpus, "Corpus directory written by gen-data")->required();
    app->add_option("-c,--config", config, "Training config (JSON)");
    app->add_option("--set", overrides, "Override a config value, e.g. --set model.encoder.model_dim=32");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--epochs", epochs, "Number of epochs");
    if (with_out_dir) app->add_option("-o,--out", out, "Output directory");
    app->add_flag("--force", force, "Overwrite an existing output directory");
    app->add_flag("-q,--quiet", quiet, "Do not print per-epoch metrics");
  }

  TrainConfig resolve() const {
    Json j = load_config(config, overrides);
    if (seed) j["seed"] = *seed;
    if (epochs) j["epochs"] = *epochs;
    TrainConfig cfg = TrainConfig::from_json(j);
    cfg.validate();
    return cfg;
  }
};

int cmd_gen_data(const std::string& config, const std::vector<std::string>& overrides, std::optional<std::size_t> speakers,
                 std::optional<std::size_t> unseen, std::optional<std::size_t> vocab, std::uint64_t seed,
                 const std::string& out, bool force) {
  Json j = load_config(config, overrides);
  if (speakers) j["speakers"] = *speakers;
  if (unseen) j["unseen"] = *unseen;
  if (vocab) j["vocab"] = *vocab;
  const GenConfig cfg = GenConfig::from_json(j);
  cfg.validate();
  StagedDir dir(resolve_output(out, "corpus"), force);
  write_json(dir.path() / "gen_config.json", OrderedJson{{"seed", seed}, {"config", cfg.to_json()}});
  const Corpus corpus = generate_corpus(cfg, seed);
  write_corpus(corpus, dir.path());
  dir.commit();
  std::cout << "wrote " << corpus.samples.size() << " samples (fingerprint " << corpus.fingerprint << ")\n";
  return kExitOk;
}

int cmd_train(const CommonTrainFlags& f) {
  const TrainConfig cfg = f.resolve();
  const Corpus corpus = open_corpus(f.corpus);
  StagedDir dir(resolve_output(f.out, "train"), f.force);
  write_json(dir.path() / "config.json", cfg.to_json());
  write_json(dir.path() / "run.json", OrderedJson{{"corpus", fs::absolute(f.corpus).lexically_normal().string()},
                                                  {"corpus_fingerprint", corpus.fingerprint}});
  const TrainResult r = train(cfg, corpus, dir.path(), f.quiet ? nullptr : &std::cout);
  OrderedJson summary{{"final_hash", hex64(r.final_hash)}, {"epochs", cfg.epochs}};
  summary["seen_cer"] = r.seen_cer ? Json(*r.seen_cer) : Json(nullptr);
  summary["unseen_cer"] = r.unseen_cer ? Json(*r.unseen_cer) : Json(nullptr);
  summary["probe_acc"] = r.probe_acc ? Json(*r.probe_acc) : Json(nullptr);
  write_json(dir.path() / "summary.json", summary);
  dir.commit();
  std::cout << "final_hash " << hex64(r.final_hash) << "\n";
  return kExitOk;
}

template <typename T>
int evaluate_checkpoint(const Checkpoint& ck, const TrainConfig& cfg, const ModelShape& shape, const Corpus& corpus,
                        Split split, bool probe, const fs::path& out) {
  SiflipModel<T> model(cfg.model, shape, cfg.seed);
  load_into(ck, model.params());
  if (ModelShape::of(corpus).vocab != shape.vocab || corpus.config.frame_height() != shape.height ||
      corpus.config.frame_width() != shape.width)
    throw ConfigError("checkpoint was trained on a corpus of a different shape");
  const EvalReport r = evaluate(model, corpus, split);
  OrderedJson report{{"split", split_name(split)}, {"cer", r.cer}, {"wer", r.wer}, {"samples", r.samples.size()},
                     {"char_errors", r.counts.char_errors}, {"char_total", r.counts.char_total},
                     {"word_errors", r.counts.word_errors}, {"word_total", r.counts.word_total}};
  if (probe) report["probe_acc"] = speaker_probe(model, corpus);
  fs::create_directories(out);
  write_json(out / (std::string("eval_") + split_name(split) + ".json"), report);
  write_hypotheses(out / (std::string("hypotheses_") + split_name(split) + ".jsonl"), r);
  std::cout << report.dump() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus_dir, const std::string& split_text, bool probe,
             const std::string& out) {
  if (!fs::exists(checkpoint)) throw InputError("checkpoint not found: " + checkpoint);
  Split split;
  try {
    split = parse_split(split_text);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const Corpus corpus = open_corpus(corpus_dir);
  require_split(corpus, split);
  const Checkpoint ck = read_checkpoint(checkpoint);
  auto [cfg, shape] = parse_checkpoint_config(ck.config_json);
  const fs::path out_dir = out.empty() ? fs::path(checkpoint).parent_path() : fs::path(out);
  if (ck.scalar_bytes == 8) return evaluate_checkpoint<double>(ck, cfg, shape, corpus, split, probe, out_dir);
  return evaluate_checkpoint<float>(ck, cfg, shape, corpus, split, probe, out_dir);
}

int cmd_ablate(const CommonTrainFlags& f, std::size_t seeds, bool knockouts, bool modules_only_knockouts) {
  const TrainConfig cfg = f.resolve();
  const Corpus corpus = open_corpus(f.corpus);
  std::vector<AblationCell> cells;
  if (!modules_only_knockouts) cells = module_cells();
  if (knockouts || modules_only_knockouts)
    for (auto& c : knockout_cells()) cells.push_back(std::move(c));
  StagedDir dir(resolve_output(f.out, "ablate"), f.force);
  OrderedJson echo{{"seeds", seeds}, {"cells", Json::array()}, {"train", cfg.to_json()}};
  for (const auto& c : cells) echo["cells"].push_back(c.name);
  write_json(dir.path() / "config.json", echo);
  const auto r = run_ablation(cfg, corpus, cells, seeds, dir.path(), f.quiet ? nullptr : &std::cout);
  dir.commit();
  std::cout << format_table(r.cells);
  return kExitOk;
}

int cmd_sweep(const CommonTrainFlags& f, const std::string& param, std::vector<double> values, std::size_t seeds) {
  const TrainConfig cfg = f.resolve();
  if (values.empty()) values = default_sweep_grid(param);
  else (void)default_sweep_grid(param);
  const Corpus corpus = open_corpus(f.corpus);
  StagedDir dir(resolve_output(f.out, "sweep_" + param), f.force);
  write_json(dir.path() / "config.json", OrderedJson{{"param", param}, {"values", values}, {"seeds", seeds}, {"train", cfg.to_json()}});
  const auto r = run_sweep(cfg, corpus, param, values, seeds, dir.path(), f.quiet ? nullptr : &std::cout);
  dir.commit();
  std::cout << format_table(r.cells, param);
  return kExitOk;
}

template <typename T>
std::vector<double> similarity_for(const Checkpoint& ck, const TrainConfig& cfg, const ModelShape& shape, const VideoSample& s) {
  SiflipModel<T> model(cfg.model, shape, cfg.seed);
  load_into(ck, model.params());
  const auto m = model.positive_similarity(s);
  return {m.begin(), m.end()};
}

int cmd_plot(const std::string& run, const std::string& corpus_flag, std::optional<std::size_t> sample_flag, const std::string& out) {
  const fs::path run_dir(run);
  if (!fs::is_directory(run_dir)) throw InputError("run directory not found: " + run);
  const fs::path out_dir = out.empty() ? run_dir : fs::path(out);
  fs::create_directories(out_dir);
  std::vector<std::string> written;

  const bool has_metrics = fs::exists(run_dir / "metrics.csv");
  const bool has_sweep = fs::exists(run_dir / "sweep.csv");
  if (!has_metrics && !has_sweep) throw InputError("no metrics.csv or sweep.csv in " + run);
  write_json(out_dir / "plot_config.json", OrderedJson{{"run", run}, {"corpus", corpus_flag}, {"sample", sample_flag ? Json(*sample_flag) : Json(nullptr)}});

  if (has_metrics) {
    const auto t = plot::read_csv(run_dir / "metrics.csv");
    const auto epochs = t.values("epoch");
    std::vector<plot::Series> losses;
    for (const char* name : {"l_total", "l_pt", "l_id", "l_ed"}) losses.push_back({name, epochs, t.values(name)});
    plot::write_png(out_dir / "loss_curves.png", plot::line_chart(losses));
    written.push_back("loss_curves.png");
    std::vector<plot::Series> cer;
    for (const char* name : {"seen_cer", "unseen_cer", "probe_acc"}) cer.push_back({name, epochs, t.values(name)});
    bool any = false;
    for (const auto& s : cer)
      for (double v : s.y) any = any || std::isfinite(v);
    if (any) {
      plot::write_png(out_dir / "eval_curves.png", plot::line_chart(cer));
      written.push_back("eval_curves.png");
    }

    const fs::path ck_path = run_dir / "checkpoint_final.bin";
    std::string corpus_dir = corpus_flag;
    if (corpus_dir.empty() && fs::exists(run_dir / "run.json")) corpus_dir = load_json_file((run_dir / "run.json").string()).value("corpus", "");
    if (fs::exists(ck_path) && !corpus_dir.empty()) {
      const Corpus corpus = open_corpus(corpus_dir);
      std::size_t index = 0;
      if (sample_flag) index = *sample_flag;
      else {
        auto idx = corpus.indices(Split::unseen_test);
        if (idx.empty()) idx = corpus.indices(Split::seen_test);
        if (idx.empty()) idx = corpus.indices(Split::train);
        index = idx.front();
      }
      if (index >= corpus.samples.size()) throw ConfigError("sample index " + std::to_string(index) + " out of range");
      const Checkpoint ck = read_checkpoint(ck_path);
      auto [cfg, shape] = parse_checkpoint_config(ck.config_json);
      const auto& s = corpus.samples[index];
      const auto m = ck.scalar_bytes == 8 ? similarity_for<double>(ck, cfg, shape, s) : similarity_for<float>(ck, cfg, shape, s);
      plot::write_png(out_dir / "similarity_heatmap.png", plot::heatmap(m, s.length, s.length));
      written.push_back("similarity_heatmap.png");
    }
  }
  if (has_sweep) {
    std::vector<std::string> labels;
    const auto t = plot::read_csv(run_dir / "sweep.csv", &labels);
    const auto values = t.values(t.columns.front());
    std::vector<plot::Series> curves;
    for (const char* name : {"seen_cer", "unseen_cer"}) curves.push_back({name, values, t.values(name)});
    plot::write_png(out_dir / "sweep_curves.png", plot::line_chart(curves));
    written.push_back("sweep_curves.png");
  }
  for (const auto& w : written) std::cout << "wrote " << (out_dir / w).string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaker-invariant lipreading on synthetic corpora"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  std::string gen_config, gen_out;
  std::vector<std::string> gen_overrides;
  std::optional<std::size_t> gen_speakers, gen_unseen, gen_vocab;
  std::uint64_t gen_seed = 7;
  bool gen_force = false;
  gen->add_option("-c,--config", gen_config, "Generator config (JSON)");
  gen->add_option("--set", gen_overrides, "Override a config value, e.g. --set noise=0.1");
  gen->add_option("--speakers", gen_speakers, "Number of speakers");
  gen->add_option("--unseen", gen_unseen, "Number of held-out speakers");
  gen->add_option("--vocab", gen_vocab, "Lexicon size");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("-o,--out", gen_out, "Output directory");
  gen->add_flag("--force", gen_force, "Overwrite an existing corpus");

  auto* tr = app.add_subcommand("train", "Train a model");
  CommonTrainFlags train_flags;
  train_flags.attach(tr);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_checkpoint, ev_corpus, ev_split = "unseen_test", ev_out;
  bool ev_probe = false;
  ev->add_option("--checkpoint", ev_checkpoint, "Checkpoint file")->required();
  ev->add_option("--corpus", ev_corpus, "Corpus directory")->required();
  ev->add_option("--split", ev_split, "train, seen_test or unseen_test");
  ev->add_flag("--probe", ev_probe, "Also run the speaker probe");
  ev->add_option("-o,--out", ev_out, "Output directory (default: the checkpoint's directory)");

  auto* ab = app.add_subcommand("ablate", "Run the module ablation grid");
  CommonTrainFlags ablate_flags;
  ablate_flags.attach(ab);
  std::size_t ablate_seeds = 3;
  bool ablate_knockouts = false, ablate_only_knockouts = false;
  ab->add_option("--seeds", ablate_seeds, "Seeds per cell");
  ab->add_flag("--knockouts", ablate_knockouts, "Also run the loss-component knockouts");
  ab->add_flag("--only-knockouts", ablate_only_knockouts, "Run only the loss-component knockouts");

  auto* sw = app.add_subcommand("sweep", "Sweep alpha, beta or lambda");
  CommonTrainFlags sweep_flags;
  sweep_flags.attach(sw);
  std::string sweep_param;
  std::vector<double> sweep_values;
  std::size_t sweep_seeds = 1;
  sw->add_option("--param", sweep_param, "alpha, beta or lambda")->required();
  sw->add_option("--values", sweep_values, "Grid values (default depends on --param)");
  sw->add_option("--seeds", sweep_seeds, "Seeds per value");

  auto* pl = app.add_subcommand("plot", "Render plots for a run directory");
  std::string plot_run, plot_corpus, plot_out;
  std::optional<std::size_t> plot_sample;
  pl->add_option("--run", plot_run, "Run directory")->required();
  pl->add_option("--corpus", plot_corpus, "Corpus for the similarity heatmap (default: the run's corpus)");
  pl->add_option("--sample", plot_sample, "Sample index for the heatmap");
  pl->add_option("-o,--out", plot_out, "Output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_config, gen_overrides, gen_speakers, gen_unseen, gen_vocab, gen_seed, gen_out, gen_force);
    if (tr->parsed()) return cmd_train(train_flags);
    if (ev->parsed()) return cmd_eval(ev_checkpoint, ev_corpus, ev_split, ev_probe, ev_out);
    if (ab->parsed()) return cmd_ablate(ablate_flags, ablate_seeds, ablate_knockouts, ablate_only_knockouts);
    if (sw->parsed()) return cmd_sweep(sweep_flags, sweep_param, sweep_values, sweep_seeds);
    if (pl->parsed()) return cmd_plot(plot_run, plot_corpus, plot_sample, plot_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

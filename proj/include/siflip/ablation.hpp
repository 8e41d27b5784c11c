#pragma once

// Ablation grids and single-hyperparameter sweeps built on repeated training
// runs, summarized by per-cell medians over seeds.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "siflip/trainer.hpp"

namespace siflip {

struct AblationCell {
  std::string name;
  std::function<void(TrainConfig&)> apply;
};

/// Base, +IDCFL, +EDGR and the full model.
inline std::vector<AblationCell> module_cells() {
  return {
      {"Base", [](TrainConfig& c) { c.idcfl = c.edgr = false; }},
      {"+IDCFL", [](TrainConfig& c) { c.idcfl = true; c.edgr = false; }},
      {"+EDGR", [](TrainConfig& c) { c.idcfl = false; c.edgr = true; }},
      {"SIFLip", [](TrainConfig& c) { c.idcfl = c.edgr = true; }},
  };
}

/// Loss-component knockouts of the full model.
inline std::vector<AblationCell> knockout_cells() {
  auto full = [](TrainConfig& c) { c.idcfl = c.edgr = true; };
  return {
      {"w/o L_CL", [full](TrainConfig& c) { full(c); c.use_cl = false; }},
      {"w/o L_CE", [full](TrainConfig& c) { full(c); c.use_ce = false; }},
      {"w/o L_ID", [full](TrainConfig& c) { full(c); c.alpha = 0.0; }},
      {"w/o GR", [full](TrainConfig& c) { full(c); c.lambda = 0.0; }},
      {"w/o L_ED", [full](TrainConfig& c) { full(c); c.beta = 0.0; }},
  };
}

inline std::optional<double> median(std::vector<double> xs) {
  if (xs.empty()) return std::nullopt;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

struct RunRecord {
  std::string cell;
  std::uint64_t seed = 0;
  std::optional<double> seen_cer, unseen_cer, probe_acc;
  std::uint64_t final_hash = 0;
};

struct CellSummary {
  std::string cell;
  std::size_t runs = 0;
  std::optional<double> seen_cer, unseen_cer, probe_acc;
};

struct AblationResult {
  std::vector<RunRecord> runs;
  std::vector<CellSummary> cells;

  const CellSummary& cell(const std::string& name) const {
    for (const auto& c : cells)
      if (c.cell == name) return c;
    throw PipelineError("no ablation cell named " + name);
  }
};

inline std::vector<CellSummary> summarize(const std::vector<RunRecord>& runs, const std::vector<std::string>& order) {
  std::vector<CellSummary> out;
  for (const auto& name : order) {
    CellSummary s;
    s.cell = name;
    std::vector<double> seen, unseen, probe;
    for (const auto& r : runs) {
      if (r.cell != name) continue;
      ++s.runs;
      if (r.seen_cer) seen.push_back(*r.seen_cer);
      if (r.unseen_cer) unseen.push_back(*r.unseen_cer);
      if (r.probe_acc) probe.push_back(*r.probe_acc);
    }
    s.seen_cer = median(seen);
    s.unseen_cer = median(unseen);
    s.probe_acc = median(probe);
    out.push_back(s);
  }
  return out;
}

inline std::string format_optional(const std::optional<double>& v, int precision = 6) {
  if (!v) return "";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << *v;
  return ss.str();
}

/// Aligned plain-text table of cell medians.
inline std::string format_table(const std::vector<CellSummary>& cells, const std::string& first_column = "cell") {
  std::vector<std::vector<std::string>> rows{{first_column, "runs", "seen_cer", "unseen_cer", "probe_acc"}};
  for (const auto& c : cells)
    rows.push_back({c.cell, std::to_string(c.runs), format_optional(c.seen_cer, 4), format_optional(c.unseen_cer, 4),
                    format_optional(c.probe_acc, 4)});
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  std::ostringstream ss;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) ss << "  ";
      if (i == 0) ss << std::left << std::setw(static_cast<int>(width[i])) << r[i];
      else ss << std::right << std::setw(static_cast<int>(width[i])) << r[i];
    }
    ss << "\n";
  }
  return ss.str();
}

inline std::string cell_dir_name(const std::string& cell) {
  std::string out;
  for (char ch : cell) {
    if (std::isalnum(static_cast<unsigned char>(ch))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? "cell" : out;
}

inline void write_run_csv(const std::filesystem::path& path, const std::vector<RunRecord>& runs, const std::string& first_column) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << first_column << ",seed,seen_cer,unseen_cer,probe_acc,final_hash\n";
  for (const auto& r : runs)
    out << r.cell << ',' << r.seed << ',' << format_optional(r.seen_cer, 10) << ',' << format_optional(r.unseen_cer, 10) << ','
        << format_optional(r.probe_acc, 10) << ',' << hex64(r.final_hash) << "\n";
}

inline void write_summary_csv(const std::filesystem::path& path, const std::vector<CellSummary>& cells, const std::string& first_column) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << first_column << ",runs,seen_cer,unseen_cer,probe_acc\n";
  for (const auto& c : cells)
    out << c.cell << ',' << c.runs << ',' << format_optional(c.seen_cer, 10) << ',' << format_optional(c.unseen_cer, 10) << ','
        << format_optional(c.probe_acc, 10) << "\n";
}

namespace detail {
inline AblationResult run_cells(const TrainConfig& base, const Corpus& corpus, const std::vector<AblationCell>& cells,
                                std::size_t seeds, const std::filesystem::path& out_dir, const std::string& dir_prefix,
                                std::ostream* log) {
  if (cells.empty()) throw ConfigError("grid is empty");
  if (seeds == 0) throw ConfigError("need at least one seed");
  AblationResult result;
  std::vector<std::string> order;
  for (const auto& cell : cells) {
    order.push_back(cell.name);
    for (std::size_t k = 0; k < seeds; ++k) {
      TrainConfig cfg = base;
      cell.apply(cfg);
      cfg.seed = base.seed + k;
      std::filesystem::path dir;
      if (!out_dir.empty()) dir = out_dir / (dir_prefix + cell_dir_name(cell.name)) / ("seed_" + std::to_string(cfg.seed));
      if (log) *log << "[" << dir_prefix << cell.name << " seed " << cfg.seed << "]" << std::endl;
      const auto r = train(cfg, corpus, dir);
      result.runs.push_back({cell.name, cfg.seed, r.seen_cer, r.unseen_cer, r.probe_acc, r.final_hash});
      if (log)
        *log << "  seen_cer " << format_optional(r.seen_cer, 4) << " unseen_cer " << format_optional(r.unseen_cer, 4)
             << " probe_acc " << format_optional(r.probe_acc, 4) << std::endl;
    }
  }
  result.cells = summarize(result.runs, order);
  return result;
}
}  // namespace detail

/// One training run per (cell, seed); seeds are base.seed, base.seed + 1, ...
/// With a non-empty `out_dir`, each run gets its own directory and the
/// per-run CSV, median CSV and aligned table are written at the top level.
inline AblationResult run_ablation(const TrainConfig& base, const Corpus& corpus, const std::vector<AblationCell>& cells,
                                   std::size_t seeds, const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr) {
  auto result = detail::run_cells(base, corpus, cells, seeds, out_dir, "", log);
  if (!out_dir.empty()) {
    write_run_csv(out_dir / "ablation_runs.csv", result.runs, "cell");
    write_summary_csv(out_dir / "ablation.csv", result.cells, "cell");
    std::ofstream(out_dir / "ablation.txt") << format_table(result.cells);
  }
  return result;
}

inline const std::vector<std::string>& sweep_parameters() {
  static const std::vector<std::string> names{"alpha", "beta", "lambda"};
  return names;
}

inline std::vector<double> default_sweep_grid(const std::string& param) {
  if (param == "alpha") return {0.0, 0.25, 0.5, 1.0, 2.0};
  if (param == "beta") return {0.0, 0.5, 1.0, 2.0, 4.0};
  if (param == "lambda") return {0.0, 0.5, 1.0, 2.0};
  throw ConfigError("unknown sweep parameter '" + param + "' (expected alpha, beta or lambda)");
}

inline std::string format_value(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

/// Full-model runs with one of alpha / beta / lambda set to each grid value.
inline AblationResult run_sweep(const TrainConfig& base, const Corpus& corpus, const std::string& param,
                                const std::vector<double>& values, std::size_t seeds,
                                const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr) {
  (void)default_sweep_grid(param);
  if (values.empty()) throw ConfigError("sweep grid is empty");
  std::vector<AblationCell> cells;
  for (double v : values) {
    if (!(v >= 0.0)) throw ConfigError(param + " values must be >= 0");
    cells.push_back({format_value(v), [param, v](TrainConfig& c) {
                       if (param == "alpha") c.alpha = v;
                       else if (param == "beta") c.beta = v;
                       else c.lambda = v;
                     }});
  }
  auto r = detail::run_cells(base, corpus, cells, seeds, out_dir, param + "_", log);
  if (!out_dir.empty()) {
    write_run_csv(out_dir / "sweep_runs.csv", r.runs, param);
    write_summary_csv(out_dir / "sweep.csv", r.cells, param);
    std::ofstream(out_dir / "sweep.txt") << format_table(r.cells, param);
  }
  return r;
}

}  // namespace siflip

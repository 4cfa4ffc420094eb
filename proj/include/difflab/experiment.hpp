// Copyright 2026 The difflab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "difflab/analysis.hpp"
#include "difflab/mixture.hpp"
#include "difflab/motion.hpp"
#include "difflab/sampler.hpp"
#include "difflab/serialize.hpp"

namespace difflab {

struct ExperimentCell {
  bool guided = false;
  GuidanceConfig cfg;
  std::string label = "none";
};

struct ExperimentConfig {
  json raw;
  std::optional<MixtureModel> mixture;
  std::optional<TrajectoryPrior::Params> trajectory_params;
  ScheduleKind schedule_kind = ScheduleKind::kLinearBeta;
  int T = 1000;
  int ddim_steps = 100;
  json loss_spec;  // null => unguided runs only
  std::vector<ExperimentCell> cells;
  int seed_count = 10;
  std::uint64_t master_seed = 2026;
  std::vector<std::string> formats{"csv", "json", "svg"};

  bool is_motion() const { return trajectory_params.has_value(); }
};

inline ExperimentConfig parse_experiment_config(const json& j) {
  reject_unknown_keys(
      j, {"model", "schedule", "loss", "guidance", "seeds", "outputs"},
      "config");
  ExperimentConfig cfg;
  cfg.raw = j;

  const json& model = j.at("model");
  const std::string kind = model.at("kind").get<std::string>();
  if (kind == "mixture") {
    cfg.mixture = mixture_from_json(model);
  } else if (kind == "trajectory-prior") {
    cfg.trajectory_params = trajectory_params_from_json(model);
  } else {
    throw ConfigError("unknown model kind '" + kind + "'");
  }

  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown_keys(s, {"kind", "T", "ddim_steps"}, "schedule");
    const std::string sk = s.value("kind", "linear-beta");
    if (sk == "linear-beta") cfg.schedule_kind = ScheduleKind::kLinearBeta;
    else if (sk == "cosine") cfg.schedule_kind = ScheduleKind::kCosine;
    else throw ConfigError("unknown schedule kind '" + sk + "'");
    cfg.T = s.value("T", 1000);
    cfg.ddim_steps = s.value("ddim_steps", 100);
  }
  if (cfg.T < 2) throw ConfigError("schedule T must be >= 2");
  if (cfg.ddim_steps < 1 || cfg.ddim_steps > cfg.T) {
    throw ConfigError("ddim_steps must lie in [1, T]");
  }

  if (j.contains("loss")) cfg.loss_spec = j.at("loss");

  if (j.contains("guidance")) {
    for (const auto& g : j.at("guidance")) {
      ExperimentCell cell;
      if (g.is_object() && g.value("method", "") == "none") {
        reject_unknown_keys(g, {"method"}, "guidance[none]");
        cell.guided = false;
        cell.label = "none";
      } else {
        cell.guided = true;
        cell.cfg = guidance_from_json(g);
        cell.label = cell.cfg.label();
      }
      cfg.cells.push_back(std::move(cell));
    }
  }
  if (cfg.cells.empty()) cfg.cells.push_back(ExperimentCell{});
  // Disambiguate duplicate labels.
  for (std::size_t i = 0; i < cfg.cells.size(); ++i) {
    int dup = 0;
    for (std::size_t k = 0; k < i; ++k) {
      if (cfg.cells[k].label == cfg.cells[i].label ||
          cfg.cells[k].label.starts_with(cfg.cells[i].label + "@")) {
        ++dup;
      }
    }
    if (dup > 0) cfg.cells[i].label += "@" + std::to_string(dup + 1);
  }

  bool any_guided = false;
  for (const auto& c : cfg.cells) any_guided |= c.guided;
  if (any_guided && cfg.loss_spec.is_null()) {
    throw ConfigError("guided cells require a loss spec");
  }

  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    reject_unknown_keys(s, {"count", "master"}, "seeds");
    cfg.seed_count = s.value("count", 10);
    cfg.master_seed = s.value("master", static_cast<std::uint64_t>(2026));
  }
  if (cfg.seed_count < 1) throw ConfigError("seeds.count must be >= 1");

  if (j.contains("outputs")) {
    const json& o = j.at("outputs");
    reject_unknown_keys(o, {"formats"}, "outputs");
    if (o.contains("formats")) {
      cfg.formats.clear();
      for (const auto& f : o.at("formats")) {
        const std::string fmt = f.get<std::string>();
        if (fmt != "csv" && fmt != "json" && fmt != "svg") {
          throw ConfigError("unknown output format '" + fmt + "'");
        }
        cfg.formats.push_back(fmt);
      }
    }
  }
  return cfg;
}

/// Echo of the config with every default materialized.
inline json resolved_config_json(const ExperimentConfig& cfg) {
  json j;
  if (cfg.mixture) {
    j["model"] = mixture_to_json(*cfg.mixture);
    j["model"]["kind"] = "mixture";
  } else {
    j["model"] = trajectory_params_to_json(*cfg.trajectory_params);
  }
  j["schedule"] = json{{"kind", to_string(cfg.schedule_kind)},
                       {"T", cfg.T},
                       {"ddim_steps", cfg.ddim_steps}};
  if (!cfg.loss_spec.is_null()) j["loss"] = cfg.loss_spec;
  j["guidance"] = json::array();
  for (const auto& c : cfg.cells) {
    if (c.guided) {
      json g = guidance_to_json(c.cfg);
      g["label"] = c.label;
      j["guidance"].push_back(g);
    } else {
      j["guidance"].push_back(json{{"method", "none"}, {"label", c.label}});
    }
  }
  j["seeds"] = json{{"count", cfg.seed_count}, {"master", cfg.master_seed}};
  j["outputs"] = json{{"formats", cfg.formats}};
  return j;
}

// ---------------------------------------------------------------------------
// Execution.
// ---------------------------------------------------------------------------

struct RunRecord {
  int cell = 0;
  int seed_index = 0;
  std::uint64_t key = 0;
  SampleTrace trace;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  double distance = std::numeric_limits<double>::quiet_NaN();
  double log_likelihood = std::numeric_limits<double>::quiet_NaN();
  double targeting = std::numeric_limits<double>::quiet_NaN();
  double avoidance = std::numeric_limits<double>::quiet_NaN();
  int violations = 0;
  double wall_seconds = 0.0;
};

struct ComparisonRow {
  std::string label;
  std::string optimizer;
  int resampling_s = 1;
  int runs = 0;
  double mean_final_loss = 0.0, median_final_loss = 0.0;
  double mean_distance = 0.0, median_distance = 0.0;
  double mean_log_likelihood = 0.0;
  long nfe_score = 0, nfe_loss = 0;  // per run (identical across seeds)
  double mean_targeting = 0.0, mean_avoidance = 0.0;
  double mean_violations = 0.0;
};

struct ExperimentResult {
  std::vector<RunRecord> records;  // ordered by (cell, seed)
  std::vector<ComparisonRow> report;
  double wall_seconds = 0.0;
  // First failure, if any run aborted; completed records are still present
  // so callers can flush partial artifacts before re-raising.
  std::exception_ptr first_error;
};

namespace detail {

inline double distance_to_condition(const LossFunction* loss,
                                    const Vec& terminal) {
  if (loss == nullptr) return std::numeric_limits<double>::quiet_NaN();
  if (const auto* q = dynamic_cast<const QuadraticTargetLoss*>(loss)) {
    return (terminal - q->target()).norm();
  }
  if (const auto* m = dynamic_cast<const MotionLoss*>(loss)) {
    return std::sqrt(m->parts(terminal).targeting);
  }
  return std::sqrt(std::max(loss->value(terminal), 0.0));
}

}  // namespace detail

/// Executes every (cell x seed) pair, fanning out across `jobs` workers.
/// Seed keys depend only on (master, seed index), so all methods see
/// identical initial noise per seed and adding a method never perturbs the
/// randomness of existing cells.
inline ExperimentResult run_experiment_cells(const ExperimentConfig& cfg,
                                             int jobs) {
  const auto t0 = std::chrono::steady_clock::now();
  const NoiseSchedule sch = make_schedule(cfg.schedule_kind, cfg.T);
  std::optional<TrajectoryPrior> prior;
  if (cfg.trajectory_params) prior.emplace(*cfg.trajectory_params);

  std::unique_ptr<LossFunction> loss;
  if (!cfg.loss_spec.is_null()) {
    loss = loss_from_json(cfg.loss_spec,
                          cfg.mixture ? &*cfg.mixture : nullptr,
                          prior ? &*prior : nullptr);
  }

  const int n_cells = static_cast<int>(cfg.cells.size());
  const int n_tasks = n_cells * cfg.seed_count;
  ExperimentResult result;
  result.records.resize(static_cast<std::size_t>(n_tasks));

  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_tasks));

  auto worker = [&]() {
    for (;;) {
      const int task = next.fetch_add(1);
      if (task >= n_tasks) return;
      const int cell = task / cfg.seed_count;
      const int seed = task % cfg.seed_count;
      RunRecord& rec = result.records[static_cast<std::size_t>(task)];
      rec.cell = cell;
      rec.seed_index = seed;
      rec.key = CounterRng::keyed(cfg.master_seed,
                                  static_cast<std::uint64_t>(seed), "run")
                    .key();
      const auto w0 = std::chrono::steady_clock::now();
      try {
        const ExperimentCell& c = cfg.cells[static_cast<std::size_t>(cell)];
        const GuidanceConfig* g = c.guided ? &c.cfg : nullptr;
        if (cfg.mixture) {
          rec.trace = sample(*cfg.mixture, sch, cfg.ddim_steps, g, loss.get(),
                             rec.key);
          rec.log_likelihood = cfg.mixture->prior_log_density(rec.trace.terminal);
        } else {
          rec.trace = sample(*prior, sch, cfg.ddim_steps, g, loss.get(),
                             rec.key);
          rec.log_likelihood = prior->prior_log_density(rec.trace.terminal);
          if (const auto* ml = dynamic_cast<const MotionLoss*>(loss.get())) {
            const auto parts = ml->parts(rec.trace.terminal);
            rec.targeting = parts.targeting;
            rec.avoidance = parts.avoidance;
            rec.violations = ml->violations(rec.trace.terminal);
          }
        }
        if (loss != nullptr) {
          rec.final_loss = loss->value(rec.trace.terminal);
          rec.distance = detail::distance_to_condition(loss.get(),
                                                       rec.trace.terminal);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(task)] = std::current_exception();
      }
      rec.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - w0)
              .count();
    }
  };

  jobs = std::max(1, jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e && !result.first_error) result.first_error = e;
  }
  if (result.first_error) {
    // Keep only the runs that completed; aggregation is skipped.
    std::vector<RunRecord> done;
    for (auto& rec : result.records) {
      if (!rec.trace.steps.empty()) done.push_back(std::move(rec));
    }
    result.records = std::move(done);
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return result;
  }

  // Aggregate per cell.
  for (int c = 0; c < n_cells; ++c) {
    ComparisonRow row;
    const ExperimentCell& cell = cfg.cells[static_cast<std::size_t>(c)];
    row.label = cell.label;
    row.optimizer = cell.guided ? to_string(cell.cfg.optimizer) : "-";
    row.resampling_s =
        cell.guided && cell.cfg.resampling ? cell.cfg.resampling->s : 1;
    std::vector<double> losses, dists;
    for (int s = 0; s < cfg.seed_count; ++s) {
      const RunRecord& rec =
          result.records[static_cast<std::size_t>(c * cfg.seed_count + s)];
      ++row.runs;
      row.mean_final_loss += rec.final_loss;
      row.mean_distance += rec.distance;
      row.mean_log_likelihood += rec.log_likelihood;
      row.mean_targeting += rec.targeting;
      row.mean_avoidance += rec.avoidance;
      row.mean_violations += rec.violations;
      losses.push_back(rec.final_loss);
      dists.push_back(rec.distance);
      row.nfe_score = rec.trace.counters.score_evals;
      row.nfe_loss = rec.trace.counters.loss_grad_evals;
    }
    row.mean_final_loss /= row.runs;
    row.mean_distance /= row.runs;
    row.mean_log_likelihood /= row.runs;
    row.mean_targeting /= row.runs;
    row.mean_avoidance /= row.runs;
    row.mean_violations /= row.runs;
    if (!cfg.loss_spec.is_null()) {
      row.median_final_loss = median_of(losses);
      row.median_distance = median_of(dists);
    }
    result.report.push_back(std::move(row));
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

inline json comparison_report_json(const ExperimentConfig& cfg,
                                   const ExperimentResult& result) {
  json rows = json::array();
  for (const auto& r : result.report) {
    json row;
    row["method"] = r.label;
    row["optimizer"] = r.optimizer;
    row["resampling_s"] = r.resampling_s;
    row["runs"] = r.runs;
    row["mean_final_loss"] = r.mean_final_loss;
    row["median_final_loss"] = r.median_final_loss;
    row["mean_distance"] = r.mean_distance;
    row["median_distance"] = r.median_distance;
    row["mean_log_likelihood"] = r.mean_log_likelihood;
    row["nfe_score"] = r.nfe_score;
    row["nfe_loss"] = r.nfe_loss;
    if (cfg.is_motion()) {
      row["mean_targeting"] = r.mean_targeting;
      row["mean_avoidance"] = r.mean_avoidance;
      row["mean_violations"] = r.mean_violations;
    }
    rows.push_back(std::move(row));
  }
  return json{{"rows", rows}};
}

/// Runs the experiment and writes the artifact tree; everything except
/// metadata.json is a deterministic function of (config, master seed).
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::filesystem::path& out_dir,
                                       int jobs) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ExperimentResult result = run_experiment_cells(cfg, jobs);

  if (result.first_error) {
    // Flush what completed before re-raising the failure.
    write_text_file((out_dir / "resolved_config.json").string(),
                    resolved_config_json(cfg).dump(2) + "\n");
    std::string body = trace_csv_header();
    for (const auto& r : result.records) {
      append_trace_csv(body,
                       cfg.cells[static_cast<std::size_t>(r.cell)].label +
                           "#" + std::to_string(r.seed_index),
                       r.trace);
    }
    write_text_file((out_dir / "traces.csv").string(), body);
    std::rethrow_exception(result.first_error);
  }

  const bool want_csv =
      std::find(cfg.formats.begin(), cfg.formats.end(), "csv") !=
      cfg.formats.end();
  const bool want_json =
      std::find(cfg.formats.begin(), cfg.formats.end(), "json") !=
      cfg.formats.end();
  const bool want_svg =
      std::find(cfg.formats.begin(), cfg.formats.end(), "svg") !=
      cfg.formats.end();

  write_text_file((out_dir / "resolved_config.json").string(),
                  resolved_config_json(cfg).dump(2) + "\n");

  auto run_id = [&](const RunRecord& r) {
    return cfg.cells[static_cast<std::size_t>(r.cell)].label + "#" +
           std::to_string(r.seed_index);
  };

  if (want_csv) {
    std::string body = trace_csv_header();
    for (const auto& r : result.records) append_trace_csv(body, run_id(r), r.trace);
    write_text_file((out_dir / "traces.csv").string(), body);
  }

  if (want_json) {
    json terminals = json::array();
    for (const auto& r : result.records) {
      json t;
      t["run_id"] = run_id(r);
      t["cell"] = cfg.cells[static_cast<std::size_t>(r.cell)].label;
      t["seed_index"] = r.seed_index;
      t["seed_key"] = r.key;
      t["terminal"] = to_json(r.trace.terminal);
      t["final_loss"] = r.final_loss;
      t["distance"] = r.distance;
      t["log_likelihood"] = r.log_likelihood;
      t["nfe_score"] = r.trace.counters.score_evals;
      t["nfe_loss"] = r.trace.counters.loss_grad_evals;
      terminals.push_back(std::move(t));
    }
    write_text_file((out_dir / "terminals.json").string(),
                    json{{"runs", terminals}}.dump(2) + "\n");
    write_text_file((out_dir / "report.json").string(),
                    comparison_report_json(cfg, result).dump(2) + "\n");
  }

  if (cfg.is_motion()) {
    const TrajectoryPrior prior(*cfg.trajectory_params);
    std::vector<std::string> ids;
    std::vector<Mat> frames;
    for (const auto& r : result.records) {
      ids.push_back(run_id(r));
      frames.push_back(prior.to_frames(r.trace.terminal));
    }
    if (want_csv) {
      write_text_file((out_dir / "trajectories.csv").string(),
                      trajectory_csv(ids, frames));
    }
    if (want_svg && !cfg.loss_spec.is_null()) {
      const MotionCondition cond =
          motion_condition_from_json(cfg.loss_spec);
      // Overlay a handful per cell to keep the figure legible.
      std::vector<Mat> subset;
      for (const auto& r : result.records) {
        if (r.seed_index < 8) {
          subset.push_back(prior.to_frames(r.trace.terminal));
        }
      }
      fs::create_directories(out_dir / "plots");
      write_text_file((out_dir / "plots" / "trajectories.svg").string(),
                      svg_trajectories(subset, cond));
    }
  }

  if (want_svg) {
    fs::create_directories(out_dir / "plots");
    std::vector<std::string> labels;
    std::vector<std::vector<std::vector<double>>> losses;
    for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
      labels.push_back(cfg.cells[c].label);
      std::vector<std::vector<double>> cell_losses;
      for (const auto& r : result.records) {
        if (r.cell == static_cast<int>(c) && r.seed_index < 16) {
          cell_losses.push_back(r.trace.losses());
        }
      }
      losses.push_back(std::move(cell_losses));
    }
    if (!cfg.loss_spec.is_null()) {
      write_text_file((out_dir / "plots" / "loss_traces.svg").string(),
                      svg_loss_traces(labels, losses));
      std::vector<double> medians;
      for (const auto& r : result.report) medians.push_back(r.median_final_loss);
      write_text_file((out_dir / "plots" / "comparison.svg").string(),
                      svg_comparison_bars(labels, medians,
                                          "median final guidance loss"));
    }
  }

  // Wall-clock data lives only here, keeping the rest byte-reproducible.
  json meta;
  meta["wall_seconds"] = result.wall_seconds;
  meta["timestamp_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count();
  json cell_walls = json::array();
  for (const auto& r : result.records) cell_walls.push_back(r.wall_seconds);
  meta["run_wall_seconds"] = cell_walls;
  write_text_file((out_dir / "metadata.json").string(), meta.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// Paired gd/pgd comparison (hard-condition optimizer study).
// ---------------------------------------------------------------------------

struct PairedReport {
  int seeds = 0;
  double frac_pgd_not_worse = 0.0;
  double median_gd = 0.0, median_pgd = 0.0;
  double median_diff = 0.0;  // pgd - gd
  double mc_band = 0.0;      // 3 * 1.2533 * sd(diff)/sqrt(n)
  std::vector<double> gd_losses, pgd_losses;
};

/// Runs the config's loss/model under tweedie guidance with gd and pgd on
/// matched seeds and reports the paired final losses.
inline PairedReport compare_fig3(const ExperimentConfig& cfg, int jobs) {
  if (!cfg.mixture) throw ConfigError("compare-fig3 expects a mixture model");
  if (cfg.loss_spec.is_null()) throw ConfigError("compare-fig3 needs a loss");
  if (cfg.seed_count < 1) throw ConfigError("compare-fig3 needs >= 1 seed");

  ExperimentConfig paired = cfg;
  paired.cells.clear();
  GuidanceConfig base;
  if (!cfg.cells.empty() && cfg.cells.front().guided) {
    base = cfg.cells.front().cfg;
  }
  base.optimizer = OptimizerKind::kGd;
  paired.cells.push_back(ExperimentCell{true, base, "gd"});
  base.optimizer = OptimizerKind::kPgd;
  paired.cells.push_back(ExperimentCell{true, base, "pgd"});

  const ExperimentResult result = run_experiment_cells(paired, jobs);
  if (result.first_error) std::rethrow_exception(result.first_error);
  PairedReport rep;
  rep.seeds = cfg.seed_count;
  std::vector<double> diffs;
  for (int s = 0; s < cfg.seed_count; ++s) {
    const double gd =
        result.records[static_cast<std::size_t>(s)].final_loss;
    const double pgd =
        result.records[static_cast<std::size_t>(cfg.seed_count + s)]
            .final_loss;
    rep.gd_losses.push_back(gd);
    rep.pgd_losses.push_back(pgd);
    diffs.push_back(pgd - gd);
    if (pgd <= gd) rep.frac_pgd_not_worse += 1.0;
  }
  rep.frac_pgd_not_worse /= rep.seeds;
  rep.median_gd = median_of(rep.gd_losses);
  rep.median_pgd = median_of(rep.pgd_losses);
  rep.median_diff = median_of(diffs);
  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= diffs.size();
  double sd = 0.0;
  for (double d : diffs) sd += (d - mean) * (d - mean);
  sd = std::sqrt(sd / std::max<std::size_t>(diffs.size() - 1, 1));
  rep.mc_band = 3.0 * 1.2533 * sd / std::sqrt(static_cast<double>(rep.seeds));
  return rep;
}

inline json paired_report_json(const PairedReport& rep) {
  return json{{"seeds", rep.seeds},
              {"frac_pgd_not_worse", rep.frac_pgd_not_worse},
              {"median_gd", rep.median_gd},
              {"median_pgd", rep.median_pgd},
              {"median_diff", rep.median_diff},
              {"mc_band", rep.mc_band}};
}

}  // namespace difflab

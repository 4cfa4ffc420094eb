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

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/guidance.hpp"
#include "difflab/oracle.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

struct TraceStep {
  int node = 0;        // position along the grid, 0 at t = T
  int t = 0;           // schedule index
  Vec x;               // state entering this node (empty if not recorded)
  Vec x0_hat;          // Tweedie estimate at this node
  double loss = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;   // ||loss gradient|| applied on the outgoing step
  double step_size = 0.0;   // eta_t used on the outgoing step
  bool grad_capped = false;
};

struct SampleTrace {
  std::vector<TraceStep> steps;
  Vec terminal;
  std::uint64_t seed_key = 0;
  RunCounters counters;
  std::vector<int> grid;
  int transitions = 0;  // grid transitions actually executed

  std::vector<double> losses() const {
    std::vector<double> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.loss);
    return out;
  }
};

struct SampleOptions {
  // Stop after landing on the first grid node <= this index (0 = run to the end).
  int stop_at_index = 0;
  // Draw x_T from the exact noised marginal instead of N(0, I); used by the
  // distribution-level experiments where init bias would eat the MC budget.
  bool exact_marginal_init = false;
  // Keep full state vectors in the trace (turn off for large populations).
  bool record_full_state = true;
};

namespace detail {

inline bool resampling_active(const GuidanceConfig& cfg, int s_idx, int T) {
  if (!cfg.resampling || cfg.resampling->s <= 1) return false;
  const double frac = static_cast<double>(s_idx) / static_cast<double>(T);
  return frac >= cfg.resampling->t_lo && frac <= cfg.resampling->t_hi;
}

}  // namespace detail

/// Guided DDIM over an explicit strictly-decreasing grid of schedule indices.
/// Per transition s -> t: one eps forward, the exponential-integrator step,
/// then (if configured) the guidance update on the post-step iterate, exactly
/// in that order.  The guidance gradient is evaluated at (x_s, s) and applied
/// to x_t, matching the update rule this code models.  Deterministic given
/// run_key.
template <DiffusionOracle O>
SampleTrace sample_on_grid(const O& oracle, const NoiseSchedule& sch,
                           const std::vector<int>& grid,
                           const GuidanceConfig* cfg, const LossFunction* loss,
                           std::uint64_t run_key,
                           const SampleOptions& opts = {}) {
  if (grid.size() < 2) throw ConfigError("sampler grid needs >= 2 nodes");
  for (std::size_t j = 1; j < grid.size(); ++j) {
    if (!(grid[j] < grid[j - 1])) {
      throw ConfigError("sampler grid must be strictly decreasing");
    }
  }
  if (cfg != nullptr) {
    cfg->validate();
    if (loss == nullptr) throw ConfigError("guidance requires a loss");
  }
  const int T = sch.steps();
  const int d = oracle.dim();

  CounterRng init_rng = CounterRng(run_key).substream("init");
  CounterRng guide_rng = CounterRng(run_key).substream("guidance");
  CounterRng renoise_rng = CounterRng(run_key).substream("renoise");

  // Transforms drawn once per run when per-step resampling is disabled.
  std::vector<SampledTransform> frozen_transforms;
  if (cfg != nullptr && cfg->method == GuidanceMethod::kRandomAug &&
      !cfg->aug_resample_per_step) {
    CounterRng tf_rng = CounterRng(run_key).substream("aug-frozen");
    for (int j = 0; j < cfg->aug_k; ++j) {
      frozen_transforms.push_back(
          sample_transform(cfg->augset, oracle.dim(), tf_rng));
    }
  }

  SampleTrace trace;
  trace.seed_key = run_key;
  trace.grid = grid;

  Vec x;
  if (opts.exact_marginal_init) {
    const Vec x0 = oracle.sample_prior(init_rng);
    x = forward_noise(x0, sch, grid.front(), init_rng.gaussian_vec(d));
  } else {
    x = init_rng.gaussian_vec(d);
  }

  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    const int s_idx = grid[j];
    const int t_idx = grid[j + 1];

    TraceStep rec;
    rec.node = static_cast<int>(j);
    rec.t = s_idx;
    bool recorded = false;

    auto inner = [&](const Vec& x_src) -> Vec {
      const Vec eps = oracle.epsilon(sch, s_idx, x_src);
      ++trace.counters.score_evals;
      const double sqrt_a =
          std::sqrt(std::max(sch.alpha(s_idx), kAlphaFloor));
      const Vec x0_hat = (x_src - sch.sigma(s_idx) * eps) / sqrt_a;

      Vec x_next = ddim_step(x_src, s_idx, t_idx, eps, sch);

      double grad_norm = 0.0, eta = 0.0;
      bool capped = false;
      if (cfg != nullptr) {
        Vec corr;
        switch (cfg->method) {
          case GuidanceMethod::kExact:
            corr = exact_correction(oracle, sch, s_idx, x_src, *loss,
                                    &trace.counters);
            break;
          case GuidanceMethod::kTweedie:
            corr = tweedie_guidance_grad_at(oracle, sch, s_idx, x_src, x0_hat,
                                            *loss, &trace.counters);
            break;
          case GuidanceMethod::kLgdMc:
            corr = lgd_mc_grad_at(oracle, sch, s_idx, x_src, x0_hat, *loss,
                                  cfg->lgd_n, cfg->lgd_radius(sch, s_idx),
                                  guide_rng, &trace.counters);
            break;
          case GuidanceMethod::kSmoothed: {
            const Vec sg = smoothed_loss_grad(
                *loss, x0_hat, cfg->smoothing_sigma(sch, s_idx), cfg->smooth_m,
                guide_rng, &trace.counters);
            corr = -oracle.posterior_jacobian_vec(sch, s_idx, x_src, sg);
            break;
          }
          case GuidanceMethod::kRandomAug:
            if (cfg->aug_resample_per_step) {
              corr = random_aug_grad_at(oracle, sch, s_idx, x_src, x0_hat,
                                        *loss, cfg->augset, cfg->aug_k,
                                        guide_rng, &trace.counters);
            } else {
              const Vec avg = aug_average_x0_grad_fixed(
                  *loss, frozen_transforms, x0_hat, &trace.counters);
              corr = -oracle.posterior_jacobian_vec(sch, s_idx, x_src, avg);
            }
            break;
        }
        Vec g = -corr;
        grad_norm = g.stableNorm();  // overflow-safe for extreme losses
        if (grad_norm > kGradNormCap) {
          g *= kGradNormCap / grad_norm;
          grad_norm = kGradNormCap;
          capped = true;
        }
        eta = cfg->step_size(sch, s_idx);
        x_next = guided_update(x_next, g, eta, cfg->optimizer);
      }

      if (!recorded) {
        recorded = true;
        if (opts.record_full_state) {
          rec.x = x_src;
          rec.x0_hat = x0_hat;
        }
        if (loss != nullptr) rec.loss = loss->value(x0_hat);
        rec.grad_norm = grad_norm;
        rec.step_size = eta;
        rec.grad_capped = capped;
      }
      return x_next;
    };

    const int sweeps =
        cfg != nullptr && detail::resampling_active(*cfg, s_idx, T)
            ? cfg->resampling->s
            : 1;
    x = resample_sweep(x, s_idx, t_idx, sweeps, sch, inner, renoise_rng);
    trace.steps.push_back(std::move(rec));
    ++trace.transitions;

    if (!x.allFinite()) {
      throw NumericalError("non-finite state after step to t=" +
                               std::to_string(t_idx),
                           static_cast<int>(j), trace.steps.back().grad_norm);
    }
    if (t_idx <= opts.stop_at_index) break;
  }

  // Terminal record.  At t = 0 the Tweedie estimate is the sample itself; on
  // early stops the state alone is what population-level callers consume.
  const int t_final = grid[static_cast<std::size_t>(trace.transitions)];
  TraceStep last;
  last.node = trace.transitions;
  last.t = t_final;
  if (t_final == 0) {
    if (opts.record_full_state) {
      last.x = x;
      last.x0_hat = x;
    }
    if (loss != nullptr) last.loss = loss->value(x);
  } else if (opts.record_full_state) {
    last.x = x;
  }
  trace.steps.push_back(std::move(last));
  trace.terminal = x;
  return trace;
}

/// Guided DDIM over the uniform-in-index sub-grid with `ddim_steps` steps.
template <DiffusionOracle O>
SampleTrace sample(const O& oracle, const NoiseSchedule& sch, int ddim_steps,
                   const GuidanceConfig* cfg, const LossFunction* loss,
                   std::uint64_t run_key, const SampleOptions& opts = {}) {
  return sample_on_grid(oracle, sch, ddim_grid(sch, ddim_steps), cfg, loss,
                        run_key, opts);
}

/// Expected instrumentation for a run: one score forward per guided sweep and
/// the per-method loss-gradient factor.  Used to cross-check the counters.
inline RunCounters expected_counters(const GuidanceConfig* cfg,
                                     const NoiseSchedule& sch,
                                     const std::vector<int>& grid,
                                     int transitions) {
  RunCounters out;
  for (int j = 0; j < transitions; ++j) {
    const int s_idx = grid[static_cast<std::size_t>(j)];
    const int sweeps =
        cfg != nullptr && detail::resampling_active(*cfg, s_idx, sch.steps())
            ? cfg->resampling->s
            : 1;
    long per_sweep_score = 1;
    long per_sweep_loss = 0;
    if (cfg != nullptr) {
      switch (cfg->method) {
        case GuidanceMethod::kExact:
          per_sweep_score += 1;  // tilted-model score forward
          break;
        case GuidanceMethod::kTweedie: per_sweep_loss = 1; break;
        case GuidanceMethod::kLgdMc: per_sweep_loss = cfg->lgd_n; break;
        case GuidanceMethod::kSmoothed: per_sweep_loss = cfg->smooth_m; break;
        case GuidanceMethod::kRandomAug: per_sweep_loss = cfg->aug_k; break;
      }
    }
    out.score_evals += sweeps * per_sweep_score;
    out.loss_grad_evals += sweeps * per_sweep_loss;
  }
  return out;
}

}  // namespace difflab

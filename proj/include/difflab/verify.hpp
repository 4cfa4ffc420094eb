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

#include <string>
#include <vector>

#include "difflab/analysis.hpp"
#include "difflab/experiment.hpp"
#include "difflab/serialize.hpp"

namespace difflab {

struct ClaimReport {
  std::string claim_id;
  bool pass = false;
  json measured;
  json bound;
  double tolerance = 0.0;
  json details;
  std::string csv;  // raw measurement rows: name,value per line
};

inline const std::vector<std::string>& claim_ids() {
  static const std::vector<std::string> kIds = {
      "prop1-linear-rate", "prop2-lip",          "prop2-gradlip",
      "prop3-order",       "prop4-smoothing",    "lemma1-tv",
      "prop5-contraction", "fig1-two-stage",     "fig2-adversarial"};
  return kIds;
}

inline json claim_report_json(const ClaimReport& r) {
  return json{{"claim_id", r.claim_id}, {"pass", r.pass},
              {"measured", r.measured}, {"bound", r.bound},
              {"tolerance", r.tolerance}, {"details", r.details}};
}

namespace claims {

// Shared fixtures -----------------------------------------------------------

/// Three-mode planar mixture with the guidance target on one mode.  The
/// separation is wide enough that traces show the full two-stage shape: an
/// early high/oscillating plateau while the trajectory is uncommitted, then
/// a log-linear decline.
inline MixtureModel fig1_model() {
  Vec m0(2), m1(2), m2(2);
  m0 << 0.0, 0.0;
  m1 << 6.0, 0.0;
  m2 << 0.0, 6.0;
  return MixtureModel({1.0 / 3, 1.0 / 3, 1.0 / 3}, {m0, m1, m2},
                      {0.36, 0.36, 0.36});
}

inline Vec fig1_target() {
  Vec y(2);
  y << 6.0, 0.0;
  return y;
}

/// Loss level of 100 exact draws from the target mode (the reference level
/// a successful guidance run should reach).
inline double fig1_reference_loss(const MixtureModel& model,
                                  const QuadraticTargetLoss& loss,
                                  std::uint64_t seed) {
  CounterRng rng(CounterRng::derive_key(seed, detail::fnv1a("ref-loss")));
  double acc = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec x0 =
        fig1_target() + std::sqrt(model.variance(1)) * rng.gaussian_vec(2);
    acc += loss.value(x0);
  }
  return acc / 100.0;
}

struct Fig1Outcome {
  std::vector<TwoStageReport> reports;
  double reference_loss = 0.0;
  std::vector<double> lambda_min_samples;
};

inline Fig1Outcome fig1_runs(std::uint64_t seed, int n_seeds) {
  const MixtureModel model = fig1_model();
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 1000);
  const QuadraticTargetLoss loss(fig1_target(), 1.0);
  GuidanceConfig cfg;
  cfg.method = GuidanceMethod::kTweedie;
  cfg.eta = 0.5;
  Fig1Outcome out;
  out.reference_loss = fig1_reference_loss(model, loss, seed);
  for (int i = 0; i < n_seeds; ++i) {
    const std::uint64_t key =
        CounterRng::keyed(seed, static_cast<std::uint64_t>(i), "fig1").key();
    const SampleTrace tr = sample(model, sch, 100, &cfg, &loss, key);
    out.reports.push_back(two_stage_metrics(tr, out.reference_loss));
    if (i < 8) {
      for (const auto& st : tr.steps) {
        if (st.x.size() == 2 && st.t > 0) {
          out.lambda_min_samples.push_back(
              model.posterior_moments(sch, st.t, st.x).lambda_min);
        }
      }
    }
  }
  return out;
}

// Claim implementations -----------------------------------------------------

inline ClaimReport lemma1_tv(std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "lemma1-tv";
  rep.tolerance = 0.01;
  rep.pass = true;
  CounterRng rng(CounterRng::derive_key(seed, detail::fnv1a("lemma1")));
  const int n = 1000000;
  json measured = json::object(), bound = json::object();
  rep.csv = "r,closed_form,mc_estimate,abs_err\n";
  for (double r : {0.0, 0.5, 1.0, 2.0}) {
    const double sigma = 1.0;
    Vec x(1), y(1);
    x << 0.0;
    y << 2.0 * sigma * r;
    const double closed = coupling_tv(x, y, sigma);
    std::vector<Vec> a, b;
    a.reserve(n);
    b.reserve(n);
    for (int i = 0; i < n; ++i) {
      Vec s1(1), s2(1);
      s1 << x[0] + sigma * rng.gaussian();
      s2 << y[0] + sigma * rng.gaussian();
      a.push_back(std::move(s1));
      b.push_back(std::move(s2));
    }
    const double est = tv_estimate(a, b, auto_grid(a, b, 50)).value;
    const std::string key = fmt_g17(r);
    measured[key] = est;
    bound[key] = closed;
    rep.csv += key + "," + fmt_g17(closed) + "," + fmt_g17(est) + "," +
               fmt_g17(std::abs(est - closed)) + "\n";
    if (std::abs(est - closed) > rep.tolerance) rep.pass = false;
  }
  rep.measured = measured;
  rep.bound = bound;
  rep.details = json{{"samples", n}, {"bins", 50}};
  return rep;
}

inline ClaimReport prop2_lip(std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "prop2-lip";
  rep.tolerance = 0.05;  // multiplicative slack on the bound
  rep.pass = true;
  Box box;
  box.lo = Vec::Constant(1, -4.0);
  box.hi = Vec::Constant(1, 4.0);
  json measured = json::object(), bound = json::object();
  rep.csv = "sigma,measured_lipschitz,bound\n";
  for (double sigma : {0.25, 0.5, 1.0}) {
    const SmoothedStepLoss smoothed(sigma);
    const double lip = estimate_lipschitz(
        [&](const Vec& x) { return smoothed.value(x); }, box, 500, 1e-4, seed);
    const double b = std::sqrt(2.0 / (kPi * sigma * sigma));
    measured[fmt_g17(sigma)] = lip;
    bound[fmt_g17(sigma)] = b;
    rep.csv += fmt_g17(sigma) + "," + fmt_g17(lip) + "," + fmt_g17(b) + "\n";
    if (lip > b * 1.05) rep.pass = false;
    if (lip < 0.9 * 0.3989422804014327 / sigma) rep.pass = false;  // estimator sanity
  }
  // The raw step loss is flagged non-Lipschitz: the estimate grows ~ 1/h.
  auto raw = [](const Vec& x) { return x[0] > 0.0 ? 1.0 : 0.0; };
  json growth = json::array();
  double prev = 0.0;
  bool grows = true;
  for (double h : {1e-2, 1e-3, 1e-4}) {
    const double est = estimate_lipschitz(raw, box, 1000, h, seed + 1);
    growth.push_back(json{{"h", h}, {"estimate", est}});
    rep.csv += "raw_h=" + fmt_g17(h) + "," + fmt_g17(est) + ",\n";
    if (est < 1.0 / (2.0 * h) || (prev > 0.0 && est < 5.0 * prev)) {
      grows = false;
    }
    prev = est;
  }
  if (!grows) rep.pass = false;
  rep.measured = measured;
  rep.bound = bound;
  rep.details = json{{"raw_step_growth", growth},
                     {"raw_step_non_lipschitz", grows}};
  return rep;
}

inline ClaimReport prop2_gradlip(std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "prop2-gradlip";
  rep.tolerance = 0.05;
  rep.pass = true;
  Box box;
  box.lo = Vec::Constant(1, -4.0);
  box.hi = Vec::Constant(1, 4.0);
  json measured = json::object(), bound = json::object();
  rep.csv = "sigma,measured_grad_lipschitz,bound\n";
  for (double sigma : {0.25, 0.5, 1.0}) {
    const SmoothedStepLoss smoothed(sigma);
    const double glip = estimate_grad_lipschitz(
        [&](const Vec& x) { return smoothed.value(x); }, box, 500, 1e-4, seed);
    const double b = 2.0 / sigma;
    measured[fmt_g17(sigma)] = glip;
    bound[fmt_g17(sigma)] = b;
    rep.csv += fmt_g17(sigma) + "," + fmt_g17(glip) + "," + fmt_g17(b) + "\n";
    if (glip > b * 1.05) rep.pass = false;
    if (glip < 0.9 * 0.24197072451914337 / (sigma * sigma)) rep.pass = false;
  }
  rep.measured = measured;
  rep.bound = bound;
  return rep;
}

inline ClaimReport prop3_order(std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "prop3-order";
  rep.pass = true;
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 10000);
  MixtureModel m({1.0}, {Vec::Constant(1, 0.5)}, {1.0});

  OrderConfig unguided;
  unguided.num_seeds = 16;
  const OrderFitReport base = discretization_order(m, sch, unguided, seed);
  if (base.slope < 0.8 || base.slope > 1.2) rep.pass = false;

  // Guided comparison: a sharp sigmoid barrier versus a gentle one.  The
  // Lipschitz constant of the guidance enters the error constant, so the
  // sharp variant must carry a larger constant: compare the fitted
  // intercepts and the mean error across the matched grids (per-grid errors
  // fluctuate seed to seed; the aggregate is the claimed constant).
  std::vector<Vec> centers = {Vec::Constant(1, 0.8)};
  const SigmoidBarrierLoss stiff(centers, 0.3, 40.0, 10.0);
  const SigmoidBarrierLoss gentle(centers, 0.3, 4.0, 10.0);
  OrderConfig g1 = unguided, g2 = unguided;
  g1.num_seeds = 32;
  g2.num_seeds = 32;
  g1.guidance_loss = &stiff;
  g1.guidance_weight = 0.3;
  g2.guidance_loss = &gentle;
  g2.guidance_weight = 0.3;
  const OrderFitReport stiff_rep = discretization_order(m, sch, g1, seed);
  const OrderFitReport gentle_rep = discretization_order(m, sch, g2, seed);
  double stiff_mean = 0.0, gentle_mean = 0.0;
  for (std::size_t i = 0; i < stiff_rep.mean_error.size(); ++i) {
    stiff_mean += stiff_rep.mean_error[i];
    gentle_mean += gentle_rep.mean_error[i];
  }
  if (!(stiff_mean > gentle_mean)) rep.pass = false;
  if (!(stiff_rep.intercept > gentle_rep.intercept)) rep.pass = false;

  rep.measured = json{{"slope", base.slope},
                      {"errors", base.mean_error},
                      {"h_max", base.h_max},
                      {"stiff_errors", stiff_rep.mean_error},
                      {"gentle_errors", gentle_rep.mean_error}};
  rep.bound = json{{"slope_lo", 0.8}, {"slope_hi", 1.2}};
  rep.details = json{{"grids", base.grid_sizes},
                     {"reference_steps", base.reference_steps},
                     {"t_start", base.t_start},
                     {"t_end", base.t_end},
                     {"stiff_intercept", stiff_rep.intercept},
                     {"gentle_intercept", gentle_rep.intercept}};
  rep.csv = "grid,h_max,unguided_error,stiff_error,gentle_error\n";
  for (std::size_t i = 0; i < base.grid_sizes.size(); ++i) {
    rep.csv += std::to_string(base.grid_sizes[i]) + "," +
               fmt_g17(base.h_max[i]) + "," + fmt_g17(base.mean_error[i]) +
               "," + fmt_g17(stiff_rep.mean_error[i]) + "," +
               fmt_g17(gentle_rep.mean_error[i]) + "\n";
  }
  return rep;
}

inline ClaimReport prop4_smoothing(std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "prop4-smoothing";
  rep.pass = true;
  Box box;
  box.lo = Vec::Constant(1, -2.0);
  box.hi = Vec::Constant(1, 2.0);
  const double h = 1e-3, rho = 0.25;
  auto raw = [](const Vec& x) { return x[0] > 0.0 ? 1.0 : 0.0; };
  const double raw_glip = estimate_grad_lipschitz(raw, box, 500, h, seed);
  // Expected jitter-augmented loss = Gaussian convolution at scale rho.
  const SmoothedStepLoss augmented(rho);
  const double aug_glip = estimate_grad_lipschitz(
      [&](const Vec& x) { return augmented.value(x); }, box, 500, h, seed + 1);
  if (!(aug_glip <= raw_glip)) rep.pass = false;
  if (!(10.0 * aug_glip <= raw_glip)) rep.pass = false;
  rep.measured = json{{"raw_grad_lipschitz", raw_glip},
                      {"augmented_grad_lipschitz", aug_glip}};
  rep.bound = json{{"improvement_factor_min", 10.0},
                   {"augmented_bound", 2.0 / rho}};
  rep.details = json{{"resolution", h}, {"jitter_std", rho}};
  rep.csv = "name,value\nraw_grad_lipschitz," + fmt_g17(raw_glip) +
            "\naugmented_grad_lipschitz," + fmt_g17(aug_glip) + "\n";
  return rep;
}

inline ClaimReport prop5_contraction(std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "prop5-contraction";
  rep.pass = true;
  MixtureModel model({0.5, 0.5},
                     {Vec::Constant(1, -2.0), Vec::Constant(1, 2.0)},
                     {0.25, 0.25});
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 1000);
  // Deliberately biased guidance: a steady pull toward a far off-manifold
  // point, strong enough to saturate TV at s = 1 yet weak enough per sweep
  // that renoising visibly contracts the deviation.
  const QuadraticTargetLoss biased_loss(Vec::Constant(1, 6.0), 0.2);
  GuidanceConfig biased;
  biased.method = GuidanceMethod::kTweedie;
  biased.eta = 0.5;
  ContractionConfig ccfg;
  const ContractionCurve curve =
      resampling_contraction(model, sch, biased, biased_loss, ccfg, seed);
  if (curve.frac_last_below_first < 0.9) rep.pass = false;
  if (!(curve.rho < 1.0)) rep.pass = false;
  if (!curve.envelope_ok) rep.pass = false;
  rep.measured = json{{"tv", curve.tv},
                      {"bootstrap_frac", curve.frac_last_below_first},
                      {"rho", curve.rho}};
  rep.bound = json{{"bootstrap_frac_min", 0.9}, {"rho_max", 1.0}};
  rep.details = json{{"s_values", curve.s_values},
                     {"t_stop", curve.t_stop},
                     {"runs", ccfg.runs},
                     {"envelope_slack", curve.envelope_slack},
                     {"envelope_ok", curve.envelope_ok}};
  rep.csv = "s,tv\n";
  for (std::size_t i = 0; i < curve.tv.size(); ++i) {
    rep.csv += std::to_string(curve.s_values[i]) + "," +
               fmt_g17(curve.tv[i]) + "\n";
  }
  return rep;
}

inline ClaimReport prop1_linear_rate(std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "prop1-linear-rate";
  rep.pass = true;
  const Fig1Outcome out = fig1_runs(seed, 100);
  int contracted = 0;
  double worst_identity = 0.0;
  std::vector<double> contracting_fracs;
  for (const auto& r : out.reports) {
    double prod = 1.0;
    for (double f : r.contraction_factors) prod *= f;
    if (r.total_late_ratio < 1.0) ++contracted;
    const double rel =
        std::abs(prod - r.total_late_ratio) /
        std::max(std::abs(r.total_late_ratio), 1e-300);
    worst_identity = std::max(worst_identity, rel);
    contracting_fracs.push_back(r.fraction_steps_contracting);
  }
  const double frac = contracted / 100.0;
  if (frac < 0.9) rep.pass = false;
  if (worst_identity > 1e-6) rep.pass = false;

  // Prop 1's per-step hypothesis is measured, not assumed: report how often
  // the loss contracts step to step, and the lambda_min spectrum entering
  // the PL constant.
  std::sort(contracting_fracs.begin(), contracting_fracs.end());
  std::vector<double> lam = out.lambda_min_samples;
  std::sort(lam.begin(), lam.end());
  auto pct = [](const std::vector<double>& v, double p) {
    if (v.empty()) return 0.0;
    const std::size_t i = static_cast<std::size_t>(
        p * static_cast<double>(v.size() - 1));
    return v[i];
  };
  rep.measured = json{{"frac_seeds_late_contraction", frac},
                      {"worst_bookkeeping_rel_err", worst_identity}};
  rep.bound = json{{"frac_min", 0.9}, {"bookkeeping_tol", 1e-6}};
  rep.tolerance = 1e-6;
  rep.details =
      json{{"step_contraction_frac_p10", pct(contracting_fracs, 0.1)},
           {"step_contraction_frac_p50", pct(contracting_fracs, 0.5)},
           {"step_contraction_frac_p90", pct(contracting_fracs, 0.9)},
           {"lambda_min_p10", pct(lam, 0.1)},
           {"lambda_min_p50", pct(lam, 0.5)},
           {"lambda_min_p90", pct(lam, 0.9)},
           {"reference_loss", out.reference_loss}};
  rep.csv = "seed,total_late_ratio,fraction_steps_contracting\n";
  for (std::size_t i = 0; i < out.reports.size(); ++i) {
    rep.csv += std::to_string(i) + "," +
               fmt_g17(out.reports[i].total_late_ratio) + "," +
               fmt_g17(out.reports[i].fraction_steps_contracting) + "\n";
  }
  return rep;
}

inline ClaimReport fig1_two_stage(std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "fig1-two-stage";
  rep.pass = true;
  const Fig1Outcome out = fig1_runs(seed, 100);
  int good = 0;
  rep.csv = "seed,split_index,late_slope,late_r2,final_loss\n";
  for (std::size_t i = 0; i < out.reports.size(); ++i) {
    const auto& r = out.reports[i];
    if (r.late_slope < 0.0 && r.late_r2 >= 0.8) ++good;
    rep.csv += std::to_string(i) + "," + std::to_string(r.split_index) + "," +
               fmt_g17(r.late_slope) + "," + fmt_g17(r.late_r2) + "," +
               fmt_g17(r.final_loss) + "\n";
  }
  const double frac = good / 100.0;
  if (frac < 0.9) rep.pass = false;
  rep.measured = json{{"frac_seeds_log_linear", frac}};
  rep.bound = json{{"frac_min", 0.9}, {"r2_min", 0.8}};
  rep.details = json{{"seeds", 100}, {"reference_loss", out.reference_loss}};
  return rep;
}

inline ClaimReport fig2_adversarial(std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "fig2-adversarial";
  rep.pass = true;
  Vec target(2);
  target << 3.0, -2.0;
  const RuggedWellLoss loss(target, 0.25, 8.0, 10.0);
  const int n = 100;
  int smoothed_wins = 0, aug_wins = 0;
  double raw_loss_drop = 0.0;
  rep.csv = "seed,raw_dist,smoothed_dist,aug_dist,raw_final_loss\n";
  for (int i = 0; i < n; ++i) {
    CounterRng rng = CounterRng::keyed(seed, static_cast<std::uint64_t>(i),
                                       "fig2-init");
    const Vec init = 2.0 * rng.gaussian_vec(2);

    ProbeConfig raw_cfg;
    raw_cfg.variant = ProbeVariant::kRaw;
    raw_cfg.eta = 6e-4;  // stability limit of the rippled landscape
    ProbeConfig smooth_cfg;
    smooth_cfg.variant = ProbeVariant::kSmoothed;
    smooth_cfg.eta = 5e-3;
    smooth_cfg.smooth_sigma = 0.25;
    smooth_cfg.smooth_m = 64;
    ProbeConfig aug_cfg;
    aug_cfg.variant = ProbeVariant::kRandomAug;
    aug_cfg.eta = 5e-3;
    aug_cfg.augset = AugmentationSet::jitter_only(0.25);
    aug_cfg.aug_k = 64;

    const std::uint64_t probe_seed =
        CounterRng::keyed(seed, static_cast<std::uint64_t>(i), "fig2").key();
    const auto raw = accumulated_gradient_probe(loss, target, init, raw_cfg,
                                                probe_seed);
    const auto smoothed = accumulated_gradient_probe(loss, target, init,
                                                     smooth_cfg, probe_seed);
    const auto augmented = accumulated_gradient_probe(loss, target, init,
                                                      aug_cfg, probe_seed);
    if (smoothed.distance_to_target < raw.distance_to_target) ++smoothed_wins;
    if (augmented.distance_to_target < raw.distance_to_target) ++aug_wins;
    const double init_loss = loss.value(init);
    raw_loss_drop += (init_loss - raw.final_loss) / std::max(init_loss, 1e-12);
    rep.csv += std::to_string(i) + "," + fmt_g17(raw.distance_to_target) +
               "," + fmt_g17(smoothed.distance_to_target) + "," +
               fmt_g17(augmented.distance_to_target) + "," +
               fmt_g17(raw.final_loss) + "\n";
  }
  const double frac_smoothed = static_cast<double>(smoothed_wins) / n;
  const double frac_aug = static_cast<double>(aug_wins) / n;
  if (frac_smoothed < 0.8 || frac_aug < 0.8) rep.pass = false;
  rep.measured = json{{"frac_smoothed_closer", frac_smoothed},
                      {"frac_augmented_closer", frac_aug},
                      {"mean_raw_relative_loss_drop", raw_loss_drop / n}};
  rep.bound = json{{"frac_min", 0.8}};
  rep.details = json{{"seeds", n}, {"steps", 1000}};
  return rep;
}

}  // namespace claims

inline ClaimReport run_claim(const std::string& id, std::uint64_t seed) {
  if (id == "prop1-linear-rate") return claims::prop1_linear_rate(seed);
  if (id == "prop2-lip") return claims::prop2_lip(seed);
  if (id == "prop2-gradlip") return claims::prop2_gradlip(seed);
  if (id == "prop3-order") return claims::prop3_order(seed);
  if (id == "prop4-smoothing") return claims::prop4_smoothing(seed);
  if (id == "lemma1-tv") return claims::lemma1_tv(seed);
  if (id == "prop5-contraction") return claims::prop5_contraction(seed);
  if (id == "fig1-two-stage") return claims::fig1_two_stage(seed);
  if (id == "fig2-adversarial") return claims::fig2_adversarial(seed);
  throw ConfigError("unknown claim id '" + id + "'");
}

}  // namespace difflab

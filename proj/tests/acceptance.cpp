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

// End-to-end acceptance suite: one pass/fail line per criterion, exit code
// equal to the number of failures.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "difflab/experiment.hpp"
#include "difflab/finite_diff.hpp"
#include "difflab/schema.hpp"
#include "difflab/verify.hpp"

#ifndef DIFFLAB_SOURCE_DIR
#define DIFFLAB_SOURCE_DIR "."
#endif

using namespace difflab;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what,
            const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL",
              criterion, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

json load_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot read " + p.string());
  json j;
  in >> j;
  return j;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Vec v1(double a) {
  Vec v(1);
  v << a;
  return v;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Criterion 1: oracle consistency against independent routes.
void criterion_1() {
  const NoiseSchedule sch(ScheduleKind::kLinearBeta,
                          {1.0, 0.999, 0.5, 0.25, 0.1, 0.01});
  const MixtureModel mix({0.4, 0.6}, {v2(-1.5, 0.5), v2(2.0, -1.0)},
                         {0.6, 1.3});
  CounterRng rng(1001);
  double worst_score = 0.0, worst_mean = 0.0, worst_cov = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int t = 1 + static_cast<int>(rng.next_u64() % 5);
    const Vec x = 4.0 * rng.gaussian_vec(2);
    const Vec s = mix.score(sch, t, x);
    const Vec fd = finite_diff_grad(
        [&](const Vec& p) { return mix.marginal_log_density(sch, t, p); }, x,
        1e-5);
    worst_score = std::max(
        worst_score, (s - fd).norm() / std::max(1.0, s.norm()));
    const auto direct = mix.posterior_moments_direct(sch, t, x);
    worst_mean = std::max(
        worst_mean, (mix.posterior_mean(sch, t, x) - direct.mean).norm());
    worst_cov = std::max(
        worst_cov,
        (mix.posterior_moments(sch, t, x).cov - direct.cov).norm());
  }
  bool pass = worst_score <= 1e-5 && worst_mean <= 1e-8 && worst_cov <= 1e-7;

  // Exact energy: closed form vs quadrature, 1D.
  const MixtureModel mix1({0.5, 0.5}, {v1(-2.0), v1(2.0)}, {1.0, 1.0});
  const QuadraticTargetLoss loss(v1(1.2), 0.7);
  double worst_energy = 0.0;
  for (double x : {-1.0, 0.2, 1.5}) {
    const Vec closed = exact_guidance_grad(mix1, sch, 3, v1(x), loss);
    const Vec quad = exact_guidance_grad_quadrature(mix1, sch, 3, v1(x), loss);
    worst_energy = std::max(worst_energy, std::abs(closed[0] - quad[0]));
  }
  pass = pass && worst_energy <= 1e-6;
  std::ostringstream d;
  d << "score fd " << worst_score << ", tweedie " << worst_mean << ", cov "
    << worst_cov << ", energy " << worst_energy;
  report(1, pass, "oracle consistency", d.str());
}

// Criterion 2: reduction identities.
void criterion_2() {
  const NoiseSchedule sch(ScheduleKind::kLinearBeta,
                          {1.0, 0.999, 0.5, 0.25, 0.1, 0.01});
  const MixtureModel mix({0.4, 0.6}, {v2(-1.5, 0.5), v2(2.0, -1.0)},
                         {0.6, 1.3});
  const QuadraticTargetLoss loss(v2(0.3, 0.9), 1.1);
  CounterRng rng(1002);
  bool lgd_bit = true;
  double aug_err = 0.0, smooth_err = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int t = 1 + static_cast<int>(rng.next_u64() % 5);
    const Vec x = 2.0 * rng.gaussian_vec(2);
    const Vec tw = tweedie_guidance_grad(mix, sch, t, x, loss);
    CounterRng g1(static_cast<std::uint64_t>(i) * 17 + 1);
    if (lgd_mc_grad(mix, sch, t, x, loss, 1, 0.0, g1) != tw) lgd_bit = false;
    CounterRng g2(static_cast<std::uint64_t>(i) * 31 + 5);
    const Vec aug = random_aug_grad(mix, sch, t, x, loss,
                                    AugmentationSet::identity_only(), 10, g2);
    aug_err = std::max(aug_err, (aug - tw).norm());
    CounterRng g3(static_cast<std::uint64_t>(i) * 13 + 3);
    const Vec sm = smoothed_loss_grad(loss, x, 0.0, 8, g3);
    smooth_err = std::max(smooth_err, (sm - loss.grad(x)).norm());
  }
  const bool pass = lgd_bit && aug_err <= 1e-10 && smooth_err == 0.0;
  std::ostringstream d;
  d << "lgd bit-equal " << (lgd_bit ? "yes" : "no") << ", aug err " << aug_err
    << ", smoothed err " << smooth_err;
  report(2, pass, "reduction identities", d.str());
}

void criterion_from_claims(int criterion, const std::string& what,
                           const std::vector<std::string>& ids,
                           std::uint64_t seed) {
  bool pass = true;
  std::ostringstream d;
  for (const auto& id : ids) {
    const ClaimReport rep = run_claim(id, seed);
    pass = pass && rep.pass;
    d << id << "=" << (rep.pass ? "pass" : "FAIL") << " ";
  }
  report(criterion, pass, what, d.str());
}

// Criterion 9: paired gd/pgd comparison on hard and easy conditions.
void criterion_9() {
  const fs::path src(DIFFLAB_SOURCE_DIR);
  const auto hard_cfg = parse_experiment_config(
      load_json_file(src / "configs" / "fig3_hard.json"));
  const auto easy_cfg = parse_experiment_config(
      load_json_file(src / "configs" / "fig3_easy.json"));
  const PairedReport hard = compare_fig3(hard_cfg, 4);
  const PairedReport easy = compare_fig3(easy_cfg, 4);
  const bool pass = hard.frac_pgd_not_worse >= 0.7 &&
                    std::abs(easy.median_diff) <= easy.mc_band;
  std::ostringstream d;
  d << "hard frac " << hard.frac_pgd_not_worse << " (gd median "
    << hard.median_gd << ", pgd median " << hard.median_pgd
    << "); easy |median diff| " << std::abs(easy.median_diff) << " <= band "
    << easy.mc_band;
  report(9, pass, "pgd rescues hard conditions at DDIM-50", d.str());
}

// Criterion 10: motion task directional comparison + gradient check.
void criterion_10() {
  TrajectoryPrior::Params params;
  const TrajectoryPrior prior(params);
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 1000);
  MotionCondition cond;
  cond.target = v2(3.0, 1.0);
  Obstacle obs;
  obs.center = v2(1.5, 0.5);
  obs.radius = 0.5;
  cond.obstacles.push_back(obs);

  const MotionLoss loss(prior, cond);
  CounterRng rng(1010);
  double worst_grad = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec x = 1.5 * rng.gaussian_vec(prior.dim());
    const Vec g = loss.grad(x);
    const Vec fd = finite_diff_grad(
        [&](const Vec& p) { return loss.value(p); }, x, 1e-6);
    worst_grad = std::max(worst_grad,
                          (g - fd).norm() / std::max(1.0, g.norm()));
  }

  GuidanceConfig tweedie;
  tweedie.method = GuidanceMethod::kTweedie;
  tweedie.eta = 0.5;
  GuidanceConfig lgd = tweedie;
  lgd.method = GuidanceMethod::kLgdMc;
  lgd.lgd_n = 10;

  std::vector<double> uncond, tw, lg;
  long uncond_viol = 0, tw_viol = 0, lg_viol = 0;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t key =
        CounterRng::keyed(2026, static_cast<std::uint64_t>(i), "run").key();
    const auto u = guided_motion_sample(prior, sch, cond, nullptr, 100, key);
    const auto t = guided_motion_sample(prior, sch, cond, &tweedie, 100, key);
    const auto l = guided_motion_sample(prior, sch, cond, &lgd, 100, key);
    uncond.push_back(u.targeting);
    tw.push_back(t.targeting);
    lg.push_back(l.targeting);
    uncond_viol += u.violations;
    tw_viol += t.violations;
    lg_viol += l.violations;
  }
  const double med_u = median_of(uncond), med_t = median_of(tw),
               med_l = median_of(lg);
  const bool pass = worst_grad <= 1e-5 && med_t * 10.0 <= med_u &&
                    tw_viol <= uncond_viol && lg_viol <= uncond_viol &&
                    med_l * 10.0 <= med_u;
  std::printf("    motion table: method, median targeting, violation frames "
              "(100 seeds)\n");
  std::printf("      unconditional  %10.4f  %ld\n", med_u, uncond_viol);
  std::printf("      tweedie        %10.4f  %ld\n", med_t, tw_viol);
  std::printf("      lgd-mc(n=10)   %10.4f  %ld\n", med_l, lg_viol);
  std::ostringstream d;
  d << "grad fd " << worst_grad << ", targeting ratio "
    << med_u / std::max(med_t, 1e-12) << "x, violations " << uncond_viol
    << " -> " << tw_viol;
  report(10, pass, "guided trajectories hit the target and avoid obstacles",
         d.str());
}

// Criterion 11: bit-identical reruns, exact NFE accounting, schema validity.
void criterion_11() {
  const fs::path src(DIFFLAB_SOURCE_DIR);
  json cfg_json = load_json_file(src / "configs" / "comparison.json");
  cfg_json["seeds"]["count"] = 5;
  cfg_json["schedule"]["T"] = 300;
  cfg_json["schedule"]["ddim_steps"] = 30;
  const auto cfg = parse_experiment_config(cfg_json);

  const fs::path dir1 = fs::temp_directory_path() / "difflab_acc_a";
  const fs::path dir2 = fs::temp_directory_path() / "difflab_acc_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  const auto r1 = run_experiment(cfg, dir1, 4);
  (void)run_experiment(cfg, dir2, 1);

  bool identical = true;
  for (const char* name : {"traces.csv", "terminals.json", "report.json",
                           "resolved_config.json"}) {
    if (slurp(dir1 / name) != slurp(dir2 / name)) identical = false;
  }
  for (const char* name : {"loss_traces.svg", "comparison.svg"}) {
    if (slurp(dir1 / "plots" / name) != slurp(dir2 / "plots" / name)) {
      identical = false;
    }
  }

  // NFE: instrumented counters equal the computed schedule exactly.
  bool nfe_exact = true;
  const auto sch = make_schedule(cfg.schedule_kind, cfg.T);
  for (const auto& rec : r1.records) {
    const auto& cell = cfg.cells[static_cast<std::size_t>(rec.cell)];
    const auto expect = expected_counters(cell.guided ? &cell.cfg : nullptr,
                                          sch, rec.trace.grid,
                                          rec.trace.transitions);
    if (rec.trace.counters.score_evals != expect.score_evals ||
        rec.trace.counters.loss_grad_evals != expect.loss_grad_evals) {
      nfe_exact = false;
    }
  }

  // Emitted JSON validates against the shipped schemas.
  bool schema_ok = true;
  auto check = [&](const fs::path& doc, const char* schema_name) {
    const auto errors = validate_against_schema(
        load_json_file(doc),
        load_json_file(src / "schemas" / schema_name));
    if (!errors.empty()) schema_ok = false;
  };
  check(dir1 / "resolved_config.json", "config.schema.json");
  check(dir1 / "report.json", "comparison_report.schema.json");
  check(dir1 / "terminals.json", "terminals.schema.json");
  const ClaimReport claim = run_claim("lemma1-tv", 7);
  const auto claim_errors = validate_against_schema(
      claim_report_json(claim),
      load_json_file(src / "schemas" / "claim_report.schema.json"));
  if (!claim_errors.empty()) schema_ok = false;

  const bool pass = identical && nfe_exact && schema_ok;
  std::ostringstream d;
  d << "bit-identical " << (identical ? "yes" : "no") << ", nfe exact "
    << (nfe_exact ? "yes" : "no") << ", schemas "
    << (schema_ok ? "valid" : "INVALID");
  report(11, pass, "determinism, NFE accounting, schema validity", d.str());
}

}  // namespace

int main() {
  const std::uint64_t seed = 2026;
  criterion_1();
  criterion_2();
  criterion_from_claims(3, "Gaussian smoothing bounds",
                        {"prop2-lip", "prop2-gradlip"}, seed);
  criterion_from_claims(4, "DDIM discretization order", {"prop3-order"},
                        seed);
  criterion_from_claims(5, "coupling TV closed form vs MC", {"lemma1-tv"},
                        seed);
  criterion_from_claims(6, "resampling contracts distributional error",
                        {"prop5-contraction"}, seed);
  criterion_from_claims(7, "two-stage convergence of guided traces",
                        {"fig1-two-stage", "prop1-linear-rate"}, seed);
  criterion_from_claims(8, "smoothing beats adversarial gradients",
                        {"fig2-adversarial"}, seed);
  criterion_9();
  criterion_10();
  criterion_11();
  std::printf("%d of 11 criteria passed\n", 11 - g_failures);
  return g_failures;
}

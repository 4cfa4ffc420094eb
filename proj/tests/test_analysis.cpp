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

#include <catch2/catch_amalgamated.hpp>

#include "difflab/analysis.hpp"

using namespace difflab;

namespace {

Vec v1(double a) {
  Vec v(1);
  v << a;
  return v;
}

}  // namespace

TEST_CASE("q_function reference values") {
  REQUIRE(q_function(0.0) == 0.5);
  REQUIRE_THAT(q_function(1.0),
               Catch::Matchers::WithinAbs(0.15865525393145705, 1e-12));
  REQUIRE(q_function(-std::numeric_limits<double>::infinity()) == 1.0);
  REQUIRE(q_function(std::numeric_limits<double>::infinity()) == 0.0);
}

TEST_CASE("coupling_tv closed form") {
  REQUIRE(coupling_tv(v1(1.0), v1(1.0), 0.7) == 0.0);
  // ||x-y|| = 2, sigma = 1 -> r = 1 -> 1 - 2 Q(1).
  REQUIRE_THAT(coupling_tv(v1(-1.0), v1(1.0), 1.0),
               Catch::Matchers::WithinAbs(0.6826894921370859, 1e-12));
  // sigma = 0 degenerates to the indicator.
  REQUIRE(coupling_tv(v1(0.0), v1(1.0), 0.0) == 1.0);
  REQUIRE(coupling_tv(v1(2.0), v1(2.0), 0.0) == 0.0);
}

TEST_CASE("coupling_tv matches histogram TV of coupled Gaussians") {
  CounterRng rng(55);
  const int n = 1000000;
  for (double r : {0.0, 0.5, 1.0, 2.0}) {
    const double sigma = 1.0;
    const Vec x = v1(0.0), y = v1(2.0 * sigma * r);
    std::vector<Vec> a, b;
    a.reserve(n);
    b.reserve(n);
    for (int i = 0; i < n; ++i) {
      a.push_back(v1(x[0] + sigma * rng.gaussian()));
      b.push_back(v1(y[0] + sigma * rng.gaussian()));
    }
    const auto grid = auto_grid(a, b, 50);
    const double est = tv_estimate(a, b, grid).value;
    REQUIRE_THAT(est, Catch::Matchers::WithinAbs(coupling_tv(x, y, sigma),
                                                 0.01));
  }
}

TEST_CASE("tv_estimate basics") {
  std::vector<Vec> a, b;
  CounterRng rng(56);
  for (int i = 0; i < 5000; ++i) {
    a.push_back(v1(rng.gaussian()));
    b.push_back(v1(rng.gaussian() + 50.0));
  }
  // Identical sets -> 0.
  REQUIRE(tv_estimate(a, a, auto_grid(a, a, 32)).value == 0.0);
  // Disjoint supports -> ~1.
  REQUIRE(tv_estimate(a, b, auto_grid(a, b, 64)).value >= 0.99);
  // Symmetry and boundedness.
  const auto grid = auto_grid(a, b, 64);
  const double ab = tv_estimate(a, b, grid).value;
  const double ba = tv_estimate(b, a, grid).value;
  REQUIRE(ab == ba);
  REQUIRE(ab >= 0.0);
  REQUIRE(ab <= 1.0);
  // Sparse-bin warning.
  std::vector<Vec> tiny(a.begin(), a.begin() + 100);
  REQUIRE(tv_estimate(tiny, tiny, auto_grid(tiny, tiny, 64)).sparse);
}

TEST_CASE("tv_estimate against the closed-form Gaussian TV") {
  // N(0,1) vs N(1,1): TV = 2 Phi(1/2) - 1.
  CounterRng rng(57);
  const int n = 1000000;
  std::vector<Vec> a, b;
  a.reserve(n);
  b.reserve(n);
  for (int i = 0; i < n; ++i) {
    a.push_back(v1(rng.gaussian()));
    b.push_back(v1(rng.gaussian() + 1.0));
  }
  const double est = tv_estimate(a, b, auto_grid(a, b, 50)).value;
  REQUIRE_THAT(est, Catch::Matchers::WithinAbs(0.38292492254802624, 0.01));
}

TEST_CASE("estimate_lipschitz on linear and kinked fields") {
  Box box;
  box.lo = v1(-1.0);
  box.hi = v1(1.0);
  const double lin = estimate_lipschitz(
      [](const Vec& x) { return 2.0 * x[0]; }, box, 200, 1e-6, 1);
  REQUIRE_THAT(lin, Catch::Matchers::WithinAbs(2.0, 1e-6));
  const double abs_est = estimate_lipschitz(
      [](const Vec& x) { return std::abs(x[0]); }, box, 200, 1e-6, 2);
  REQUIRE_THAT(abs_est, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("estimate_lipschitz flags the step function as non-Lipschitz") {
  Box box;
  box.lo = v1(-1.0);
  box.hi = v1(1.0);
  auto step = [](const Vec& x) { return x[0] > 0.0 ? 1.0 : 0.0; };
  double prev = 0.0;
  for (double h : {1e-2, 1e-3, 1e-4}) {
    const double est = estimate_lipschitz(step, box, 1000, h, 3);
    // Quotient of a unit jump over a segment of length <= h.
    REQUIRE(est >= 1.0 / (2.0 * h));
    REQUIRE(est >= prev * 5.0);
    prev = est;
  }
}

TEST_CASE("estimate_grad_lipschitz on smooth fields") {
  Box box;
  box.lo = Vec::Constant(2, -1.0);
  box.hi = Vec::Constant(2, 1.0);
  const double quad = estimate_grad_lipschitz(
      [](const Vec& x) { return 0.5 * x.squaredNorm(); }, box, 200, 1e-4, 4);
  REQUIRE_THAT(quad, Catch::Matchers::WithinAbs(1.0, 1e-4));
  const double lin = estimate_grad_lipschitz(
      [](const Vec& x) { return 3.0 * x[0] - x[1]; }, box, 200, 1e-4, 5);
  REQUIRE_THAT(lin, Catch::Matchers::WithinAbs(0.0, 1e-6));
}

TEST_CASE("smoothing bound suite: Prop 2 constants hold with slack") {
  Box box;
  box.lo = v1(-4.0);
  box.hi = v1(4.0);
  for (double sigma : {0.25, 0.5, 1.0}) {
    const SmoothedStepLoss smoothed(sigma);
    const double lip = estimate_lipschitz(
        [&](const Vec& x) { return smoothed.value(x); }, box, 500, 1e-4, 6);
    const double bound_lip = std::sqrt(2.0 / (kPi * sigma * sigma));
    REQUIRE(lip <= bound_lip * 1.05);
    // The estimator is sharp enough to be meaningful: max slope is
    // phi(0)/sigma ~ 0.4/sigma.
    REQUIRE(lip >= 0.9 * 0.3989422804014327 / sigma);

    const double glip = estimate_grad_lipschitz(
        [&](const Vec& x) { return smoothed.value(x); }, box, 500, 1e-4, 7);
    REQUIRE(glip <= 2.0 / sigma * 1.05);
    // Max curvature is phi(1)/sigma^2.
    REQUIRE(glip >= 0.9 * 0.24197072451914337 / (sigma * sigma));
  }
}

TEST_CASE("augmentation smoothing beats the raw step loss by >= 10x") {
  Box box;
  box.lo = v1(-2.0);
  box.hi = v1(2.0);
  const double h = 1e-3;
  auto raw = [](const Vec& x) { return x[0] > 0.0 ? 1.0 : 0.0; };
  const double raw_glip = estimate_grad_lipschitz(raw, box, 500, h, 8);
  const SmoothedStepLoss jittered(0.25);
  const double aug_glip = estimate_grad_lipschitz(
      [&](const Vec& x) { return jittered.value(x); }, box, 500, h, 9);
  REQUIRE(aug_glip <= raw_glip);
  REQUIRE(aug_glip * 10.0 <= raw_glip);
}

TEST_CASE("two_stage_metrics on synthetic traces") {
  // Strictly geometric decay.
  std::vector<double> geo;
  for (int k = 0; k < 60; ++k) geo.push_back(std::pow(0.9, k));
  const auto rep = two_stage_metrics(geo, 0.0);
  REQUIRE_THAT(rep.late_slope,
               Catch::Matchers::WithinAbs(std::log(0.9), 1e-9));
  REQUIRE(rep.late_r2 >= 0.999);
  for (double f : rep.contraction_factors) {
    REQUIRE_THAT(f, Catch::Matchers::WithinAbs(0.9, 1e-12));
  }
  // Bookkeeping identity: product of factors == total late ratio.
  double prod = 1.0;
  for (double f : rep.contraction_factors) prod *= f;
  REQUIRE_THAT(prod, Catch::Matchers::WithinRel(rep.total_late_ratio, 1e-6));

  // Constant trace.
  std::vector<double> flat(30, 2.5);
  const auto frep = two_stage_metrics(flat, 0.0);
  REQUIRE(frep.late_slope == 0.0);
  for (double f : frep.contraction_factors) REQUIRE(f == 1.0);

  // Two-phase trace: noisy plateau then geometric decay splits sensibly.
  std::vector<double> two;
  for (int k = 0; k < 20; ++k) two.push_back(8.0 + ((k % 3) - 1) * 3.0);
  for (int k = 0; k < 40; ++k) two.push_back(6.0 * std::pow(0.85, k));
  const auto trep = two_stage_metrics(two, 0.0);
  REQUIRE(trep.split_index >= 10);
  REQUIRE(trep.late_slope < 0.0);
  REQUIRE(trep.early_osc_amplitude > 0.2);

  // Short traces are rejected.
  REQUIRE_THROWS_AS(two_stage_metrics(std::vector<double>(5, 1.0), 0.0),
                    InsufficientDataError);
}

TEST_CASE("discretization order: unguided single Gaussian is first order") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 10000);
  MixtureModel m({1.0}, {v1(0.5)}, {1.0});
  OrderConfig cfg;
  cfg.num_seeds = 8;
  const auto rep = discretization_order(m, sch, cfg, 2026);
  REQUIRE(rep.slope >= 0.8);
  REQUIRE(rep.slope <= 1.2);
  REQUIRE(rep.monotone);
  REQUIRE(rep.reference_steps >= 10 * 80);
}

TEST_CASE("discretization order: self-reference error is zero") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 2000);
  MixtureModel m({1.0}, {v1(0.0)}, {1.0});
  // Integrate the reference grid against itself manually.
  const int t_end = 20, t_start = 800;
  std::vector<int> ref;
  for (int t = t_start; t >= t_end; --t) ref.push_back(t);
  CounterRng rng(60);
  const Vec x0 = m.sample_prior(rng);
  const Vec xT = forward_noise(x0, sch, t_start, rng.gaussian_vec(1));
  const Vec a = detail::integrate_ode(m, sch, ref, xT, nullptr, 0.0);
  const Vec b = detail::integrate_ode(m, sch, ref, xT, nullptr, 0.0);
  REQUIRE(a == b);
}

TEST_CASE("accumulated gradient probe basics") {
  const RuggedWellLoss loss(v1(3.0));
  ProbeConfig cfg;
  cfg.steps = 0;
  const Vec init = v1(-1.0);
  const auto rep = accumulated_gradient_probe(loss, loss.target(), init, cfg,
                                              1);
  REQUIRE(rep.final_x == init);  // zero steps returns the init
  REQUIRE(rep.steps_run == 0);

  // Convex quadratic converges to the target for any variant.
  const QuadraticTargetLoss quad(v1(2.0), 1.0);
  for (auto variant : {ProbeVariant::kRaw, ProbeVariant::kSmoothed,
                       ProbeVariant::kRandomAug}) {
    ProbeConfig c;
    c.variant = variant;
    c.eta = variant == ProbeVariant::kRaw ? 0.25 : 0.05;
    c.steps = 2000;
    c.smooth_sigma = 0.01;
    c.augset = AugmentationSet::jitter_only(0.01);
    const auto r = accumulated_gradient_probe(quad, quad.target(), v1(-3.0),
                                              c, 2);
    REQUIRE(r.distance_to_target <= 1e-3);
    REQUIRE_FALSE(r.diverged);
  }
}

TEST_CASE("divergent probes are flagged") {
  const QuadraticTargetLoss quad(v1(0.0), 1.0);
  ProbeConfig cfg;
  cfg.eta = 1e9;  // grossly unstable
  cfg.steps = 100;
  const auto rep = accumulated_gradient_probe(quad, quad.target(), v1(1.0),
                                              cfg, 3);
  REQUIRE(rep.diverged);
}

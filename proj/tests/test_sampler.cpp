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

#include "difflab/mixture.hpp"
#include "difflab/sampler.hpp"

using namespace difflab;

namespace {

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

}  // namespace

TEST_CASE("unguided sampling recovers a single-Gaussian prior") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 200);
  MixtureModel m({1.0}, {v1(1.5)}, {0.64});
  SampleOptions opts;
  opts.exact_marginal_init = true;
  opts.record_full_state = false;
  const int n = 10000;
  double mean = 0.0, var = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto tr = sample(m, sch, 200, nullptr, nullptr,
                           CounterRng::keyed(31, static_cast<std::uint64_t>(i),
                                             "run")
                               .key(),
                           opts);
    mean += tr.terminal[0];
    var += tr.terminal[0] * tr.terminal[0];
  }
  mean /= n;
  var = var / n - mean * mean;
  // 3 MC standard errors plus a small discretization allowance.
  REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(1.5, 3.0 * 0.8 / 100.0 + 0.01));
  REQUIRE_THAT(var, Catch::Matchers::WithinAbs(
                        0.64, 3.0 * 0.64 * std::sqrt(2.0 / n) + 0.02));
}

TEST_CASE("unguided sampling reproduces mixture occupancy") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 200);
  MixtureModel m({0.3, 0.7}, {v1(-2.0), v1(2.0)}, {0.25, 0.25});
  SampleOptions opts;
  opts.exact_marginal_init = true;
  opts.record_full_state = false;
  const int n = 10000;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const auto tr = sample(m, sch, 200, nullptr, nullptr,
                           CounterRng::keyed(32, static_cast<std::uint64_t>(i),
                                             "run")
                               .key(),
                           opts);
    if (m.nearest_component(tr.terminal) == 0) ++hits;
  }
  const double frac = static_cast<double>(hits) / n;
  const double band = 3.0 * std::sqrt(0.3 * 0.7 / n);
  REQUIRE_THAT(frac, Catch::Matchers::WithinAbs(0.3, band + 0.005));
}

TEST_CASE("full-grid sampling equals a manual step-by-step DDIM loop") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 64);
  MixtureModel m({0.5, 0.5}, {v2(-1.0, 0.0), v2(1.0, 0.5)}, {0.5, 0.5});
  const std::uint64_t key = CounterRng::keyed(7, 3, "cell").key();
  const auto tr = sample(m, sch, 64, nullptr, nullptr, key);

  CounterRng init = CounterRng(key).substream("init");
  Vec x = init.gaussian_vec(2);
  for (int s = 64; s >= 1; --s) {
    x = ddim_step(x, s, s - 1, m.epsilon(sch, s, x), sch);
  }
  REQUIRE(tr.terminal == x);
}

TEST_CASE("same key gives bit-identical traces") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 300);
  MixtureModel m({0.5, 0.5}, {v2(-2.0, 0.0), v2(2.0, 1.0)}, {0.6, 0.6});
  const QuadraticTargetLoss loss(v2(2.0, 1.0), 1.0);
  GuidanceConfig cfg;
  cfg.method = GuidanceMethod::kLgdMc;
  cfg.lgd_n = 4;
  cfg.resampling = ResamplePlan{2, 0.8, 0.3};
  const std::uint64_t key = CounterRng::keyed(1234, 17, "cell").key();
  const auto t1 = sample(m, sch, 60, &cfg, &loss, key);
  const auto t2 = sample(m, sch, 60, &cfg, &loss, key);
  REQUIRE(t1.terminal == t2.terminal);
  REQUIRE(t1.steps.size() == t2.steps.size());
  for (std::size_t i = 0; i < t1.steps.size(); ++i) {
    REQUIRE(t1.steps[i].loss == t2.steps[i].loss);
    REQUIRE(t1.steps[i].grad_norm == t2.steps[i].grad_norm);
  }
  REQUIRE(t1.counters.score_evals == t2.counters.score_evals);
}

TEST_CASE("instrumented NFE matches the computed formula") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 500);
  MixtureModel m({0.5, 0.5}, {v2(-2.0, 0.0), v2(2.0, 1.0)}, {0.6, 0.6});
  const QuadraticTargetLoss loss(v2(2.0, 1.0), 1.0);

  auto check = [&](GuidanceConfig* cfg, int steps) {
    const auto grid = ddim_grid(sch, steps);
    const auto tr = sample(m, sch, steps, cfg, cfg ? &loss : nullptr,
                           CounterRng::keyed(5, 0, "cell").key());
    const auto expect = expected_counters(cfg, sch, grid, tr.transitions);
    REQUIRE(tr.counters.score_evals == expect.score_evals);
    REQUIRE(tr.counters.loss_grad_evals == expect.loss_grad_evals);
  };

  check(nullptr, 50);

  GuidanceConfig tweedie;
  tweedie.method = GuidanceMethod::kTweedie;
  check(&tweedie, 50);

  GuidanceConfig lgd;
  lgd.method = GuidanceMethod::kLgdMc;
  lgd.lgd_n = 10;
  check(&lgd, 50);

  GuidanceConfig aug;
  aug.method = GuidanceMethod::kRandomAug;
  aug.aug_k = 10;
  check(&aug, 50);

  GuidanceConfig smoothed;
  smoothed.method = GuidanceMethod::kSmoothed;
  smoothed.smooth_m = 16;
  check(&smoothed, 50);

  GuidanceConfig exact;
  exact.method = GuidanceMethod::kExact;
  check(&exact, 50);

  GuidanceConfig resampled = tweedie;
  resampled.resampling = ResamplePlan{3, 0.8, 0.3};
  check(&resampled, 50);
  // Resampling multiplies NFE only inside the window.
  const auto base = sample(m, sch, 50, &tweedie, &loss,
                           CounterRng::keyed(5, 1, "cell").key());
  const auto res = sample(m, sch, 50, &resampled, &loss,
                          CounterRng::keyed(5, 1, "cell").key());
  REQUIRE(res.counters.score_evals > base.counters.score_evals);
  REQUIRE(res.counters.score_evals < 3 * base.counters.score_evals);
}

TEST_CASE("guided sampling pulls terminal samples toward the target") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 500);
  MixtureModel m({0.5, 0.5}, {v2(-2.0, 0.0), v2(2.0, 1.0)}, {0.5, 0.5});
  const QuadraticTargetLoss loss(v2(2.0, 1.0), 1.0);
  GuidanceConfig cfg;
  cfg.method = GuidanceMethod::kTweedie;
  cfg.eta = 0.5;
  const int n = 200;
  int guided_hits = 0, unguided_hits = 0;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t key =
        CounterRng::keyed(77, static_cast<std::uint64_t>(i), "cell").key();
    const auto g = sample(m, sch, 100, &cfg, &loss, key);
    const auto u = sample(m, sch, 100, nullptr, nullptr, key);
    if (m.nearest_component(g.terminal) == 1) ++guided_hits;
    if (m.nearest_component(u.terminal) == 1) ++unguided_hits;
  }
  REQUIRE(guided_hits > unguided_hits);
  REQUIRE(guided_hits >= n * 9 / 10);
}

TEST_CASE("trace records loss at every node and stops early when asked") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 100);
  MixtureModel m({1.0}, {v1(0.0)}, {1.0});
  const QuadraticTargetLoss loss(v1(0.5), 1.0);
  GuidanceConfig cfg;
  const auto tr = sample(m, sch, 20, &cfg, &loss,
                         CounterRng::keyed(3, 0, "cell").key());
  REQUIRE(tr.steps.size() == 21);
  for (const auto& s : tr.steps) REQUIRE(std::isfinite(s.loss));
  REQUIRE(tr.steps.back().t == 0);

  SampleOptions opts;
  opts.stop_at_index = 50;
  const auto tr2 = sample(m, sch, 20, &cfg, &loss,
                          CounterRng::keyed(3, 0, "cell").key(), opts);
  REQUIRE(tr2.steps.back().t == 50);
  REQUIRE(tr2.transitions == 10);
}

TEST_CASE("non-finite states abort with diagnostics") {
  // A pathologically large eta hurls the iterate far enough that the next
  // score evaluation overflows.
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 100);
  MixtureModel m({1.0}, {v1(0.0)}, {1.0});
  const QuadraticTargetLoss loss(v1(100.0), 1.0);
  GuidanceConfig cfg;
  cfg.method = GuidanceMethod::kTweedie;
  cfg.eta = 1e300;
  cfg.eta_rule = EtaRule::kConstant;
  bool threw = false;
  try {
    (void)sample(m, sch, 20, &cfg, &loss,
                 CounterRng::keyed(4, 0, "cell").key());
  } catch (const NumericalError& e) {
    threw = true;
    REQUIRE(e.step_index >= 0);
  }
  REQUIRE(threw);
}

TEST_CASE("gradient norms are capped and flagged") {
  const auto sch = make_schedule(ScheduleKind::kLinearBeta, 100);
  MixtureModel m({1.0}, {v1(0.0)}, {1.0});
  const QuadraticTargetLoss loss(v1(1e8), 1e4);
  GuidanceConfig cfg;
  cfg.method = GuidanceMethod::kTweedie;
  cfg.eta = 0.0;  // observe the cap without moving the state
  const auto tr = sample(m, sch, 10, &cfg, &loss,
                         CounterRng::keyed(6, 0, "cell").key());
  bool capped = false;
  for (const auto& s : tr.steps) {
    if (s.grad_capped) {
      capped = true;
      REQUIRE(s.grad_norm == kGradNormCap);
    }
  }
  REQUIRE(capped);
}

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
#include <vector>

#include "difflab/common.hpp"
#include "difflab/losses.hpp"
#include "difflab/mixture.hpp"
#include "difflab/oracle.hpp"
#include "difflab/quadrature.hpp"

namespace difflab {

/// Exponential tilt of a Gaussian mixture by exp(-c ||x - y||^2): again a
/// Gaussian mixture, with
///   tau'^2 = tau^2 / (1 + 2 c tau^2),
///   mu'    = (mu + 2 c tau^2 y) / (1 + 2 c tau^2),
///   log w' = log w - d/2 log(1 + 2 c tau^2) - c ||mu - y||^2 / (1 + 2 c tau^2)
/// (weights renormalized; normalization does not affect scores).
inline MixtureModel tilt_by_quadratic(const MixtureModel& model,
                                      const QuadraticTargetLoss& loss) {
  const int k = model.components();
  const int d = model.dim();
  const double c = loss.scale();
  const Vec& y = loss.target();
  check_dim(y, d, "tilt target");
  std::vector<double> logw(static_cast<std::size_t>(k));
  std::vector<Vec> means(static_cast<std::size_t>(k));
  std::vector<double> vars(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double tau2 = model.variance(i);
    const double denom = 1.0 + 2.0 * c * tau2;
    vars[static_cast<std::size_t>(i)] = tau2 / denom;
    means[static_cast<std::size_t>(i)] =
        (model.mean(i) + 2.0 * c * tau2 * y) / denom;
    logw[static_cast<std::size_t>(i)] =
        std::log(std::max(model.weight(i), 1e-300)) -
        0.5 * d * std::log(denom) -
        c * (model.mean(i) - y).squaredNorm() / denom;
  }
  std::vector<double> w = logw;
  softmax_inplace(w);
  // Renormalize exactly so the mixture invariant holds.
  double sum = 0.0;
  for (double wi : w) sum += wi;
  for (double& wi : w) wi /= sum;
  return MixtureModel(std::move(w), std::move(means), std::move(vars));
}

/// Quadrature route for the exact conditional-score correction in d <= 2:
///   grad log integral p0(z) exp(-l(z)) N(x; sqrt(a) z, s^2 I) dz - score(x).
/// Integrates on [posterior mean +/- 10 std] with the integrand rescaled by
/// its peak so the adaptive rule works in a sane numeric range.
inline Vec exact_guidance_grad_quadrature(const MixtureModel& model,
                                          const NoiseSchedule& sch, int t,
                                          const Vec& x,
                                          const LossFunction& loss,
                                          double abs_tol = 1e-10) {
  const int d = model.dim();
  if (d > 2) {
    throw CapabilityError(
        "quadrature route for the exact energy supports d <= 2 only");
  }
  const double a = sch.alpha(t);
  if (!(a > 0.0)) throw SingularTimeError("alpha_t = 0 in exact energy");
  const double s2 = sch.sigma2(t);
  const double sqrt_a = std::sqrt(std::max(a, kAlphaFloor));

  // Integration box: cover every component posterior mean generously.
  const PosteriorMoments post = model.posterior_moments_direct(sch, t, x);
  double spread = std::sqrt(std::max(post.lambda_min, 0.0));
  for (int i = 0; i < model.components(); ++i) {
    spread = std::max(spread, std::sqrt(model.variance(i)));
  }
  const double half_width = 10.0 * std::max(spread, 1e-3);

  auto log_integrand = [&](const Vec& z) {
    const double quad =
        s2 > 0.0 ? -0.5 * (x - sqrt_a * z).squaredNorm() / s2 : 0.0;
    return model.prior_log_density(z) - loss.value(z) + quad;
  };
  // Peak shift keeps exp() in range; it cancels in the final ratio.
  const double shift = log_integrand(post.mean);

  Vec num = Vec::Zero(d);
  double den = 0.0;
  if (d == 1) {
    const double lo = post.mean[0] - half_width, hi = post.mean[0] + half_width;
    auto fden = [&](double z) {
      Vec zz(1);
      zz[0] = z;
      return std::exp(log_integrand(zz) - shift);
    };
    den = integrate(fden, lo, hi, abs_tol).value;
    auto fnum = [&](double z) {
      Vec zz(1);
      zz[0] = z;
      return std::exp(log_integrand(zz) - shift) * (sqrt_a * z - x[0]) / s2;
    };
    num[0] = integrate(fnum, lo, hi, abs_tol).value;
  } else {
    const double lo0 = post.mean[0] - half_width,
                 hi0 = post.mean[0] + half_width;
    const double lo1 = post.mean[1] - half_width,
                 hi1 = post.mean[1] + half_width;
    auto inner = [&](double z0, auto&& weight_fn) {
      auto f = [&](double z1) {
        Vec zz(2);
        zz[0] = z0;
        zz[1] = z1;
        return std::exp(log_integrand(zz) - shift) * weight_fn(zz);
      };
      return integrate(f, lo1, hi1, abs_tol * 0.1, 800).value;
    };
    auto fden = [&](double z0) {
      return inner(z0, [](const Vec&) { return 1.0; });
    };
    den = integrate(fden, lo0, hi0, abs_tol, 800).value;
    for (int k = 0; k < 2; ++k) {
      auto fnum = [&](double z0) {
        return inner(z0, [&](const Vec& zz) {
          return (sqrt_a * zz[k] - x[k]) / s2;
        });
      };
      num[k] = integrate(fnum, lo0, hi0, abs_tol, 800).value;
    }
  }
  if (!(den > 0.0)) {
    throw NumericalError("exact energy quadrature: vanishing denominator", t,
                         0.0);
  }
  return num / den - model.score(sch, t, x);
}

/// Exact conditional-score correction grad_x log E_{p(x0|x_t)} exp(-l(x0)).
/// Quadratic-target losses use the tilted-mixture closed form (any d, score
/// of the tilted marginal minus the plain score); other losses fall back to
/// quadrature in d <= 2.  Serves as the ground-truth oracle for the Tweedie
/// and Monte-Carlo approximations.
inline Vec exact_guidance_grad(const MixtureModel& model,
                               const NoiseSchedule& sch, int t, const Vec& x,
                               const LossFunction& loss,
                               RunCounters* counters = nullptr) {
  if (const auto* q = dynamic_cast<const QuadraticTargetLoss*>(&loss)) {
    const MixtureModel tilted = tilt_by_quadratic(model, *q);
    if (counters != nullptr) ++counters->score_evals;
    return tilted.score(sch, t, x) - model.score(sch, t, x);
  }
  if (model.dim() <= 2) {
    if (counters != nullptr) ++counters->score_evals;
    return exact_guidance_grad_quadrature(model, sch, t, x, loss);
  }
  throw CapabilityError(
      "exact guidance gradient: need a quadratic-target loss or d <= 2");
}

/// Sampler hook: the exact-energy correction exists for mixture oracles only.
inline Vec exact_correction(const MixtureModel& model, const NoiseSchedule& sch,
                            int t, const Vec& x, const LossFunction& loss,
                            RunCounters* counters) {
  return exact_guidance_grad(model, sch, t, x, loss, counters);
}

template <class O>
Vec exact_correction(const O&, const NoiseSchedule&, int, const Vec&,
                     const LossFunction&, RunCounters*) {
  throw CapabilityError(
      "exact guidance is only available for mixture oracles");
}

}  // namespace difflab

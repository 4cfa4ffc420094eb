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

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "difflab/common.hpp"

namespace difflab {

enum class ScheduleKind { kLinearBeta, kCosine };

inline const char* to_string(ScheduleKind k) {
  return k == ScheduleKind::kLinearBeta ? "linear-beta" : "cosine";
}

/// Discrete variance-preserving noise schedule on step indices t = 0..T.
///
/// alpha(t) is the cumulative signal level (alpha(0) = 1 exactly, strictly
/// decreasing), sigma2(t) = 1 - alpha(t) stored exactly so that
/// alpha(t) + sigma2(t) == 1 holds bit-for-bit.  lambda(t) is the half
/// log-SNR; it is +inf at t = 0 and strictly decreasing.
class NoiseSchedule {
 public:
  NoiseSchedule(ScheduleKind kind, std::vector<double> alpha)
      : kind_(kind), alpha_(std::move(alpha)) {
    const int T = steps();
    if (T < 2) throw ConfigError("schedule needs T >= 2");
    sigma2_.resize(alpha_.size());
    sigma_.resize(alpha_.size());
    lambda_.resize(alpha_.size());
    for (std::size_t i = 0; i < alpha_.size(); ++i) {
      if (!(alpha_[i] > 0.0 && alpha_[i] <= 1.0)) {
        throw ConfigError("alpha out of (0,1] at t=" + std::to_string(i));
      }
      if (i > 0 && !(alpha_[i] < alpha_[i - 1])) {
        throw ConfigError("alpha not strictly decreasing at t=" +
                          std::to_string(i));
      }
      sigma2_[i] = 1.0 - alpha_[i];
      sigma_[i] = std::sqrt(sigma2_[i]);
      lambda_[i] = sigma2_[i] == 0.0
                       ? std::numeric_limits<double>::infinity()
                       : 0.5 * (std::log(alpha_[i]) - std::log(sigma2_[i]));
    }
  }

  ScheduleKind kind() const { return kind_; }
  int steps() const { return static_cast<int>(alpha_.size()) - 1; }

  double alpha(int t) const { return alpha_[checked(t)]; }
  double sigma(int t) const { return sigma_[checked(t)]; }
  double sigma2(int t) const { return sigma2_[checked(t)]; }
  double lambda(int t) const { return lambda_[checked(t)]; }

  /// Noise level carried to the x0 scale: std of x_t/sqrt(alpha_t) - x0.
  double noise_scale(int t) const {
    return sigma(t) / std::sqrt(std::max(alpha(t), kAlphaFloor));
  }

  /// f(t) = d log sqrt(alpha_t) / dt by centered differences (diagnostics;
  /// the sampler uses the exponential-integrator step, not f/g directly).
  double f(int t) const {
    const int T = steps();
    const int lo = std::max(0, t - 1), hi = std::min(T, t + 1);
    const double num =
        0.5 * (std::log(alpha_[hi]) - std::log(alpha_[lo]));
    return num / static_cast<double>(hi - lo);
  }

  /// g^2(t) = d sigma_t^2/dt - 2 f(t) sigma_t^2 (diagnostics).
  double g2(int t) const {
    const int T = steps();
    const int lo = std::max(0, t - 1), hi = std::min(T, t + 1);
    const double dsigma2 =
        (sigma2_[hi] - sigma2_[lo]) / static_cast<double>(hi - lo);
    return dsigma2 - 2.0 * f(t) * sigma2_[checked(t)];
  }

  /// Renoising coefficient beta = alpha_s / alpha_t for a source index s and
  /// target index t < s; lies in (0,1).
  double renoise_beta(int s, int t) const {
    if (!(t < s)) throw InputError("renoise_beta requires t < s");
    return alpha(s) / alpha(t);
  }

  /// DDIM step size h = lambda_t - lambda_s (target t below source s).
  double ddim_h(int s, int t) const { return lambda(t) - lambda(s); }

  /// Largest index whose lambda is >= the given value (lambda decreasing in t).
  int index_for_lambda(double lam) const {
    int best = 0;
    for (int t = 0; t <= steps(); ++t) {
      if (lambda_[t] >= lam) best = t;
    }
    return best;
  }

 private:
  int checked(int t) const {
    if (t < 0 || t > steps()) {
      throw InputError("schedule index out of range: " + std::to_string(t));
    }
    return t;
  }

  ScheduleKind kind_;
  std::vector<double> alpha_, sigma_, sigma2_, lambda_;
};

/// Build a schedule of T steps.  linear-beta follows the DDPM convention of
/// per-step beta rising linearly from 1e-4 to 0.02; cosine follows the
/// squared-cosine cumulative profile with offset 0.008 and per-step beta
/// clipped at 0.999.
inline NoiseSchedule make_schedule(ScheduleKind kind, int T) {
  if (T < 2) throw ConfigError("make_schedule: T must be >= 2");
  std::vector<double> alpha(static_cast<std::size_t>(T) + 1);
  alpha[0] = 1.0;
  if (kind == ScheduleKind::kLinearBeta) {
    const double beta_lo = 1e-4, beta_hi = 0.02;
    for (int t = 1; t <= T; ++t) {
      const double beta =
          beta_lo + (beta_hi - beta_lo) * static_cast<double>(t - 1) /
                        static_cast<double>(T - 1);
      alpha[t] = alpha[t - 1] * (1.0 - beta);
    }
  } else {
    const double s = 0.008;
    auto profile = [&](double u) {
      const double arg = (u + s) / (1.0 + s) * kPi / 2.0;
      const double c = std::cos(arg);
      return c * c;
    };
    const double f0 = profile(0.0);
    for (int t = 1; t <= T; ++t) {
      double a = profile(static_cast<double>(t) / T) / f0;
      a = std::min(a, alpha[t - 1] * (1.0 - 1e-3));  // enforce beta <= 0.999
      alpha[t] = std::max(a, 1e-12);
    }
  }
  return NoiseSchedule(kind, std::move(alpha));
}

/// Forward noising x_t = sqrt(alpha_t) x0 + sigma_t eps.
inline Vec forward_noise(const Vec& x0, const NoiseSchedule& sch, int t,
                         const Vec& noise) {
  check_dim(noise, static_cast<int>(x0.size()), "forward_noise noise");
  return std::sqrt(sch.alpha(t)) * x0 + sch.sigma(t) * noise;
}

/// One deterministic DDIM step from index s down to index t <= s, given the
/// eps-prediction at (x_s, s).  This is the exponential-integrator update
/// x_t = sqrt(a_t/a_s) x_s - sigma_t (e^h - 1) eps, rewritten with
/// sigma_t e^{lambda_t} = sqrt(a_t) so it stays finite at sigma_t = 0:
///   x_t = r x_s - (r sigma_s - sigma_t) eps,  r = sqrt(a_t/a_s).
inline Vec ddim_step(const Vec& x_s, int s, int t, const Vec& eps,
                     const NoiseSchedule& sch) {
  if (t > s) throw InputError("ddim_step: target index must not exceed source");
  check_dim(eps, static_cast<int>(x_s.size()), "ddim_step eps");
  const double r = std::sqrt(sch.alpha(t) / sch.alpha(s));
  const double coef = r * sch.sigma(s) - sch.sigma(t);
  return r * x_s - coef * eps;
}

/// Uniform-in-index DDIM sub-grid from T down to 0 with `steps` transitions.
inline std::vector<int> ddim_grid(const NoiseSchedule& sch, int steps) {
  const int T = sch.steps();
  if (steps < 1 || steps > T) {
    throw ConfigError("ddim steps must lie in [1, T]");
  }
  std::vector<int> grid;
  grid.reserve(static_cast<std::size_t>(steps) + 1);
  for (int k = steps; k >= 0; --k) {
    const int idx = static_cast<int>(std::llround(
        static_cast<double>(T) * k / static_cast<double>(steps)));
    if (grid.empty() || grid.back() != idx) grid.push_back(idx);
  }
  return grid;
}

}  // namespace difflab

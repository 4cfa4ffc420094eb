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
#include <functional>
#include <utility>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/finite_diff.hpp"
#include "difflab/guidance.hpp"
#include "difflab/losses.hpp"
#include "difflab/mixture.hpp"
#include "difflab/oracle.hpp"
#include "difflab/rng.hpp"
#include "difflab/sampler.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

// ---------------------------------------------------------------------------
// Elementary statistics.
// ---------------------------------------------------------------------------

/// Gaussian tail probability Q(a) = P(Z >= a), Z ~ N(0,1).
inline double q_function(double a) {
  return 0.5 * std::erfc(a / 1.4142135623730951);
}

/// Exact TV distance between N(x, sigma^2 I) and N(y, sigma^2 I):
/// 1 - 2 Q(r) with r = ||x - y|| / (2 sigma).  sigma = 0 degenerates to the
/// indicator of x != y.
inline double coupling_tv(const Vec& x, const Vec& y, double sigma) {
  if (sigma < 0.0) throw InputError("coupling_tv: sigma must be >= 0");
  if (sigma == 0.0) return x == y ? 0.0 : 1.0;
  const double r = (x - y).norm() / (2.0 * sigma);
  return 1.0 - 2.0 * q_function(r);
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 1.0;
};

inline LineFit fit_line(std::span<const double> xs,
                        std::span<const double> ys) {
  const std::size_t n = xs.size();
  if (n != ys.size() || n < 2) throw InputError("fit_line: need >= 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  LineFit fit;
  fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  fit.intercept = my - fit.slope * mx;
  if (syy <= 1e-300) {
    fit.r2 = 1.0;  // constant series: the flat line is an exact fit
  } else {
    const double ss_res = syy - fit.slope * sxy;
    fit.r2 = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw InputError("median of empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid),
                   v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(),
                   v.begin() + static_cast<std::ptrdiff_t>(mid - 1), v.end());
  return 0.5 * (v[mid - 1] + hi);
}

// ---------------------------------------------------------------------------
// Histogram TV estimator (d <= 2).
// ---------------------------------------------------------------------------

struct HistGrid {
  Vec lo, hi;
  int bins_per_dim = 64;
};

struct TvEstimate {
  double value = 0.0;
  bool sparse = false;  // fewer than 5 samples per bin on average
};

inline HistGrid auto_grid(const std::vector<Vec>& a, const std::vector<Vec>& b,
                          int bins_per_dim = 64) {
  if (a.empty() || b.empty()) throw InputError("auto_grid: empty sample set");
  const Eigen::Index d = a.front().size();
  HistGrid g;
  g.bins_per_dim = bins_per_dim;
  g.lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  g.hi = Vec::Constant(d, -std::numeric_limits<double>::infinity());
  for (const auto* set : {&a, &b}) {
    for (const Vec& x : *set) {
      g.lo = g.lo.cwiseMin(x);
      g.hi = g.hi.cwiseMax(x);
    }
  }
  const Vec pad = 1e-9 * (g.hi - g.lo).cwiseMax(1.0);
  g.lo -= pad;
  g.hi += pad;
  return g;
}

/// Half L1 distance between normalized bin histograms on a shared grid.
/// Samples falling outside the grid are clamped into the edge bins.
inline TvEstimate tv_estimate(const std::vector<Vec>& a,
                              const std::vector<Vec>& b, const HistGrid& grid) {
  if (a.empty() || b.empty()) throw InputError("tv_estimate: empty sample set");
  const Eigen::Index d = a.front().size();
  if (d > 2) throw CapabilityError("histogram TV supports d <= 2");
  const int B = grid.bins_per_dim;
  const std::size_t total =
      d == 1 ? static_cast<std::size_t>(B)
             : static_cast<std::size_t>(B) * static_cast<std::size_t>(B);
  std::vector<double> pa(total, 0.0), pb(total, 0.0);
  auto bin_of = [&](const Vec& x) {
    std::size_t idx = 0;
    for (Eigen::Index k = 0; k < d; ++k) {
      const double w = (grid.hi[k] - grid.lo[k]) / B;
      int bk = static_cast<int>(std::floor((x[k] - grid.lo[k]) / w));
      bk = std::clamp(bk, 0, B - 1);
      idx = idx * static_cast<std::size_t>(B) + static_cast<std::size_t>(bk);
    }
    return idx;
  };
  for (const Vec& x : a) pa[bin_of(x)] += 1.0;
  for (const Vec& x : b) pb[bin_of(x)] += 1.0;
  for (double& v : pa) v /= static_cast<double>(a.size());
  for (double& v : pb) v /= static_cast<double>(b.size());
  TvEstimate out;
  for (std::size_t i = 0; i < total; ++i) {
    out.value += std::abs(pa[i] - pb[i]);
  }
  out.value *= 0.5;
  const double avg =
      static_cast<double>(a.size() + b.size()) / (2.0 * static_cast<double>(total));
  out.sparse = avg < 5.0;
  return out;
}

/// TV proxy for d > 2: histogram TV is measured on each 1D coordinate
/// projection and the maximum is reported (a lower bound on the true TV).
inline TvEstimate tv_estimate_projected(const std::vector<Vec>& a,
                                        const std::vector<Vec>& b,
                                        int bins_per_dim = 64) {
  if (a.empty() || b.empty()) throw InputError("tv_estimate: empty sample set");
  const Eigen::Index d = a.front().size();
  if (d <= 2) return tv_estimate(a, b, auto_grid(a, b, bins_per_dim));
  TvEstimate best;
  for (Eigen::Index k = 0; k < d; ++k) {
    std::vector<Vec> pa, pb;
    pa.reserve(a.size());
    pb.reserve(b.size());
    for (const Vec& x : a) pa.push_back(Vec::Constant(1, x[k]));
    for (const Vec& x : b) pb.push_back(Vec::Constant(1, x[k]));
    const TvEstimate est = tv_estimate(pa, pb, auto_grid(pa, pb, bins_per_dim));
    if (est.value > best.value) best = est;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Empirical Lipschitz estimation.
// ---------------------------------------------------------------------------

struct Box {
  Vec lo, hi;
};

namespace detail {

inline Vec box_point(const Box& box, CounterRng& rng) {
  Vec x(box.lo.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform(box.lo[i], box.hi[i]);
  }
  return x;
}

// Max |f(b)-f(a)|/|b-a| refined by bisection: the half with the larger value
// jump is kept until the segment is no longer than `resolution`.  Locks onto
// discontinuities (quotient ~ C/h) and converges to the local max slope for
// smooth fields.
template <class F>
double refine_segment(F&& f, Vec a, Vec b, double fa, double fb,
                      double resolution) {
  double best = 0.0;
  while (true) {
    const double len = (b - a).norm();
    if (len <= 1e-300) break;
    best = std::max(best, std::abs(fb - fa) / len);
    if (len <= resolution) break;
    const Vec m = 0.5 * (a + b);
    const double fm = f(m);
    if (std::abs(fm - fa) >= std::abs(fb - fm)) {
      b = m;
      fb = fm;
    } else {
      a = m;
      fa = fm;
    }
  }
  return best;
}

}  // namespace detail

/// Empirical Lipschitz bound of a scalar field: max difference quotient over
/// random probe pairs, directional quotients at scale h, and bisection
/// refinement of the steepest segments down to length h.  For a step
/// discontinuity the estimate grows like 1/h, which is the non-Lipschitz
/// signature the bound suites look for.
template <class F>
double estimate_lipschitz(F&& f, const Box& region, int probes, double h,
                          std::uint64_t seed) {
  if (probes < 2) throw InputError("estimate_lipschitz: probes must be >= 2");
  if (!(h > 0.0)) throw InputError("estimate_lipschitz: h must be > 0");
  CounterRng rng(CounterRng::derive_key(seed, detail::fnv1a("lipschitz")));
  struct Segment {
    Vec a, b;
    double fa, fb, quotient;
  };
  std::vector<Segment> segments;
  segments.reserve(static_cast<std::size_t>(probes));
  double best = 0.0;
  for (int i = 0; i < probes; ++i) {
    const Vec a = detail::box_point(region, rng);
    const double fa = f(a);
    // Random pair across the box.
    const Vec b = detail::box_point(region, rng);
    const double fb = f(b);
    const double len = (b - a).norm();
    if (len > 1e-12) {
      segments.push_back({a, b, fa, fb, std::abs(fb - fa) / len});
      best = std::max(best, segments.back().quotient);
    }
    // Directional quotient at scale h around a.
    Vec dir = rng.gaussian_vec(a.size());
    const double dn = dir.norm();
    if (dn > 1e-12) {
      dir /= dn;
      const Vec ah = a + h * dir;
      const double fah = f(ah);
      segments.push_back({a, ah, fa, fah, std::abs(fah - fa) / h});
      best = std::max(best, segments.back().quotient);
    }
  }
  std::sort(segments.begin(), segments.end(),
            [](const Segment& x, const Segment& y) {
              return x.quotient > y.quotient;
            });
  const std::size_t refine = std::min<std::size_t>(segments.size(), 16);
  for (std::size_t i = 0; i < refine; ++i) {
    best = std::max(best, detail::refine_segment(f, segments[i].a,
                                                 segments[i].b, segments[i].fa,
                                                 segments[i].fb, h));
  }
  return best;
}

/// Gradient-Lipschitz counterpart using central-difference gradients at scale
/// h.  Segments are additionally localized by VALUE variation before the
/// gradient quotients are taken: an a.e.-flat field with a jump has zero
/// gradient almost everywhere, so the value bisection is what steers probes
/// onto the discontinuity, where the quotient then blows up like 1/h^2.
template <class F>
double estimate_grad_lipschitz(F&& f, const Box& region, int probes, double h,
                               std::uint64_t seed) {
  auto grad = [&](const Vec& x) { return finite_diff_grad(f, x, h); };
  if (probes < 2) throw InputError("estimate_grad_lipschitz: probes >= 2");
  CounterRng rng(CounterRng::derive_key(seed, detail::fnv1a("grad-lip")));
  double best = 0.0;
  struct Segment {
    Vec a, b;
    double fa, fb;
    double value_quotient;
  };
  std::vector<Segment> segments;
  auto grad_quotient = [&](const Vec& a, const Vec& b) {
    const double len = (b - a).norm();
    return len > 1e-300 ? (grad(b) - grad(a)).norm() / len : 0.0;
  };
  for (int i = 0; i < probes; ++i) {
    const Vec a = detail::box_point(region, rng);
    const Vec b = detail::box_point(region, rng);
    const double fa = f(a), fb = f(b);
    const double len = (b - a).norm();
    if (len > 1e-12) {
      segments.push_back({a, b, fa, fb, std::abs(fb - fa) / len});
      best = std::max(best, grad_quotient(a, b));
    }
    Vec dir = rng.gaussian_vec(a.size());
    const double dn = dir.norm();
    if (dn > 1e-12) {
      dir /= dn;
      const Vec ah = a + h * dir;
      best = std::max(best, grad_quotient(a, ah));
    }
  }
  std::sort(segments.begin(), segments.end(),
            [](const Segment& x, const Segment& y) {
              return x.value_quotient > y.value_quotient;
            });
  const std::size_t refine = std::min<std::size_t>(segments.size(), 8);
  for (std::size_t i = 0; i < refine; ++i) {
    Vec a = segments[i].a, b = segments[i].b;
    double fa = segments[i].fa, fb = segments[i].fb;
    while ((b - a).norm() > h) {
      const Vec m = 0.5 * (a + b);
      const double fm = f(m);
      if (std::abs(fm - fa) >= std::abs(fb - fm)) {
        b = m;
        fb = fm;
      } else {
        a = m;
        fa = fm;
      }
    }
    // Probe the FD-gradient field at fixed offsets around the located point;
    // endpoints of the refined segment share an FD window, so quotients are
    // taken one window apart.
    const Vec c = 0.5 * (a + b);
    Vec dir = b - a;
    const double len = dir.norm();
    if (len > 1e-300) {
      dir /= len;
    } else {
      dir = Vec::Zero(a.size());
      dir[0] = 1.0;
    }
    best = std::max(best, grad_quotient(c, c + 2.0 * h * dir));
    best = std::max(best, grad_quotient(c, c - 2.0 * h * dir));
    best = std::max(best, grad_quotient(c - h * dir, c + h * dir));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Two-stage convergence analysis of guided traces.
// ---------------------------------------------------------------------------

struct TwoStageReport {
  int split_index = -1;  // last index exceeding the trailing-median threshold
  double early_osc_amplitude = 0.0;
  std::vector<double> contraction_factors;  // l_{k+1}/l_k over the late phase
  double late_slope = 0.0;
  double late_r2 = 1.0;
  double fraction_steps_contracting = 1.0;
  double total_late_ratio = 1.0;  // l_end / l_{split+1}
  double final_loss = 0.0;
  double reference_loss = 0.0;
};

/// Splits a loss trace at the last step whose loss exceeds its trailing
/// median by more than `threshold` (default 25%), then fits log-loss vs step
/// index on the late phase and reports per-step contraction factors.
inline TwoStageReport two_stage_metrics(const std::vector<double>& losses,
                                        double reference_loss,
                                        double threshold = 0.25) {
  if (losses.size() < 10) {
    throw InsufficientDataError("two_stage_metrics: need >= 10 recorded steps");
  }
  for (double l : losses) {
    if (!std::isfinite(l)) {
      throw InputError("two_stage_metrics: non-finite loss in trace");
    }
  }
  TwoStageReport rep;
  rep.reference_loss = reference_loss;
  rep.final_loss = losses.back();

  std::vector<double> prefix;
  prefix.reserve(losses.size());
  int split = -1;
  for (std::size_t k = 0; k < losses.size(); ++k) {
    prefix.push_back(losses[k]);
    const double med = median_of(prefix);
    if (losses[k] > (1.0 + threshold) * med) split = static_cast<int>(k);
  }
  if (split >= static_cast<int>(losses.size()) - 3) {
    split = static_cast<int>(losses.size()) - 4;  // keep >= 3 late points
  }
  rep.split_index = split;

  if (split >= 0) {
    double mx = losses[0], mn = losses[0];
    for (int k = 0; k <= split; ++k) {
      mx = std::max(mx, losses[static_cast<std::size_t>(k)]);
      mn = std::min(mn, losses[static_cast<std::size_t>(k)]);
    }
    rep.early_osc_amplitude = mx > 0.0 ? (mx - mn) / mx : 0.0;
  }

  const std::size_t late_begin = static_cast<std::size_t>(split + 1);
  constexpr double kFloor = 1e-300;
  std::vector<double> xs, ys;
  int contracting = 0;
  for (std::size_t k = late_begin; k < losses.size(); ++k) {
    const double lk = std::max(losses[k], kFloor);
    xs.push_back(static_cast<double>(k));
    ys.push_back(std::log(lk));
    if (k + 1 < losses.size()) {
      const double next = std::max(losses[k + 1], kFloor);
      rep.contraction_factors.push_back(next / lk);
      if (next < lk) ++contracting;
    }
  }
  const LineFit fit = fit_line(xs, ys);
  rep.late_slope = fit.slope;
  rep.late_r2 = fit.r2;
  rep.fraction_steps_contracting =
      rep.contraction_factors.empty()
          ? 1.0
          : static_cast<double>(contracting) /
                static_cast<double>(rep.contraction_factors.size());
  rep.total_late_ratio = std::max(losses.back(), kFloor) /
                         std::max(losses[late_begin], kFloor);
  return rep;
}

inline TwoStageReport two_stage_metrics(const SampleTrace& trace,
                                        double reference_loss,
                                        double threshold = 0.25) {
  std::vector<double> losses;
  for (const auto& s : trace.steps) {
    if (std::isfinite(s.loss)) losses.push_back(s.loss);
  }
  return two_stage_metrics(losses, reference_loss, threshold);
}

// ---------------------------------------------------------------------------
// DDIM discretization order.
// ---------------------------------------------------------------------------

struct OrderConfig {
  std::vector<int> grid_sizes{10, 20, 40, 80};
  double lambda_lo = -4.0;  // start integrating where the half log-SNR crosses
  int t_end_index = 0;      // 0 means T/100
  int num_seeds = 16;
  const LossFunction* guidance_loss = nullptr;  // nullptr = unguided
  double guidance_weight = 1.0;
};

struct OrderFitReport {
  std::vector<int> grid_sizes;
  std::vector<double> h_max;
  std::vector<double> mean_error;
  double slope = 0.0;
  double intercept = 0.0;
  bool monotone = true;
  int reference_steps = 0;
  int t_start = 0, t_end = 0;
};

namespace detail {

/// Grid of schedule indices uniform in half log-SNR between two endpoints.
inline std::vector<int> lambda_uniform_grid(const NoiseSchedule& sch,
                                            int t_start, int t_end, int M) {
  const double ls = sch.lambda(t_start), le = sch.lambda(t_end);
  std::vector<int> grid;
  grid.push_back(t_start);
  for (int k = 1; k < M; ++k) {
    const double target = ls + (le - ls) * static_cast<double>(k) / M;
    int idx = sch.index_for_lambda(target);
    idx = std::clamp(idx, t_end, t_start);
    if (idx < grid.back()) grid.push_back(idx);
  }
  if (grid.back() != t_end) grid.push_back(t_end);
  return grid;
}

/// DDIM with the guidance folded into the epsilon prediction (the guided
/// reverse-ODE vector field), which is the object whose discretization error
/// the order experiment measures.
template <DiffusionOracle O>
Vec integrate_ode(const O& oracle, const NoiseSchedule& sch,
                  const std::vector<int>& grid, const Vec& x_init,
                  const LossFunction* loss, double weight) {
  Vec x = x_init;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    const int s = grid[j], t = grid[j + 1];
    Vec eps = oracle.epsilon(sch, s, x);
    if (loss != nullptr) {
      const Vec corr =
          tweedie_guidance_grad(oracle, sch, s, x, *loss, nullptr);
      eps -= sch.sigma(s) * weight * corr;
    }
    x = ddim_step(x, s, t, eps, sch);
  }
  return x;
}

}  // namespace detail

/// Terminal error of DDIM sub-grids against a dense-index reference, matched
/// initial noise per seed, fitted as log error vs log h_max.  Grids are
/// uniform in half log-SNR across the active window so h_max scales as 1/M.
template <DiffusionOracle O>
OrderFitReport discretization_order(const O& oracle, const NoiseSchedule& sch,
                                    const OrderConfig& cfg,
                                    std::uint64_t seed) {
  if (cfg.grid_sizes.size() < 3) {
    throw ConfigError("discretization_order: need >= 3 grid sizes");
  }
  const int T = sch.steps();
  const int t_end = cfg.t_end_index > 0 ? cfg.t_end_index : std::max(1, T / 100);
  int t_start = std::min(sch.index_for_lambda(cfg.lambda_lo), T);
  if (t_start <= t_end + 10) t_start = T;

  OrderFitReport rep;
  rep.t_start = t_start;
  rep.t_end = t_end;
  rep.grid_sizes = cfg.grid_sizes;

  std::vector<int> reference;
  for (int t = t_start; t >= t_end; --t) reference.push_back(t);
  rep.reference_steps = static_cast<int>(reference.size()) - 1;
  const int max_m = *std::max_element(cfg.grid_sizes.begin(),
                                      cfg.grid_sizes.end());
  if (rep.reference_steps < 10 * max_m) {
    throw ConfigError("discretization_order: reference must be >= 10x finer");
  }

  std::vector<Vec> inits;
  for (int s = 0; s < cfg.num_seeds; ++s) {
    CounterRng rng = CounterRng::keyed(seed, static_cast<std::uint64_t>(s),
                                       "order-init");
    const Vec x0 = oracle.sample_prior(rng);
    inits.push_back(
        forward_noise(x0, sch, t_start, rng.gaussian_vec(oracle.dim())));
  }
  std::vector<Vec> refs;
  refs.reserve(inits.size());
  for (const Vec& x : inits) {
    refs.push_back(detail::integrate_ode(oracle, sch, reference, x,
                                         cfg.guidance_loss,
                                         cfg.guidance_weight));
  }

  for (int M : cfg.grid_sizes) {
    const auto grid = detail::lambda_uniform_grid(sch, t_start, t_end, M);
    double hmax = 0.0;
    for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
      hmax = std::max(hmax, sch.ddim_h(grid[j], grid[j + 1]));
    }
    double err = 0.0;
    for (std::size_t i = 0; i < inits.size(); ++i) {
      const Vec xm = detail::integrate_ode(oracle, sch, grid, inits[i],
                                           cfg.guidance_loss,
                                           cfg.guidance_weight);
      err += (xm - refs[i]).norm();
    }
    err /= static_cast<double>(inits.size());
    rep.h_max.push_back(hmax);
    rep.mean_error.push_back(err);
  }

  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < rep.h_max.size(); ++i) {
    if (rep.mean_error[i] > 0.0) {
      lx.push_back(std::log(rep.h_max[i]));
      ly.push_back(std::log(rep.mean_error[i]));
    }
  }
  if (lx.size() >= 2) {
    const LineFit fit = fit_line(lx, ly);
    rep.slope = fit.slope;
    rep.intercept = fit.intercept;
  }
  for (std::size_t i = 0; i + 1 < rep.mean_error.size(); ++i) {
    // grid_sizes ascend, so errors should descend
    if (rep.mean_error[i + 1] > rep.mean_error[i]) rep.monotone = false;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Resampling contraction (population TV vs sweep count).
// ---------------------------------------------------------------------------

struct ContractionConfig {
  std::vector<int> s_values{1, 2, 4, 8};
  int runs = 4000;
  int ddim_steps = 50;
  double stop_fraction = 0.3;  // measure populations at ~ this fraction of T
  int bins = 60;
  int bootstrap = 200;
};

struct ContractionCurve {
  std::vector<int> s_values;
  std::vector<double> tv;
  int t_stop = 0;
  double frac_last_below_first = 0.0;  // bootstrap fraction TV(s_max)<TV(s_1)
  double rho = 1.0;
  bool envelope_ok = false;
  double envelope_slack = 0.05;
};

/// Measures TV between guided+resampled populations and exact marginal draws
/// at a mid-schedule grid node, for increasing sweep counts s.  The guidance
/// config should encode a deliberately biased pull so there is distributional
/// error for the renoising to contract.
inline ContractionCurve resampling_contraction(const MixtureModel& model,
                                               const NoiseSchedule& sch,
                                               const GuidanceConfig& biased,
                                               const LossFunction& biased_loss,
                                               const ContractionConfig& cfg,
                                               std::uint64_t seed) {
  if (cfg.s_values.empty() || cfg.s_values.front() != 1) {
    throw ConfigError("contraction: s_values must start at 1");
  }
  const auto grid = ddim_grid(sch, cfg.ddim_steps);
  // Snap the stop point to a grid node.
  const int want = static_cast<int>(cfg.stop_fraction * sch.steps());
  int t_stop = grid.front();
  for (int node : grid) {
    if (std::abs(node - want) < std::abs(t_stop - want)) t_stop = node;
  }

  ContractionCurve curve;
  curve.s_values = cfg.s_values;
  curve.t_stop = t_stop;

  SampleOptions opts;
  opts.stop_at_index = t_stop;
  opts.exact_marginal_init = true;
  opts.record_full_state = false;

  // Ground truth: exact marginal draws at t_stop.
  std::vector<Vec> exact;
  exact.reserve(static_cast<std::size_t>(cfg.runs));
  for (int i = 0; i < cfg.runs; ++i) {
    CounterRng rng = CounterRng::keyed(seed, static_cast<std::uint64_t>(i),
                                       "contraction-exact");
    const Vec x0 = model.sample_prior(rng);
    exact.push_back(forward_noise(x0, sch, t_stop,
                                  rng.gaussian_vec(model.dim())));
  }

  std::vector<std::vector<Vec>> populations;
  for (std::size_t si = 0; si < cfg.s_values.size(); ++si) {
    GuidanceConfig g = biased;
    g.resampling = ResamplePlan{cfg.s_values[si],
                                1.0,
                                static_cast<double>(t_stop) / sch.steps()};
    std::vector<Vec> pop;
    pop.reserve(static_cast<std::size_t>(cfg.runs));
    for (int i = 0; i < cfg.runs; ++i) {
      const std::uint64_t key = CounterRng::keyed(
          seed,
          static_cast<std::uint64_t>(i) * 131 + static_cast<std::uint64_t>(si),
          "contraction-run")
                                    .key();
      const SampleTrace tr = sample_on_grid(model, sch, grid, &g, &biased_loss,
                                            key, opts);
      pop.push_back(tr.terminal);
    }
    populations.push_back(std::move(pop));
  }

  const HistGrid hist = auto_grid(exact, populations.back(), cfg.bins);
  for (const auto& pop : populations) {
    curve.tv.push_back(tv_estimate(pop, exact, hist).value);
  }

  // Bootstrap the first/last comparison.
  CounterRng boot(CounterRng::derive_key(seed, detail::fnv1a("bootstrap")));
  int wins = 0;
  const auto& first = populations.front();
  const auto& last = populations.back();
  for (int b = 0; b < cfg.bootstrap; ++b) {
    auto resample = [&](const std::vector<Vec>& src) {
      std::vector<Vec> out;
      out.reserve(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) {
        out.push_back(src[boot.next_u64() % src.size()]);
      }
      return out;
    };
    const double tv1 = tv_estimate(resample(first), exact, hist).value;
    const double tvS = tv_estimate(resample(last), exact, hist).value;
    if (tvS < tv1) ++wins;
  }
  curve.frac_last_below_first =
      static_cast<double>(wins) / static_cast<double>(cfg.bootstrap);

  // Geometric envelope TV(s) <= TV(1) rho^{s-1} + slack: fit rho by least
  // squares over the feasible set (rho values for which the envelope holds
  // everywhere).  No feasible rho < 1 means no geometric envelope.
  double best_rho = 1.0, best_sse = std::numeric_limits<double>::infinity();
  bool feasible = false;
  for (int k = 1; k < 100; ++k) {
    const double rho = 0.01 * k;
    double sse = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < curve.tv.size(); ++i) {
      const double pred =
          curve.tv.front() * std::pow(rho, curve.s_values[i] - 1);
      sse += (curve.tv[i] - pred) * (curve.tv[i] - pred);
      if (curve.tv[i] > pred + curve.envelope_slack) ok = false;
    }
    if (ok && sse < best_sse) {
      best_sse = sse;
      best_rho = rho;
      feasible = true;
    }
  }
  curve.rho = best_rho;
  // Point-estimate curve must also be non-increasing within MC slack.
  bool nonincreasing = true;
  for (std::size_t i = 0; i + 1 < curve.tv.size(); ++i) {
    if (curve.tv[i + 1] > curve.tv[i] + 0.02) nonincreasing = false;
  }
  curve.envelope_ok = feasible && best_rho < 1.0 && nonincreasing;
  return curve;
}

// ---------------------------------------------------------------------------
// Accumulated-gradient probes (pure gradient descent on a loss variant).
// ---------------------------------------------------------------------------

enum class ProbeVariant { kRaw, kSmoothed, kRandomAug };

inline const char* to_string(ProbeVariant v) {
  switch (v) {
    case ProbeVariant::kRaw: return "raw";
    case ProbeVariant::kSmoothed: return "smoothed";
    case ProbeVariant::kRandomAug: return "random-aug";
  }
  return "?";
}

struct ProbeConfig {
  ProbeVariant variant = ProbeVariant::kRaw;
  int steps = 1000;
  double eta = 1e-3;
  double smooth_sigma = 0.25;
  int smooth_m = 64;
  AugmentationSet augset = AugmentationSet::jitter_only(0.25);
  int aug_k = 64;
};

struct ProbeResult {
  Vec final_x;
  double final_loss = 0.0;
  double distance_to_target = 0.0;
  bool diverged = false;
  int steps_run = 0;
};

/// 1000-step (by default) gradient descent on a loss variant, no diffusion
/// involved; reports where the iterate lands relative to the semantic target.
inline ProbeResult accumulated_gradient_probe(const LossFunction& loss,
                                              const Vec& target,
                                              const Vec& init,
                                              const ProbeConfig& cfg,
                                              std::uint64_t seed) {
  if (cfg.steps < 0) throw InputError("probe: steps must be >= 0");
  CounterRng rng(CounterRng::derive_key(seed, detail::fnv1a("probe")));
  Vec x = init;
  ProbeResult out;
  for (int k = 0; k < cfg.steps; ++k) {
    Vec g;
    switch (cfg.variant) {
      case ProbeVariant::kRaw:
        g = loss.grad(x);
        break;
      case ProbeVariant::kSmoothed:
        g = smoothed_loss_grad(loss, x, cfg.smooth_sigma, cfg.smooth_m, rng);
        break;
      case ProbeVariant::kRandomAug:
        g = aug_average_x0_grad(loss, cfg.augset, x, cfg.aug_k, rng);
        break;
    }
    x -= cfg.eta * g;
    ++out.steps_run;
    if (!x.allFinite() || x.norm() > 1e6) {
      out.diverged = true;
      break;
    }
  }
  out.final_x = x;
  out.final_loss = loss.value(x);
  out.distance_to_target = (x - target).norm();
  return out;
}

}  // namespace difflab

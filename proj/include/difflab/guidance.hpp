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
#include <optional>
#include <string>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/exact_energy.hpp"
#include "difflab/losses.hpp"
#include "difflab/oracle.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

enum class GuidanceMethod { kExact, kTweedie, kLgdMc, kSmoothed, kRandomAug };
enum class OptimizerKind { kGd, kPgd };
enum class EtaRule { kConstant, kSigmaScaled };
enum class SmoothSigmaRule { kConstant, kNoiseScale };

inline const char* to_string(GuidanceMethod m) {
  switch (m) {
    case GuidanceMethod::kExact: return "exact";
    case GuidanceMethod::kTweedie: return "tweedie";
    case GuidanceMethod::kLgdMc: return "lgd-mc";
    case GuidanceMethod::kSmoothed: return "smoothed";
    case GuidanceMethod::kRandomAug: return "random-aug";
  }
  return "?";
}

inline const char* to_string(OptimizerKind o) {
  return o == OptimizerKind::kGd ? "gd" : "pgd";
}

// ---------------------------------------------------------------------------
// Differentiable vector-space augmentations (analogs of image translation,
// resizing, color jitter and cutout).  Sampling a transform draws its
// parameters from the provided substream; every transform knows the action of
// its input Jacobian on a gradient.
// ---------------------------------------------------------------------------

struct TransformSpec {
  enum class Kind { kIdentity, kJitter, kScale, kShift, kMask };
  Kind kind = Kind::kIdentity;
  double param = 0.0;  // jitter std / scale range / shift range / drop prob
};

inline const char* to_string(TransformSpec::Kind k) {
  switch (k) {
    case TransformSpec::Kind::kIdentity: return "identity";
    case TransformSpec::Kind::kJitter: return "jitter";
    case TransformSpec::Kind::kScale: return "scale";
    case TransformSpec::Kind::kShift: return "shift";
    case TransformSpec::Kind::kMask: return "mask";
  }
  return "?";
}

struct AugmentationSet {
  std::vector<TransformSpec> families;

  static AugmentationSet identity_only() {
    return AugmentationSet{{TransformSpec{TransformSpec::Kind::kIdentity, 0}}};
  }
  static AugmentationSet jitter_only(double std_dev) {
    return AugmentationSet{
        {TransformSpec{TransformSpec::Kind::kJitter, std_dev}}};
  }
  /// Jitter + scale + shift + cutout, the default diverse set.
  static AugmentationSet standard() {
    return AugmentationSet{{TransformSpec{TransformSpec::Kind::kJitter, 0.25},
                            TransformSpec{TransformSpec::Kind::kScale, 0.1},
                            TransformSpec{TransformSpec::Kind::kShift, 0.2},
                            TransformSpec{TransformSpec::Kind::kMask, 0.1}}};
  }
};

/// A transform with parameters frozen; apply() maps z, pullback() maps a
/// gradient at T(z) back through the (diagonal/scalar) input Jacobian.
struct SampledTransform {
  TransformSpec::Kind kind = TransformSpec::Kind::kIdentity;
  double scale = 1.0;
  Vec offset;  // jitter/shift offset, or {0,1} mask depending on kind

  Vec apply(const Vec& z) const {
    switch (kind) {
      case TransformSpec::Kind::kIdentity: return z;
      case TransformSpec::Kind::kJitter:
      case TransformSpec::Kind::kShift: return z + offset;
      case TransformSpec::Kind::kScale: return scale * z;
      case TransformSpec::Kind::kMask: return offset.cwiseProduct(z);
    }
    return z;
  }

  Vec pullback(const Vec& g) const {
    switch (kind) {
      case TransformSpec::Kind::kIdentity:
      case TransformSpec::Kind::kJitter:
      case TransformSpec::Kind::kShift: return g;
      case TransformSpec::Kind::kScale: return scale * g;
      case TransformSpec::Kind::kMask: return offset.cwiseProduct(g);
    }
    return g;
  }
};

inline SampledTransform sample_transform(const AugmentationSet& augset,
                                         Eigen::Index d, CounterRng& rng) {
  if (augset.families.empty()) {
    throw ConfigError("augmentation set must contain >= 1 transform family");
  }
  const auto& fam = augset.families[static_cast<std::size_t>(
      rng.next_u64() % augset.families.size())];
  SampledTransform tf;
  tf.kind = fam.kind;
  switch (fam.kind) {
    case TransformSpec::Kind::kIdentity:
      break;
    case TransformSpec::Kind::kJitter:
      tf.offset = fam.param * rng.gaussian_vec(d);
      break;
    case TransformSpec::Kind::kShift: {
      tf.offset = Vec(d);
      for (Eigen::Index i = 0; i < d; ++i) {
        tf.offset[i] = rng.uniform(-fam.param, fam.param);
      }
      break;
    }
    case TransformSpec::Kind::kScale:
      tf.scale = 1.0 + rng.uniform(-fam.param, fam.param);
      break;
    case TransformSpec::Kind::kMask: {
      tf.offset = Vec(d);
      for (Eigen::Index i = 0; i < d; ++i) {
        tf.offset[i] = rng.uniform() < fam.param ? 0.0 : 1.0;
      }
      break;
    }
  }
  return tf;
}

// ---------------------------------------------------------------------------
// Guidance configuration.
// ---------------------------------------------------------------------------

struct ResamplePlan {
  int s = 1;          // sweeps per transition
  double t_hi = 0.8;  // window (fractions of T): resample while t/T in (lo,hi]
  double t_lo = 0.3;
};

struct GuidanceConfig {
  GuidanceMethod method = GuidanceMethod::kTweedie;
  OptimizerKind optimizer = OptimizerKind::kGd;
  double eta = 0.5;
  EtaRule eta_rule = EtaRule::kSigmaScaled;

  int lgd_n = 10;          // Monte-Carlo copies
  double lgd_gamma = 0.1;  // r_t = gamma * sigma_t / sqrt(alpha_t)

  int smooth_m = 64;
  SmoothSigmaRule smooth_rule = SmoothSigmaRule::kNoiseScale;
  double smooth_sigma = 0.25;  // used by the constant rule

  AugmentationSet augset = AugmentationSet::standard();
  int aug_k = 10;
  bool aug_resample_per_step = true;

  std::optional<ResamplePlan> resampling;

  void validate() const {
    if (lgd_n < 1) throw ConfigError("lgd-mc: n must be >= 1");
    if (smooth_m < 1) throw ConfigError("smoothed: m must be >= 1");
    if (aug_k < 1) throw ConfigError("random-aug: k must be >= 1");
    if (eta < 0.0) throw ConfigError("eta must be >= 0");
    if (lgd_gamma < 0.0) throw ConfigError("lgd-mc: gamma must be >= 0");
    if (smooth_sigma < 0.0) throw ConfigError("smoothed: sigma must be >= 0");
    if (resampling) {
      if (resampling->s < 1) throw ConfigError("resampling: s must be >= 1");
      if (!(resampling->t_hi > resampling->t_lo)) {
        throw ConfigError("resampling: need t_hi > t_lo");
      }
    }
  }

  double step_size(const NoiseSchedule& sch, int t) const {
    return eta_rule == EtaRule::kSigmaScaled ? eta * sch.sigma(t) : eta;
  }

  double smoothing_sigma(const NoiseSchedule& sch, int t) const {
    return smooth_rule == SmoothSigmaRule::kNoiseScale ? sch.noise_scale(t)
                                                       : smooth_sigma;
  }

  /// LGD-MC perturbation radius at step t.
  double lgd_radius(const NoiseSchedule& sch, int t) const {
    return lgd_gamma * sch.noise_scale(t);
  }

  std::string label() const {
    std::string s = to_string(method);
    s += "+";
    s += to_string(optimizer);
    if (resampling && resampling->s > 1) {
      s += "+s" + std::to_string(resampling->s);
    }
    return s;
  }
};

// ---------------------------------------------------------------------------
// Guidance gradients.  All of these return the conditional-score correction
// (the direction that increases log p(y | x_t)); the sampler negates it when
// feeding the descent update.
// ---------------------------------------------------------------------------

/// Tweedie guidance -grad_x l(x0_hat(x), y), chained through the closed-form
/// posterior-mean Jacobian.  x0_hat is passed in so the score forward that
/// produced it is shared with the DDIM step.
template <DiffusionOracle O>
Vec tweedie_guidance_grad_at(const O& oracle, const NoiseSchedule& sch, int t,
                             const Vec& x, const Vec& x0_hat,
                             const LossFunction& loss,
                             RunCounters* counters = nullptr) {
  const Vec g = loss.grad(x0_hat);
  if (counters != nullptr) ++counters->loss_grad_evals;
  return -oracle.posterior_jacobian_vec(sch, t, x, g);
}

template <DiffusionOracle O>
Vec tweedie_guidance_grad(const O& oracle, const NoiseSchedule& sch, int t,
                          const Vec& x, const LossFunction& loss,
                          RunCounters* counters = nullptr) {
  if (!(sch.alpha(t) > 0.0)) {
    throw SingularTimeError("tweedie guidance undefined at alpha_t = 0");
  }
  return tweedie_guidance_grad_at(oracle, sch, t, x,
                                  oracle.posterior_mean(sch, t, x), loss,
                                  counters);
}

/// LGD-MC guidance: grad_x log (1/n) sum_i exp(-l(x0_i)) with
/// x0_i = x0_hat + r_t z_i, z_i ~ N(0, I) held fixed per call (common random
/// numbers).  n = 1, r_t = 0 reproduces the Tweedie gradient bit-for-bit.
template <DiffusionOracle O>
Vec lgd_mc_grad_at(const O& oracle, const NoiseSchedule& sch, int t,
                   const Vec& x, const Vec& x0_hat, const LossFunction& loss,
                   int n, double r_t, CounterRng& rng,
                   RunCounters* counters = nullptr) {
  if (n < 1) throw ConfigError("lgd-mc: n must be >= 1");
  std::vector<Vec> grads(static_cast<std::size_t>(n));
  std::vector<double> neg_losses(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vec xi = x0_hat + r_t * rng.gaussian_vec(x0_hat.size());
    neg_losses[static_cast<std::size_t>(i)] = -loss.value(xi);
    grads[static_cast<std::size_t>(i)] = loss.grad(xi);
    if (counters != nullptr) ++counters->loss_grad_evals;
  }
  std::vector<double> w = neg_losses;
  softmax_inplace(w);
  Vec acc = w[0] * grads[0];
  for (int i = 1; i < n; ++i) {
    acc += w[static_cast<std::size_t>(i)] * grads[static_cast<std::size_t>(i)];
  }
  return -oracle.posterior_jacobian_vec(sch, t, x, acc);
}

template <DiffusionOracle O>
Vec lgd_mc_grad(const O& oracle, const NoiseSchedule& sch, int t, const Vec& x,
                const LossFunction& loss, int n, double r_t, CounterRng& rng,
                RunCounters* counters = nullptr) {
  return lgd_mc_grad_at(oracle, sch, t, x, oracle.posterior_mean(sch, t, x),
                        loss, n, r_t, rng, counters);
}

/// Monte-Carlo gradient of the Gaussian-smoothed loss
/// l_hat(x) = E[l(x + sigma eps)].  Differentiable losses use the pathwise
/// estimator (mean of grad l at perturbed points); losses with an a.e.-zero
/// gradient use the score-function identity
/// grad l_hat(x) = E[(l(x + sigma eps) - l(x)) eps] / sigma.
/// sigma = 0 returns the raw gradient exactly.
inline Vec smoothed_loss_grad(const LossFunction& loss, const Vec& x,
                              double sigma, int m, CounterRng& rng,
                              RunCounters* counters = nullptr) {
  if (m < 1) throw ConfigError("smoothed: m must be >= 1");
  if (sigma < 0.0) throw ConfigError("smoothed: sigma must be >= 0");
  if (sigma == 0.0) {
    if (counters != nullptr) ++counters->loss_grad_evals;
    return loss.grad(x);
  }
  Vec acc = Vec::Zero(x.size());
  if (loss.differentiable()) {
    for (int j = 0; j < m; ++j) {
      acc += loss.grad(x + sigma * rng.gaussian_vec(x.size()));
      if (counters != nullptr) ++counters->loss_grad_evals;
    }
  } else {
    const double base = loss.value(x);
    for (int j = 0; j < m; ++j) {
      const Vec eps = rng.gaussian_vec(x.size());
      acc += (loss.value(x + sigma * eps) - base) / sigma * eps;
      if (counters != nullptr) ++counters->loss_grad_evals;
    }
  }
  return acc / static_cast<double>(m);
}

/// Average of transform-pulled-back loss gradients at the x0 level:
/// (1/k) sum_j Jac(T_j)' grad l(T_j(x0)).  Exposed separately so its mean can
/// be checked against the Gaussian-smoothed gradient for jitter-only sets.
inline Vec aug_average_x0_grad(const LossFunction& loss,
                               const AugmentationSet& augset, const Vec& x0,
                               int k, CounterRng& rng,
                               RunCounters* counters = nullptr) {
  if (k < 1) throw ConfigError("random-aug: k must be >= 1");
  Vec acc;
  for (int j = 0; j < k; ++j) {
    const SampledTransform tf = sample_transform(augset, x0.size(), rng);
    const Vec g = tf.pullback(loss.grad(tf.apply(x0)));
    if (counters != nullptr) ++counters->loss_grad_evals;
    if (j == 0) {
      acc = g;
    } else {
      acc += g;
    }
  }
  return acc / static_cast<double>(k);
}

/// Same average over an externally frozen transform list (used when the
/// config asks for transforms drawn once per run instead of per step).
inline Vec aug_average_x0_grad_fixed(const LossFunction& loss,
                                     const std::vector<SampledTransform>& tfs,
                                     const Vec& x0,
                                     RunCounters* counters = nullptr) {
  if (tfs.empty()) throw ConfigError("random-aug: empty transform list");
  Vec acc;
  for (std::size_t j = 0; j < tfs.size(); ++j) {
    const Vec g = tfs[j].pullback(loss.grad(tfs[j].apply(x0)));
    if (counters != nullptr) ++counters->loss_grad_evals;
    if (j == 0) {
      acc = g;
    } else {
      acc += g;
    }
  }
  return acc / static_cast<double>(tfs.size());
}

/// Random-augmentation guidance: k freshly sampled transforms applied to
/// x0_hat, gradients averaged, then chained through the posterior Jacobian.
template <DiffusionOracle O>
Vec random_aug_grad_at(const O& oracle, const NoiseSchedule& sch, int t,
                       const Vec& x, const Vec& x0_hat,
                       const LossFunction& loss, const AugmentationSet& augset,
                       int k, CounterRng& rng,
                       RunCounters* counters = nullptr) {
  const Vec avg = aug_average_x0_grad(loss, augset, x0_hat, k, rng, counters);
  return -oracle.posterior_jacobian_vec(sch, t, x, avg);
}

template <DiffusionOracle O>
Vec random_aug_grad(const O& oracle, const NoiseSchedule& sch, int t,
                    const Vec& x, const LossFunction& loss,
                    const AugmentationSet& augset, int k, CounterRng& rng,
                    RunCounters* counters = nullptr) {
  return random_aug_grad_at(oracle, sch, t, x,
                            oracle.posterior_mean(sch, t, x), loss, augset, k,
                            rng, counters);
}

/// One optimizer update on the post-step iterate: gd takes x - eta g, pgd
/// takes x - eta g/||g|| (unchanged when ||g|| <= 1e-12).  g is the loss
/// gradient, i.e. minus the guidance correction.
inline Vec guided_update(const Vec& x_next, const Vec& g, double eta,
                         OptimizerKind opt) {
  if (eta < 0.0) throw ConfigError("guided_update: eta must be >= 0");
  if (opt == OptimizerKind::kGd) {
    return x_next - eta * g;
  }
  const double norm = g.norm();
  if (norm <= 1e-12) return x_next;
  return x_next - (eta / norm) * g;
}

/// Resampling sweep for one transition s_idx -> t_idx: run the guided inner
/// step `sweeps` times, renoising back up with
/// x_s = sqrt(beta) x_t + sqrt(1-beta) n, beta = alpha_s/alpha_t, between
/// consecutive sweeps.  sweeps = 1 is exactly one guided step.
template <class InnerStep>
Vec resample_sweep(const Vec& x_src, int s_idx, int t_idx, int sweeps,
                   const NoiseSchedule& sch, InnerStep&& inner,
                   CounterRng& renoise_rng) {
  if (sweeps < 1) throw ConfigError("resample_sweep: s must be >= 1");
  if (s_idx < 1) throw InputError("resample_sweep: source index must be >= 1");
  Vec x_hi = x_src;
  Vec x_lo;
  for (int i = 1; i <= sweeps; ++i) {
    x_lo = inner(x_hi);
    if (i < sweeps) {
      const double beta = sch.renoise_beta(s_idx, t_idx);
      x_hi = std::sqrt(beta) * x_lo +
             std::sqrt(1.0 - beta) * renoise_rng.gaussian_vec(x_lo.size());
    }
  }
  return x_lo;
}

}  // namespace difflab

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
#include <string>
#include <utility>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/losses.hpp"
#include "difflab/oracle.hpp"
#include "difflab/rng.hpp"
#include "difflab/sampler.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

/// Zero-mean Gaussian prior over planar trajectories.  Smoothness comes from
/// a squared-exponential kernel over the frame index, shared by the two
/// spatial axes.  With pin_start the first frame is conditioned to the origin
/// (the conditional stays zero-mean; covariance is the Schur complement) so
/// targeting a far endpoint is non-trivial.
///
/// All solves go through a cached eigendecomposition of the frame kernel, so
/// score(t, x) = -(a S + s^2 I)^{-1} x and the Tweedie map are exact for
/// every t without refactorizing.
class TrajectoryPrior {
 public:
  struct Params {
    int frames = 32;
    double length_scale = 8.0;
    double amplitude = 1.0;
    double jitter = 1e-8;
    bool pin_start = true;
  };

  explicit TrajectoryPrior(Params p) : p_(p) {
    if (p_.frames < 2) throw ConfigError("trajectory prior needs >= 2 frames");
    if (!(p_.length_scale > 0.0) || !(p_.amplitude > 0.0)) {
      throw ConfigError("trajectory prior needs positive kernel parameters");
    }
    const int F = p_.frames;
    Mat K(F, F);
    for (int i = 0; i < F; ++i) {
      for (int j = 0; j < F; ++j) {
        const double d = static_cast<double>(i - j) / p_.length_scale;
        K(i, j) = p_.amplitude * p_.amplitude * std::exp(-0.5 * d * d);
      }
    }
    K.diagonal().array() += p_.jitter;
    if (p_.pin_start) {
      // Condition frame 0 to the origin: Schur complement over frames 1..F-1.
      const Mat K_sub = K.bottomRightCorner(F - 1, F - 1);
      const Vec k0 = K.col(0).tail(F - 1);
      frame_cov_ = K_sub - k0 * k0.transpose() / K(0, 0);
      frame_cov_.diagonal().array() += p_.jitter;
      free_frames_ = F - 1;
    } else {
      frame_cov_ = K;
      free_frames_ = F;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(frame_cov_);
    eigvecs_ = es.eigenvectors();
    eigvals_ = es.eigenvalues().cwiseMax(p_.jitter);
  }

  int frames() const { return p_.frames; }
  int free_frames() const { return free_frames_; }
  int dim() const { return 2 * free_frames_; }
  bool pinned() const { return p_.pin_start; }
  const Params& params() const { return p_; }
  const Mat& frame_covariance() const { return frame_cov_; }

  /// Per-axis variance of the final frame under the prior.
  double final_frame_variance() const {
    return frame_cov_(free_frames_ - 1, free_frames_ - 1);
  }

  Vec sample_prior(CounterRng& rng) const {
    Mat z(free_frames_, 2);
    for (int c = 0; c < 2; ++c) {
      z.col(c) = rng.gaussian_vec(free_frames_);
    }
    const Mat x = eigvecs_ * eigvals_.cwiseSqrt().asDiagonal() * z;
    return flatten(x);
  }

  double marginal_log_density(const NoiseSchedule& sch, int t,
                              const Vec& x) const {
    check_dim(x, dim(), "trajectory x");
    const double a = sch.alpha(t), s2 = sch.sigma2(t);
    const Mat z = eigvecs_.transpose() * unflatten(x);
    double quad = 0.0, logdet = 0.0;
    for (int i = 0; i < free_frames_; ++i) {
      const double lam = a * eigvals_[i] + s2;
      quad += z.row(i).squaredNorm() / lam;
      logdet += std::log(lam);
    }
    return -0.5 * (quad + 2.0 * logdet + dim() * kLog2Pi);
  }

  double prior_log_density(const Vec& x) const {
    check_dim(x, dim(), "trajectory x");
    const Mat z = eigvecs_.transpose() * unflatten(x);
    double quad = 0.0, logdet = 0.0;
    for (int i = 0; i < free_frames_; ++i) {
      quad += z.row(i).squaredNorm() / eigvals_[i];
      logdet += std::log(eigvals_[i]);
    }
    return -0.5 * (quad + 2.0 * logdet + dim() * kLog2Pi);
  }

  Vec score(const NoiseSchedule& sch, int t, const Vec& x) const {
    check_dim(x, dim(), "trajectory x");
    const double a = sch.alpha(t), s2 = sch.sigma2(t);
    return apply_filter(x, [&](double lam) { return -1.0 / (a * lam + s2); });
  }

  Vec epsilon(const NoiseSchedule& sch, int t, const Vec& x) const {
    return -sch.sigma(t) * score(sch, t, x);
  }

  Vec posterior_mean(const NoiseSchedule& sch, int t, const Vec& x) const {
    const double a = checked_alpha(sch, t), s2 = sch.sigma2(t);
    if (s2 == 0.0) return x;  // no noise: x0 observed
    const double sqrt_a = std::sqrt(a);
    return apply_filter(
        x, [&](double lam) { return sqrt_a * lam / (a * lam + s2); });
  }

  /// J' v with J = d x0_hat/d x_t (symmetric, x-independent for a Gaussian).
  Vec posterior_jacobian_vec(const NoiseSchedule& sch, int t, const Vec& /*x*/,
                             const Vec& v) const {
    const double a = checked_alpha(sch, t), s2 = sch.sigma2(t);
    if (s2 == 0.0) return v;
    const double sqrt_a = std::sqrt(a);
    return apply_filter(
        v, [&](double lam) { return sqrt_a * lam / (a * lam + s2); });
  }

  /// Flattened layout is frame-major: (x_1, y_1, x_2, y_2, ...).
  Mat unflatten(const Vec& x) const {
    Mat out(free_frames_, 2);
    for (int i = 0; i < free_frames_; ++i) {
      out(i, 0) = x[2 * i];
      out(i, 1) = x[2 * i + 1];
    }
    return out;
  }

  Vec flatten(const Mat& frames) const {
    Vec out(dim());
    for (int i = 0; i < free_frames_; ++i) {
      out[2 * i] = frames(i, 0);
      out[2 * i + 1] = frames(i, 1);
    }
    return out;
  }

  /// Full trajectory including the pinned origin frame when present.
  Mat to_frames(const Vec& x) const {
    const Mat free = unflatten(x);
    if (!p_.pin_start) return free;
    Mat out = Mat::Zero(p_.frames, 2);
    out.bottomRows(free_frames_) = free;
    return out;
  }

 private:
  double checked_alpha(const NoiseSchedule& sch, int t) const {
    const double a = sch.alpha(t);
    if (!(a > 0.0)) throw SingularTimeError("alpha_t = 0: posterior undefined");
    return std::max(a, kAlphaFloor);
  }

  template <class F>
  Vec apply_filter(const Vec& x, F&& spectral) const {
    Vec gains(free_frames_);
    for (int i = 0; i < free_frames_; ++i) gains[i] = spectral(eigvals_[i]);
    const Mat z = eigvecs_.transpose() * unflatten(x);
    const Mat y = eigvecs_ * gains.asDiagonal() * z;
    return flatten(y);
  }

  Params p_;
  int free_frames_ = 0;
  Mat frame_cov_;
  Mat eigvecs_;
  Vec eigvals_;
};

struct Obstacle {
  Vec center;  // 2D
  double radius = 0.0;
};

struct MotionCondition {
  Vec target;                       // 2D endpoint target (may be empty)
  std::vector<Obstacle> obstacles;  // circular no-go regions
  double sharpness = 50.0;
  double penalty = 100.0;

  void validate() const {
    if (target.size() == 0 && obstacles.empty()) {
      throw ConfigError("motion condition needs a target or >= 1 obstacle");
    }
    if (target.size() != 0 && target.size() != 2) {
      throw ConfigError("motion target must be 2D");
    }
    for (const auto& o : obstacles) {
      if (o.center.size() != 2) throw ConfigError("obstacle center must be 2D");
      if (!(o.radius > 0.0)) throw ConfigError("obstacle radius must be > 0");
    }
  }
};

/// Targeting + obstacle-avoidance loss on trajectories:
///   ||target - pos(F)||^2
///   + sum_{frames i} sum_{obstacles} sigmoid(-(||pos(i)-c|| - r) * sharpness)
///     * penalty.
/// A frame exactly on an obstacle boundary contributes penalty/2.  The two
/// terms are reported separately; value() and grad() act on their sum.
class MotionLoss final : public LossFunction {
 public:
  MotionLoss(const TrajectoryPrior& prior, MotionCondition cond,
             double scale = 1.0)
      : prior_(&prior), cond_(std::move(cond)), scale_(scale) {
    cond_.validate();
    if (!(scale_ > 0.0)) throw InputError("loss scale must be positive");
  }

  struct Parts {
    double targeting = 0.0;
    double avoidance = 0.0;
  };

  Parts parts(const Vec& x) const {
    const Mat frames = prior_->to_frames(x);
    Parts p;
    if (cond_.target.size() != 0) {
      p.targeting =
          (cond_.target.transpose() - frames.row(frames.rows() - 1))
              .squaredNorm();
    }
    for (Eigen::Index i = 0; i < frames.rows(); ++i) {
      for (const auto& obs : cond_.obstacles) {
        const double dist = (frames.row(i).transpose() - obs.center).norm();
        p.avoidance += cond_.penalty * SigmoidBarrierLoss::sigmoid(
                                           -(dist - obs.radius) *
                                           cond_.sharpness);
      }
    }
    return p;
  }

  double value(const Vec& x) const override {
    const Parts p = parts(x);
    return scale_ * (p.targeting + p.avoidance);
  }

  Vec grad(const Vec& x) const override {
    const Mat frames = prior_->to_frames(x);
    Mat g = Mat::Zero(frames.rows(), 2);
    if (cond_.target.size() != 0) {
      g.row(frames.rows() - 1) +=
          2.0 * (frames.row(frames.rows() - 1) - cond_.target.transpose());
    }
    for (Eigen::Index i = 0; i < frames.rows(); ++i) {
      for (const auto& obs : cond_.obstacles) {
        const Vec delta = frames.row(i).transpose() - obs.center;
        const double dist = std::max(delta.norm(), 1e-9);
        const double s = SigmoidBarrierLoss::sigmoid(
            -(dist - obs.radius) * cond_.sharpness);
        g.row(i) += (cond_.penalty * s * (1.0 - s) * (-cond_.sharpness) /
                     dist * delta)
                        .transpose();
      }
    }
    // Pinned frame is constant; its gradient row is dropped.
    const Mat free = prior_->pinned()
                         ? g.bottomRows(prior_->free_frames()).eval()
                         : g;
    return scale_ * prior_->flatten(free);
  }

  int dim() const override { return prior_->dim(); }
  const MotionCondition& condition() const { return cond_; }

  int violations(const Vec& x) const {
    const Mat frames = prior_->to_frames(x);
    int count = 0;
    for (Eigen::Index i = 0; i < frames.rows(); ++i) {
      for (const auto& obs : cond_.obstacles) {
        if ((frames.row(i).transpose() - obs.center).norm() < obs.radius) {
          ++count;
        }
      }
    }
    return count;
  }

 private:
  const TrajectoryPrior* prior_;
  MotionCondition cond_;
  double scale_;
};

struct MotionRunResult {
  Vec trajectory;  // flattened free coordinates
  double targeting = 0.0;
  double avoidance = 0.0;
  int violations = 0;
  SampleTrace trace;
};

/// Guided trajectory sampling.  Only posterior-map methods apply here:
/// random augmentation is rejected (this guidance is not a neural network, so
/// there is no adversarial gradient to average away), as are exact/smoothed.
inline MotionRunResult guided_motion_sample(const TrajectoryPrior& prior,
                                            const NoiseSchedule& sch,
                                            const MotionCondition& cond,
                                            const GuidanceConfig* cfg,
                                            int ddim_steps,
                                            std::uint64_t run_key,
                                            const SampleOptions& opts = {}) {
  if (cfg != nullptr) {
    if (cfg->method == GuidanceMethod::kRandomAug) {
      throw CapabilityError(
          "random-aug is not applicable to the trajectory task: the guidance "
          "loss is evaluated directly, so augmentation has nothing to smooth");
    }
    if (cfg->method != GuidanceMethod::kTweedie &&
        cfg->method != GuidanceMethod::kLgdMc) {
      throw CapabilityError(
          "trajectory guidance supports methods {tweedie, lgd-mc}");
    }
  }
  const MotionLoss loss(prior, cond);
  MotionRunResult out;
  out.trace = sample(prior, sch, ddim_steps, cfg, &loss, run_key, opts);
  out.trajectory = out.trace.terminal;
  const MotionLoss::Parts p = loss.parts(out.trajectory);
  out.targeting = p.targeting;
  out.avoidance = p.avoidance;
  out.violations = loss.violations(out.trajectory);
  return out;
}

}  // namespace difflab

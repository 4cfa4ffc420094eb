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
#include <memory>
#include <utility>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/mixture.hpp"

namespace difflab {

/// Differentiable condition loss evaluated on clean points x0.
class LossFunction {
 public:
  virtual ~LossFunction() = default;
  virtual double value(const Vec& x) const = 0;
  virtual Vec grad(const Vec& x) const = 0;
  virtual int dim() const = 0;
  /// False for losses whose pointwise gradient is zero a.e. (step losses);
  /// Gaussian smoothing then falls back to the score-function estimator.
  virtual bool differentiable() const { return true; }
};

/// l(x) = scale * ||x - target||^2.
class QuadraticTargetLoss final : public LossFunction {
 public:
  QuadraticTargetLoss(Vec target, double scale = 1.0)
      : target_(std::move(target)), scale_(scale) {
    if (!(scale_ > 0.0)) throw InputError("loss scale must be positive");
  }
  double value(const Vec& x) const override {
    return scale_ * (x - target_).squaredNorm();
  }
  Vec grad(const Vec& x) const override {
    return 2.0 * scale_ * (x - target_);
  }
  int dim() const override { return static_cast<int>(target_.size()); }
  const Vec& target() const { return target_; }
  double scale() const { return scale_; }

 private:
  Vec target_;
  double scale_;
};

/// Classifier-style loss: scale * (-log posterior probability of one mixture
/// component at x0).  Stands in for a class-conditional guidance network.
class ComponentLogLoss final : public LossFunction {
 public:
  ComponentLogLoss(const MixtureModel& model, int target_component,
                   double scale = 1.0)
      : model_(model), target_(target_component), scale_(scale) {
    if (target_ < 0 || target_ >= model_.components()) {
      throw InputError("component-logloss: class index out of range");
    }
    if (!(scale_ > 0.0)) throw InputError("loss scale must be positive");
  }

  double value(const Vec& x) const override {
    const auto lw = component_logs(x);
    return scale_ * (logsumexp(lw) - lw[static_cast<std::size_t>(target_)]);
  }

  Vec grad(const Vec& x) const override {
    auto lw = component_logs(x);
    softmax_inplace(lw);
    // d/dx [lse(z) - z_j] = sum_i p_i dz_i - dz_j, dz_i = -(x - mu_i)/tau_i^2.
    Vec g = Vec::Zero(x.size());
    for (int i = 0; i < model_.components(); ++i) {
      g += lw[static_cast<std::size_t>(i)] / model_.variance(i) *
           (model_.mean(i) - x);
    }
    g -= (model_.mean(target_) - x) / model_.variance(target_);
    return scale_ * g;
  }

  int dim() const override { return model_.dim(); }
  int target_component() const { return target_; }
  double scale() const { return scale_; }

 private:
  std::vector<double> component_logs(const Vec& x) const {
    std::vector<double> lw(static_cast<std::size_t>(model_.components()));
    for (int i = 0; i < model_.components(); ++i) {
      const double tau2 = model_.variance(i);
      lw[static_cast<std::size_t>(i)] =
          std::log(std::max(model_.weight(i), 1e-300)) -
          0.5 * (x - model_.mean(i)).squaredNorm() / tau2 -
          0.5 * model_.dim() * std::log(tau2);
    }
    return lw;
  }

  MixtureModel model_;
  int target_;
  double scale_;
};

// ---------------------------------------------------------------------------
// Synthetic losses used by the analysis suite.
// ---------------------------------------------------------------------------

/// Bounded step loss C * 1[x_0 > threshold] (first coordinate).  Its a.e.
/// gradient is zero; it is the canonical non-Lipschitz probe.
class StepLoss final : public LossFunction {
 public:
  explicit StepLoss(int dim = 1, double bound = 1.0, double threshold = 0.0)
      : dim_(dim), bound_(bound), threshold_(threshold) {}
  double value(const Vec& x) const override {
    return x[0] > threshold_ ? bound_ : 0.0;
  }
  Vec grad(const Vec& x) const override { return Vec::Zero(x.size()); }
  int dim() const override { return dim_; }
  bool differentiable() const override { return false; }
  double bound() const { return bound_; }

 private:
  int dim_;
  double bound_, threshold_;
};

/// Closed-form Gaussian smoothing of StepLoss: l(x) = C * Phi((x0-thr)/sigma).
/// Serves as the exact oracle for the smoothing bound suite.
class SmoothedStepLoss final : public LossFunction {
 public:
  SmoothedStepLoss(double sigma, double bound = 1.0, double threshold = 0.0)
      : sigma_(sigma), bound_(bound), threshold_(threshold) {
    if (!(sigma_ > 0.0)) throw InputError("smoothing sigma must be positive");
  }
  double value(const Vec& x) const override {
    return bound_ * 0.5 * std::erfc(-(x[0] - threshold_) / (sigma_ * kSqrt2));
  }
  Vec grad(const Vec& x) const override {
    Vec g = Vec::Zero(x.size());
    const double z = (x[0] - threshold_) / sigma_;
    g[0] = bound_ * std::exp(-0.5 * z * z) / (sigma_ * std::sqrt(2.0 * kPi));
    return g;
  }
  int dim() const override { return 1; }

 private:
  static constexpr double kSqrt2 = 1.4142135623730951;
  double sigma_, bound_, threshold_;
};

/// Rugged multi-well landscape: a shallow quadratic basin toward `target`
/// plus high-frequency sin^2 ripples.  Plain gradient descent gets trapped in
/// a nearby ripple well (loss drops, distance to target does not); smoothing
/// with sigma >~ 1/omega suppresses the ripple gradient by exp(-2 w^2 s^2).
class RuggedWellLoss final : public LossFunction {
 public:
  RuggedWellLoss(Vec target, double basin_coef = 0.25, double ripple_amp = 8.0,
                 double ripple_freq = 10.0)
      : target_(std::move(target)),
        basin_(basin_coef),
        amp_(ripple_amp),
        freq_(ripple_freq) {}

  double value(const Vec& x) const override {
    double v = basin_ * (x - target_).squaredNorm();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double s = std::sin(freq_ * (x[i] - target_[i]));
      v += amp_ * s * s;
    }
    return v;
  }

  Vec grad(const Vec& x) const override {
    Vec g = 2.0 * basin_ * (x - target_);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      g[i] += amp_ * freq_ * std::sin(2.0 * freq_ * (x[i] - target_[i]));
    }
    return g;
  }

  int dim() const override { return static_cast<int>(target_.size()); }
  const Vec& target() const { return target_; }
  double basin_coef() const { return basin_; }
  double ripple_amp() const { return amp_; }
  double ripple_freq() const { return freq_; }

 private:
  Vec target_;
  double basin_, amp_, freq_;
};

/// Sigmoid barrier around a center: sum of penalty * sigmoid(-(d - r) * k)
/// over probe centers.  Sharpness k controls the Lipschitz constant, which is
/// what the guided discretization-error comparison varies.
class SigmoidBarrierLoss final : public LossFunction {
 public:
  SigmoidBarrierLoss(std::vector<Vec> centers, double radius, double sharpness,
                     double penalty = 100.0)
      : centers_(std::move(centers)),
        radius_(radius),
        sharpness_(sharpness),
        penalty_(penalty) {
    if (centers_.empty()) throw InputError("barrier loss needs >= 1 center");
  }

  double value(const Vec& x) const override {
    double v = 0.0;
    for (const Vec& c : centers_) {
      const double d = (x - c).norm();
      v += penalty_ * sigmoid(-(d - radius_) * sharpness_);
    }
    return v;
  }

  Vec grad(const Vec& x) const override {
    Vec g = Vec::Zero(x.size());
    for (const Vec& c : centers_) {
      const double d = std::max((x - c).norm(), 1e-9);
      const double s = sigmoid(-(d - radius_) * sharpness_);
      g += penalty_ * s * (1.0 - s) * (-sharpness_) / d * (x - c);
    }
    return g;
  }

  int dim() const override { return static_cast<int>(centers_[0].size()); }

  static double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

 private:
  std::vector<Vec> centers_;
  double radius_, sharpness_, penalty_;
};

}  // namespace difflab

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
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

/// Posterior moments of x0 given a noisy observation x_t.
struct PosteriorMoments {
  Vec mean;
  Mat cov;
  double lambda_min = 0.0;
};

/// Isotropic Gaussian mixture standing in for the data distribution.
///
/// Under forward noising x_t = sqrt(a) x0 + sigma eps the marginal stays a
/// mixture with component means sqrt(a) mu_i and variances a tau_i^2 + sigma^2,
/// so the score, the Tweedie posterior mean, and the posterior covariance are
/// all available in closed form.  Every method here is a pure function of its
/// arguments.
class MixtureModel {
 public:
  MixtureModel(std::vector<double> weights, std::vector<Vec> means,
               std::vector<double> variances)
      : weights_(std::move(weights)),
        means_(std::move(means)),
        variances_(std::move(variances)) {
    if (weights_.empty() || weights_.size() != means_.size() ||
        weights_.size() != variances_.size()) {
      throw InputError("mixture: weights/means/variances size mismatch");
    }
    dim_ = static_cast<int>(means_[0].size());
    double wsum = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (weights_[i] < 0.0) throw InputError("mixture: negative weight");
      if (!(variances_[i] > 0.0)) throw InputError("mixture: variance <= 0");
      if (means_[i].size() != dim_) throw InputError("mixture: ragged means");
      wsum += weights_[i];
    }
    if (std::abs(wsum - 1.0) > 1e-12) {
      throw InputError("mixture: weights must sum to 1 (got " +
                       std::to_string(wsum) + ")");
    }
    log_weights_.resize(weights_.size());
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      log_weights_[i] = weights_[i] > 0.0
                            ? std::log(weights_[i])
                            : -std::numeric_limits<double>::infinity();
    }
  }

  int dim() const { return dim_; }
  int components() const { return static_cast<int>(weights_.size()); }
  double weight(int i) const { return weights_[i]; }
  const Vec& mean(int i) const { return means_[i]; }
  double variance(int i) const { return variances_[i]; }

  /// log p_t(x) of the noised marginal, via log-sum-exp.
  double marginal_log_density(const NoiseSchedule& sch, int t,
                              const Vec& x) const {
    check_dim(x, dim_, "mixture x");
    return logsumexp(component_logs(sch, t, x));
  }

  /// Posterior responsibilities of each component given x_t.
  std::vector<double> responsibilities(const NoiseSchedule& sch, int t,
                                       const Vec& x) const {
    auto lw = component_logs(sch, t, x);
    softmax_inplace(lw);
    return lw;
  }

  /// Exact score of the noised marginal.
  Vec score(const NoiseSchedule& sch, int t, const Vec& x) const {
    check_dim(x, dim_, "mixture x");
    const double a = sch.alpha(t), s2n = sch.sigma2(t);
    auto r = responsibilities(sch, t, x);
    const double sqrt_a = std::sqrt(a);
    Vec g = Vec::Zero(dim_);
    for (int i = 0; i < components(); ++i) {
      const double s2 = a * variances_[i] + s2n;
      g += r[i] / s2 * (sqrt_a * means_[i] - x);
    }
    return g;
  }

  /// eps-parameterization: eps(x, t) = -sigma_t * score(x, t).
  Vec epsilon(const NoiseSchedule& sch, int t, const Vec& x) const {
    return -sch.sigma(t) * score(sch, t, x);
  }

  /// Hessian of log p_t at x (symmetric).
  Mat score_hessian(const NoiseSchedule& sch, int t, const Vec& x) const {
    check_dim(x, dim_, "mixture x");
    const double a = sch.alpha(t), s2n = sch.sigma2(t);
    auto r = responsibilities(sch, t, x);
    const double sqrt_a = std::sqrt(a);
    Mat h = Mat::Zero(dim_, dim_);
    Vec mbar = Vec::Zero(dim_);
    for (int i = 0; i < components(); ++i) {
      const double s2 = a * variances_[i] + s2n;
      const Vec gi = (sqrt_a * means_[i] - x) / s2;
      h += r[i] * (gi * gi.transpose());
      h.diagonal().array() -= r[i] / s2;
      mbar += r[i] * gi;
    }
    h -= mbar * mbar.transpose();
    return h;
  }

  /// Tweedie posterior mean (x + sigma^2 score)/sqrt(alpha).
  Vec posterior_mean(const NoiseSchedule& sch, int t, const Vec& x) const {
    const double a = checked_alpha(sch, t);
    return (x + sch.sigma2(t) * score(sch, t, x)) / std::sqrt(a);
  }

  /// Posterior moments via the covariance identity
  /// Cov[x0|x_t] = (sigma^2/alpha)(I + sigma^2 H), H = Hessian of log p_t.
  /// The alpha factor makes the identity agree with the linear-Gaussian
  /// posterior; see posterior_moments_direct for the moment-route oracle.
  PosteriorMoments posterior_moments(const NoiseSchedule& sch, int t,
                                     const Vec& x) const {
    const double a = checked_alpha(sch, t);
    const double s2 = sch.sigma2(t);
    PosteriorMoments out;
    out.mean = posterior_mean(sch, t, x);
    Mat cov = Mat::Identity(dim_, dim_) + s2 * score_hessian(sch, t, x);
    cov *= s2 / std::max(a, kAlphaFloor);
    out.cov = 0.5 * (cov + cov.transpose());
    out.lambda_min = min_eigenvalue(out.cov);
    return out;
  }

  /// Posterior moments from responsibility-weighted linear-Gaussian blocks:
  /// mean = sum r_i m_i,  cov = sum r_i (v_i I + m_i m_i') - m m'.
  PosteriorMoments posterior_moments_direct(const NoiseSchedule& sch, int t,
                                            const Vec& x) const {
    checked_alpha(sch, t);
    const double a = sch.alpha(t), s2n = sch.sigma2(t);
    const double sqrt_a = std::sqrt(a);
    auto r = responsibilities(sch, t, x);
    PosteriorMoments out;
    Vec mean = Vec::Zero(dim_);
    Mat second = Mat::Zero(dim_, dim_);
    for (int i = 0; i < components(); ++i) {
      const double tau2 = variances_[i];
      const double s2 = a * tau2 + s2n;
      const double vi = tau2 * s2n / s2;
      const Vec mi = (s2n * means_[i] + sqrt_a * tau2 * x) / s2;
      mean += r[i] * mi;
      second += r[i] * (mi * mi.transpose());
      second.diagonal().array() += r[i] * vi;
    }
    out.mean = mean;
    Mat cov = second - mean * mean.transpose();
    out.cov = 0.5 * (cov + cov.transpose());
    out.lambda_min = min_eigenvalue(out.cov);
    return out;
  }

  /// Action of the transposed Tweedie Jacobian, J' v with
  /// J = d x0_hat / d x_t = (I + sigma^2 H)/sqrt(alpha) (symmetric).
  Vec posterior_jacobian_vec(const NoiseSchedule& sch, int t, const Vec& x,
                             const Vec& v) const {
    const double a = checked_alpha(sch, t);
    check_dim(v, dim_, "jacobian v");
    const double s2 = sch.sigma2(t);
    const Mat h = score_hessian(sch, t, x);
    return (v + s2 * (h * v)) / std::sqrt(std::max(a, kAlphaFloor));
  }

  Vec sample_prior(CounterRng& rng) const {
    const int i = rng.categorical(weights_);
    return means_[i] + std::sqrt(variances_[i]) * rng.gaussian_vec(dim_);
  }

  /// Component with the highest prior responsibility at x0 (occupancy tests).
  int nearest_component(const Vec& x0) const {
    int best = 0;
    double best_lw = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < components(); ++i) {
      const double lw = log_weights_[i] -
                        0.5 * (x0 - means_[i]).squaredNorm() / variances_[i] -
                        0.5 * dim_ * std::log(variances_[i]);
      if (lw > best_lw) {
        best_lw = lw;
        best = i;
      }
    }
    return best;
  }

  /// Prior log-density (marginal at t = 0 without needing a schedule).
  double prior_log_density(const Vec& x0) const {
    check_dim(x0, dim_, "mixture x0");
    std::vector<double> lw(weights_.size());
    for (int i = 0; i < components(); ++i) {
      lw[i] = log_weights_[i] -
              0.5 * (x0 - means_[i]).squaredNorm() / variances_[i] -
              0.5 * dim_ * (kLog2Pi + std::log(variances_[i]));
    }
    return logsumexp(lw);
  }

 private:
  double checked_alpha(const NoiseSchedule& sch, int t) const {
    const double a = sch.alpha(t);
    if (!(a > 0.0)) throw SingularTimeError("alpha_t = 0: posterior undefined");
    return a;
  }

  std::vector<double> component_logs(const NoiseSchedule& sch, int t,
                                     const Vec& x) const {
    const double a = sch.alpha(t), s2n = sch.sigma2(t);
    const double sqrt_a = std::sqrt(a);
    std::vector<double> lw(weights_.size());
    for (int i = 0; i < components(); ++i) {
      const double s2 = a * variances_[i] + s2n;
      lw[i] = log_weights_[i] -
              0.5 * (x - sqrt_a * means_[i]).squaredNorm() / s2 -
              0.5 * dim_ * (kLog2Pi + std::log(s2));
    }
    return lw;
  }

  static double min_eigenvalue(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  std::vector<double> weights_, log_weights_;
  std::vector<Vec> means_;
  std::vector<double> variances_;
  Eigen::Index dim_;
};

}  // namespace difflab

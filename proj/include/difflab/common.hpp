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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace difflab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Divisions by alpha_t clamp at this floor; schedules never reach it but
// adversarial configs might.
inline constexpr double kAlphaFloor = 1e-8;

// Guidance gradients larger than this are rescaled and flagged in the trace.
inline constexpr double kGradNormCap = 1e6;

/// Validation failure on caller-provided data (dimension mismatch etc.).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (schedule length, step counts, schema violations).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested operation is outside the supported capability envelope.
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation undefined at a singular schedule time (alpha_t = 0).
class SingularTimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Not enough data to produce the requested statistic.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite state detected mid-run; carries a diagnostics payload.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& msg, int step_index, double grad_norm)
      : std::runtime_error(msg), step_index(step_index), grad_norm(grad_norm) {}
  int step_index = -1;
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
};

inline double logsumexp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double logsumexp(const std::vector<double>& v) {
  return logsumexp(std::span<const double>(v));
}

/// Softmax of log-values, written in place over the input.
inline void softmax_inplace(std::vector<double>& logv) {
  const double lse = logsumexp(logv);
  for (double& x : logv) x = std::exp(x - lse);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void check_dim(const Vec& x, int d, const char* what) {
  if (x.size() != d) {
    throw InputError(std::string(what) + ": expected length " +
                     std::to_string(d) + ", got " + std::to_string(x.size()));
  }
}

}  // namespace difflab

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
#include <queue>
#include <utility>

#include "difflab/common.hpp"

namespace difflab {

namespace detail {

// Gauss-Kronrod 7-15 abscissae/weights on [-1, 1] (QUADPACK dqk15).
inline constexpr double kGk15X[8] = {
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0};
inline constexpr double kGk15Wk[8] = {
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728};
inline constexpr double kG7W[4] = {0.129484966168870, 0.279705391489277,
                                   0.381830050505119, 0.417959183673469};

template <class F>
std::pair<double, double> gk15(F&& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double kron = 0.0, gauss = 0.0;
  for (int i = 0; i < 8; ++i) {
    double fi;
    if (i == 7) {
      fi = f(c);
      kron += kGk15Wk[7] * fi;
      gauss += kG7W[3] * fi;
    } else {
      const double dx = half * kGk15X[i];
      fi = f(c - dx) + f(c + dx);
      kron += kGk15Wk[i] * fi;
      if (i % 2 == 1) gauss += kG7W[i / 2] * fi;
    }
  }
  kron *= half;
  gauss *= half;
  return {kron, std::abs(kron - gauss)};
}

}  // namespace detail

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  int intervals = 0;
};

/// Adaptive Gauss-Kronrod integration on [a, b]: repeatedly bisects the
/// interval with the largest local error estimate until the summed estimate
/// drops below abs_tol (or the interval budget runs out).
template <class F>
QuadratureResult integrate(F&& f, double a, double b, double abs_tol = 1e-10,
                           int max_intervals = 4000) {
  struct Piece {
    double err, a, b, val;
    bool operator<(const Piece& o) const { return err < o.err; }
  };
  std::priority_queue<Piece> heap;
  auto [v0, e0] = detail::gk15(f, a, b);
  heap.push({e0, a, b, v0});
  double total_err = e0;
  int n = 1;
  while (total_err > abs_tol && n < max_intervals) {
    Piece top = heap.top();
    heap.pop();
    total_err -= top.err;
    const double mid = 0.5 * (top.a + top.b);
    auto [vl, el] = detail::gk15(f, top.a, mid);
    auto [vr, er] = detail::gk15(f, mid, top.b);
    heap.push({el, top.a, mid, vl});
    heap.push({er, mid, top.b, vr});
    total_err += el + er;
    ++n;
  }
  QuadratureResult out;
  out.intervals = n;
  out.error = total_err;
  while (!heap.empty()) {
    out.value += heap.top().val;
    heap.pop();
  }
  return out;
}

}  // namespace difflab

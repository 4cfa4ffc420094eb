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

#include <concepts>

#include "difflab/common.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

/// Closed-form stand-in for a pretrained diffusion backbone: exact score and
/// the posterior-mean map with its Jacobian action.
template <class O>
concept DiffusionOracle = requires(const O& o, const NoiseSchedule& sch, int t,
                                   const Vec& x, const Vec& v) {
  { o.dim() } -> std::convertible_to<int>;
  { o.score(sch, t, x) } -> std::convertible_to<Vec>;
  { o.epsilon(sch, t, x) } -> std::convertible_to<Vec>;
  { o.posterior_mean(sch, t, x) } -> std::convertible_to<Vec>;
  { o.posterior_jacobian_vec(sch, t, x, v) } -> std::convertible_to<Vec>;
};

/// Cost instrumentation for one run.  score_evals counts score-oracle
/// forwards (one per guided DDIM sweep; Jacobian actions reuse the forward,
/// mirroring how backprop shares the network pass).  loss_grad_evals counts
/// guidance-loss gradient evaluations (the MC factor).
struct RunCounters {
  long score_evals = 0;
  long loss_grad_evals = 0;
};

}  // namespace difflab

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

#include <cstdint>
#include <string_view>

#include "difflab/common.hpp"

namespace difflab {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// SplitMix64 finalizer.  Output i of a stream with key k is mix64(k + i*golden),
// which makes the generator counter-based: any draw is a pure function of
// (key, counter), and disjoint keys give statistically independent streams.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

/// Counter-based RNG stream.  Streams are derived, never split by sharing:
/// substream(tag) / substream(index) produce independently keyed streams, so
/// adding a consumer never perturbs draws made elsewhere.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  /// Stream key for one run cell: (master seed, run index, purpose tag).
  static CounterRng keyed(std::uint64_t master, std::uint64_t run_index,
                          std::string_view purpose) {
    return CounterRng(derive_key(derive_key(master, run_index),
                                 detail::fnv1a(purpose)));
  }

  static std::uint64_t derive_key(std::uint64_t key, std::uint64_t salt) {
    return detail::mix64(key ^ detail::mix64(salt + detail::kGolden));
  }

  CounterRng substream(std::string_view purpose) const {
    return CounterRng(derive_key(key_, detail::fnv1a(purpose)));
  }

  CounterRng substream(std::uint64_t index) const {
    return CounterRng(derive_key(key_, index));
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + detail::kGolden * counter_);
  }

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1]; safe under log().
  double uniform_open() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller with a cached spare.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_open()));
    const double theta = 2.0 * kPi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Vec gaussian_vec(Eigen::Index d) {
    Vec v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = gaussian();
    return v;
  }

  /// Index draw from unnormalized nonnegative weights.
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace difflab

// Copyright 2026 The mrt Authors
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

// Counter-based random numbers. Every draw is a pure function of a key
// tuple, so simulations can hand identical environment randomness to
// different algorithm variants (common random numbers) regardless of how
// many draws each variant consumes.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace mrt {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named streams. Values are part of the reproducibility contract; do not
/// renumber.
enum class Stream : std::uint64_t {
  kPopulation = 1,
  kTrace = 2,
  kReward = 3,
  kAction = 4,
  kFixture = 5,
  kEffectSize = 6,
  kService = 7,
  kTest = 99,
};

/// A deterministic key: hashing the same components always gives the same
/// 64-bit value.
class RngKey {
 public:
  constexpr RngKey() = default;
  constexpr explicit RngKey(std::uint64_t seed) : h_(splitmix64(seed)) {}

  constexpr RngKey with(std::uint64_t component) const noexcept {
    RngKey k;
    k.h_ = splitmix64(h_ ^ splitmix64(component + 0x632be59bd9b4e019ULL));
    return k;
  }
  constexpr RngKey with(Stream s) const noexcept {
    return with(static_cast<std::uint64_t>(s));
  }
  constexpr RngKey with(std::initializer_list<std::uint64_t> parts) const noexcept {
    RngKey k = *this;
    for (auto p : parts) k = k.with(p);
    return k;
  }

  constexpr std::uint64_t bits() const noexcept { return h_; }

  /// Uniform in [0, 1) with 53 bits of resolution.
  constexpr double uniform() const noexcept {
    return static_cast<double>(h_ >> 11) * 0x1.0p-53;
  }

  friend constexpr bool operator==(const RngKey&, const RngKey&) = default;

 private:
  std::uint64_t h_ = 0x853c49e6748fea9bULL;
};

/// Sequential generator over a key: draw i is key.with(i). Used where a
/// variable number of draws is needed (fixture and trace generation).
class KeyedStream {
 public:
  explicit KeyedStream(RngKey key) : key_(key) {}

  double uniform() noexcept { return key_.with(counter_++).uniform(); }

  /// Standard normal via Box-Muller (one value per call; the pair's
  /// second value is discarded to keep draws position-independent).
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  RngKey key_;
  std::uint64_t counter_ = 0;
};

}  // namespace mrt

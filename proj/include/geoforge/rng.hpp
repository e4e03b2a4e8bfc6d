// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

namespace geoforge {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so the i-th value never depends on how many
/// values were consumed before it or on the platform's <random>.
///
/// bits(i)    = mix64(key + (i + 1) * 0x9e3779b97f4a7c15)
/// uniform(i) = ((bits(i) >> 11) + 0.5) * 2^-53, strictly inside (0, 1)
/// normal(i)  = Box-Muller over the uniform pair (2k, 2k+1), k = i / 2;
///              even i takes the cosine branch, odd i the sine branch.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  std::uint64_t bits(std::uint64_t counter) const noexcept;
  double uniform(std::uint64_t counter) const noexcept;
  double normal(std::uint64_t index) const noexcept;
  void fill_normal(std::span<double> out) const noexcept;

  // Sequential convenience API over an internal cursor.
  std::uint64_t next_bits() noexcept { return bits(cursor_++); }
  double next_uniform() noexcept { return uniform(cursor_++); }
  double next_uniform(double lo, double hi) noexcept { return lo + (hi - lo) * next_uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) noexcept;
  double next_normal() noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t cursor_ = 0;
};

/// Stream identifiers, so different consumers of one seed never overlap.
namespace streams {
inline constexpr std::uint64_t kNoise = 1;
inline constexpr std::uint64_t kLambda = 2;
inline constexpr std::uint64_t kPriorChoice = 3;
inline constexpr std::uint64_t kSynth = 4;
inline constexpr std::uint64_t kProjection = 5;
inline constexpr std::uint64_t kTraining = 6;
}  // namespace streams

}  // namespace geoforge

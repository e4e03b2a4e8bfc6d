// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <vector>

#include "geoforge/voxel_prior.hpp"

namespace geoforge {

/// D^3 x C real latent, channel-last: value(s, c) = values[s * C + c] with
/// spatial index s = x + D*y + D^2*z.
struct LatentGrid {
  int d = 0;
  int c = 0;
  std::vector<double> values;

  LatentGrid() = default;
  LatentGrid(int d_, int c_) : d(d_), c(c_), values(static_cast<std::size_t>(d_) * d_ * d_ * c_, 0.0) {}

  std::size_t positions() const noexcept { return static_cast<std::size_t>(d) * d * d; }
  double& at(std::size_t s, int ch) noexcept { return values[s * c + ch]; }
  double at(std::size_t s, int ch) const noexcept { return values[s * c + ch]; }
  bool same_shape(const LatentGrid& o) const noexcept { return d == o.d && c == o.c; }

  friend bool operator==(const LatentGrid&, const LatentGrid&) = default;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct LambdaParams {
  double mu = 1.0;
  double sigma = 1.0;
  double inference_lambda = 0.5;

  void validate() const;
};

/// Deterministic stand-in for a learned sparse-structure VAE.
///
/// Each (N/D)^3 block of occupancy bits is projected onto C orthonormal rows
/// and scaled by kScale. The rows span the tensor-product basis
/// {constant, linear ramp}^3 of the block (extended by higher-order discrete
/// polynomials when C > 8), mixed by a fixed seeded rotation. Decoding
/// applies the transpose and thresholds at 0.5, which recovers axis-aligned
/// box boundaries inside a block except at box edges.
class SurrogateCodec {
 public:
  static constexpr double kScale = 0.2;
  static constexpr std::uint64_t kDefaultSeed = 0x5353u;

  SurrogateCodec(int n = 64, int d = 16, int c = 8, std::uint64_t seed = kDefaultSeed);

  int n() const noexcept { return n_; }
  int d() const noexcept { return d_; }
  int c() const noexcept { return c_; }
  int block() const noexcept { return block_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// rows()[k * block^3 + j]: row k, block-local voxel j = lx + b*ly + b^2*lz.
  std::span<const double> rows() const noexcept { return rows_; }

  LatentGrid encode(const VoxelGrid& grid) const;
  VoxelGrid decode(const LatentGrid& latent) const;

 private:
  int n_, d_, c_, block_;
  std::uint64_t seed_;
  std::vector<double> rows_;
};

LatentGrid encode_surrogate(const VoxelGrid& grid, const SurrogateCodec& codec);
VoxelGrid decode_surrogate(const LatentGrid& latent, const SurrogateCodec& codec);

/// out[..., c] = (in[..., c] - mean[c]) / std[c]. Throws kNonPositiveStd.
LatentGrid normalize_latent(const LatentGrid& latent, const NormStats& stats);
/// Inverse affine of normalize_latent.
LatentGrid denormalize_latent(const LatentGrid& latent, const NormStats& stats);

struct StatsReport {
  NormStats stats;
  std::vector<int> clamped_channels;
};

inline constexpr double kMinStd = 1e-6;

/// Streaming per-channel mean and population variance. Each added latent is
/// reduced with a two-pass sum, then merged pairwise, so the corpus never has
/// to be resident at once.
class StatsAccumulator {
 public:
  void add(const LatentGrid& latent);
  std::size_t count() const noexcept { return count_; }
  StatsReport finish() const;

 private:
  int c_ = -1;
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

/// Per-channel mean and population std over every position of every latent.
/// Zero-std channels are clamped to kMinStd and reported.
StatsReport compute_stats_report(std::span<const LatentGrid> corpus);
NormStats compute_stats(std::span<const LatentGrid> corpus);

/// Standard-normal noise with the latent's shape, a pure function of the seed.
LatentGrid noise_latent(int d, int c, std::uint64_t noise_seed);

/// cos(lambda*pi/2) * z_norm + sin(lambda*pi/2) * eps. lambda = 0 returns
/// z_norm and lambda = 1 returns eps, both bit-exact.
LatentGrid cosine_interpolate(const LatentGrid& z_norm, double lambda, std::uint64_t noise_seed);

/// sigmoid(x), x ~ Normal(mu, sigma^2).
double sample_lambda(const LambdaParams& params, std::uint64_t seed);

enum class TrainingPrior { kLod0 = 0, kLod1 = 1, kLod2 = 2, kPureNoise = 3 };

/// Uniform over the three LOD priors and pure noise. Throws kEmptyGrid.
TrainingPrior sample_training_prior(const VoxelGrid& gt, std::uint64_t seed);

/// SSLT: "SSLT" | u32 version=1 | u32 d | u32 c | d^3*c float32 values.
std::vector<std::uint8_t> encode_sslt(const LatentGrid& latent);
LatentGrid decode_sslt(std::span<const std::uint8_t> bytes);
void write_sslt(const LatentGrid& latent, const std::filesystem::path& path);
LatentGrid read_sslt(const std::filesystem::path& path);

nlohmann::json to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace geoforge

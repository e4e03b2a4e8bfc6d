// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "geoforge/latent_ops.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <tuple>

#include "geoforge/error.hpp"
#include "geoforge/io.hpp"
#include "geoforge/rng.hpp"

namespace geoforge {

namespace {

constexpr std::uint32_t kSsltVersion = 1;

/// Orthonormal discrete polynomials of degree 0..b-1 sampled on b points.
std::vector<std::vector<double>> discrete_polynomials(int b) {
  std::vector<std::vector<double>> basis;
  const double center = 0.5 * (b - 1);
  for (int degree = 0; degree < b; ++degree) {
    std::vector<double> v(b);
    for (int i = 0; i < b; ++i) v[i] = std::pow(i - center, degree);
    for (const auto& q : basis) {
      double dot = 0.0;
      for (int i = 0; i < b; ++i) dot += v[i] * q[i];
      for (int i = 0; i < b; ++i) v[i] -= dot * q[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

/// Rows of a c x c orthogonal matrix from Gram-Schmidt on seeded Gaussians.
std::vector<double> seeded_rotation(int c, std::uint64_t seed) {
  const CounterRng rng(seed, streams::kProjection);
  std::vector<double> m(static_cast<std::size_t>(c) * c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal(i);
  for (int r = 0; r < c; ++r) {
    double* row = &m[static_cast<std::size_t>(r) * c];
    for (int q = 0; q < r; ++q) {
      const double* prev = &m[static_cast<std::size_t>(q) * c];
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += row[k] * prev[k];
      for (int k = 0; k < c; ++k) row[k] -= dot * prev[k];
    }
    double norm = 0.0;
    for (int k = 0; k < c; ++k) norm += row[k] * row[k];
    norm = std::sqrt(norm);
    for (int k = 0; k < c; ++k) row[k] /= norm;
  }
  return m;
}

void check_stats(const NormStats& stats, int c) {
  if (stats.mean.size() != static_cast<std::size_t>(c) || stats.std.size() != static_cast<std::size_t>(c)) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("stats have {} / {} channels, latent has {}", stats.mean.size(), stats.std.size(), c));
  }
  for (int k = 0; k < c; ++k) {
    if (!(stats.std[k] > 0.0) || !std::isfinite(stats.std[k])) {
      throw Error(Errc::kNonPositiveStd, fmt::format("channel {} has std {}", k, stats.std[k]));
    }
  }
}

/// Exact endpoint values so lambda = 0 and 1 do not pick up cos(pi/2) != 0.
std::pair<double, double> cos_sin_half_pi(double lambda) {
  if (lambda == 0.0) return {1.0, 0.0};
  if (lambda == 1.0) return {0.0, 1.0};
  const double angle = lambda * std::numbers::pi / 2.0;
  return {std::cos(angle), std::sin(angle)};
}

}  // namespace

void LambdaParams::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(mu)) {
    throw Error(Errc::kInvalidArgument, fmt::format("lambda sampler needs finite mu and sigma > 0 (mu={}, sigma={})", mu, sigma));
  }
  if (!(inference_lambda >= 0.0 && inference_lambda <= 1.0)) {
    throw Error(Errc::kLambdaOutOfRange, fmt::format("inference lambda {} outside [0, 1]", inference_lambda));
  }
}

SurrogateCodec::SurrogateCodec(int n, int d, int c, std::uint64_t seed)
    : n_(n), d_(d), c_(c), block_(0), seed_(seed) {
  if (n <= 0 || d <= 0 || c <= 0) {
    throw Error(Errc::kInvalidArgument, fmt::format("codec dims must be positive (n={}, d={}, c={})", n, d, c));
  }
  if (n % d != 0) {
    throw Error(Errc::kResolutionMismatch, fmt::format("grid resolution {} is not divisible by latent resolution {}", n, d));
  }
  block_ = n / d;
  const int b = block_;
  const int b3 = b * b * b;
  if (c > b3) {
    throw Error(Errc::kInvalidArgument, fmt::format("{} channels exceed the {}-voxel block", c, b3));
  }
  std::vector<std::array<int, 3>> degrees;
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      for (int k = 0; k < b; ++k) degrees.push_back({i, j, k});
  std::stable_sort(degrees.begin(), degrees.end(), [](const auto& a, const auto& o) {
    const int ma = std::max({a[0], a[1], a[2]}), mo = std::max({o[0], o[1], o[2]});
    if (ma != mo) return ma < mo;
    return a[0] + a[1] + a[2] < o[0] + o[1] + o[2];
  });
  const auto poly = discrete_polynomials(b);
  std::vector<double> basis(static_cast<std::size_t>(c) * b3);
  for (int r = 0; r < c; ++r) {
    const auto [dx, dy, dz] = std::tuple(degrees[r][0], degrees[r][1], degrees[r][2]);
    for (int lz = 0; lz < b; ++lz)
      for (int ly = 0; ly < b; ++ly)
        for (int lx = 0; lx < b; ++lx)
          basis[static_cast<std::size_t>(r) * b3 + lx + b * (ly + b * lz)] = poly[dx][lx] * poly[dy][ly] * poly[dz][lz];
  }
  const auto rotation = seeded_rotation(c, seed);
  rows_.assign(basis.size(), 0.0);
  for (int r = 0; r < c; ++r)
    for (int q = 0; q < c; ++q) {
      const double w = rotation[static_cast<std::size_t>(r) * c + q];
      for (int j = 0; j < b3; ++j) rows_[static_cast<std::size_t>(r) * b3 + j] += w * basis[static_cast<std::size_t>(q) * b3 + j];
    }
}

LatentGrid SurrogateCodec::encode(const VoxelGrid& grid) const {
  if (grid.n() != n_) {
    throw Error(Errc::kResolutionMismatch, fmt::format("codec expects {}^3 grids, got {}^3", n_, grid.n()));
  }
  const int b = block_;
  const int b3 = b * b * b;
  LatentGrid latent(d_, c_);
  std::vector<int> set_bits;
  set_bits.reserve(b3);
  for (int bz = 0; bz < d_; ++bz)
    for (int by = 0; by < d_; ++by)
      for (int bx = 0; bx < d_; ++bx) {
        set_bits.clear();
        for (int lz = 0; lz < b; ++lz)
          for (int ly = 0; ly < b; ++ly)
            for (int lx = 0; lx < b; ++lx)
              if (grid.at(bx * b + lx, by * b + ly, bz * b + lz)) set_bits.push_back(lx + b * (ly + b * lz));
        if (set_bits.empty()) continue;
        const std::size_t s = bx + static_cast<std::size_t>(d_) * (by + static_cast<std::size_t>(d_) * bz);
        for (int k = 0; k < c_; ++k) {
          const double* row = &rows_[static_cast<std::size_t>(k) * b3];
          double acc = 0.0;
          for (int j : set_bits) acc += row[j];
          latent.at(s, k) = kScale * acc;
        }
      }
  return latent;
}

VoxelGrid SurrogateCodec::decode(const LatentGrid& latent) const {
  if (latent.d != d_ || latent.c != c_ || latent.values.size() != latent.positions() * static_cast<std::size_t>(latent.c)) {
    throw Error(Errc::kResolutionMismatch,
                fmt::format("codec expects {}^3 x {} latents, got {}^3 x {}", d_, c_, latent.d, latent.c));
  }
  const int b = block_;
  const int b3 = b * b * b;
  VoxelGrid grid(n_);
  std::vector<double> recon(b3);
  for (int bz = 0; bz < d_; ++bz)
    for (int by = 0; by < d_; ++by)
      for (int bx = 0; bx < d_; ++bx) {
        const std::size_t s = bx + static_cast<std::size_t>(d_) * (by + static_cast<std::size_t>(d_) * bz);
        std::fill(recon.begin(), recon.end(), 0.0);
        for (int k = 0; k < c_; ++k) {
          const double coeff = latent.at(s, k) / kScale;
          const double* row = &rows_[static_cast<std::size_t>(k) * b3];
          for (int j = 0; j < b3; ++j) recon[j] += coeff * row[j];
        }
        for (int lz = 0; lz < b; ++lz)
          for (int ly = 0; ly < b; ++ly)
            for (int lx = 0; lx < b; ++lx)
              if (recon[lx + b * (ly + b * lz)] > 0.5) grid.set(bx * b + lx, by * b + ly, bz * b + lz);
      }
  return grid;
}

LatentGrid encode_surrogate(const VoxelGrid& grid, const SurrogateCodec& codec) { return codec.encode(grid); }
VoxelGrid decode_surrogate(const LatentGrid& latent, const SurrogateCodec& codec) { return codec.decode(latent); }

LatentGrid normalize_latent(const LatentGrid& latent, const NormStats& stats) {
  check_stats(stats, latent.c);
  LatentGrid out = latent;
  for (std::size_t s = 0; s < out.positions(); ++s)
    for (int k = 0; k < out.c; ++k) out.at(s, k) = (latent.at(s, k) - stats.mean[k]) / stats.std[k];
  return out;
}

LatentGrid denormalize_latent(const LatentGrid& latent, const NormStats& stats) {
  check_stats(stats, latent.c);
  LatentGrid out = latent;
  for (std::size_t s = 0; s < out.positions(); ++s)
    for (int k = 0; k < out.c; ++k) out.at(s, k) = latent.at(s, k) * stats.std[k] + stats.mean[k];
  return out;
}

void StatsAccumulator::add(const LatentGrid& latent) {
  if (c_ < 0) {
    c_ = latent.c;
    mean_.assign(c_, 0.0);
    m2_.assign(c_, 0.0);
  } else if (latent.c != c_) {
    throw Error(Errc::kShapeMismatch, fmt::format("corpus latents disagree on channel count ({} vs {})", latent.c, c_));
  }
  const std::size_t nb = latent.positions();
  if (nb == 0) return;
  for (int k = 0; k < c_; ++k) {
    double sum = 0.0;
    for (std::size_t s = 0; s < nb; ++s) sum += latent.at(s, k);
    const double mb = sum / static_cast<double>(nb);
    double m2b = 0.0;
    for (std::size_t s = 0; s < nb; ++s) {
      const double dev = latent.at(s, k) - mb;
      m2b += dev * dev;
    }
    const double na = static_cast<double>(count_);
    const double total = na + static_cast<double>(nb);
    const double delta = mb - mean_[k];
    mean_[k] += delta * static_cast<double>(nb) / total;
    m2_[k] += m2b + delta * delta * na * static_cast<double>(nb) / total;
  }
  count_ += nb;
}

StatsReport StatsAccumulator::finish() const {
  if (count_ == 0) throw Error(Errc::kEmptyCorpus, "cannot compute latent statistics of an empty corpus");
  StatsReport report;
  report.stats.mean = mean_;
  report.stats.std.resize(c_);
  for (int k = 0; k < c_; ++k) {
    double sd = std::sqrt(m2_[k] / static_cast<double>(count_));
    if (!(sd > 0.0)) {
      spdlog::warn("latent channel {} has zero variance; std clamped to {}", k, kMinStd);
      report.clamped_channels.push_back(k);
      sd = kMinStd;
    }
    report.stats.std[k] = sd;
  }
  return report;
}

StatsReport compute_stats_report(std::span<const LatentGrid> corpus) {
  if (corpus.empty()) throw Error(Errc::kEmptyCorpus, "cannot compute latent statistics of an empty corpus");
  StatsAccumulator acc;
  for (const auto& l : corpus) acc.add(l);
  return acc.finish();
}

NormStats compute_stats(std::span<const LatentGrid> corpus) { return compute_stats_report(corpus).stats; }

LatentGrid noise_latent(int d, int c, std::uint64_t noise_seed) {
  LatentGrid eps(d, c);
  CounterRng(noise_seed, streams::kNoise).fill_normal(eps.values);
  return eps;
}

LatentGrid cosine_interpolate(const LatentGrid& z_norm, double lambda, std::uint64_t noise_seed) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(Errc::kLambdaOutOfRange, fmt::format("lambda {} outside [0, 1]", lambda));
  }
  if (lambda == 0.0) return z_norm;
  LatentGrid eps = noise_latent(z_norm.d, z_norm.c, noise_seed);
  if (lambda == 1.0) return eps;
  const auto [cw, sw] = cos_sin_half_pi(lambda);
  for (std::size_t i = 0; i < eps.values.size(); ++i) eps.values[i] = cw * z_norm.values[i] + sw * eps.values[i];
  return eps;
}

double sample_lambda(const LambdaParams& params, std::uint64_t seed) {
  params.validate();
  const double x = params.mu + params.sigma * CounterRng(seed, streams::kLambda).normal(0);
  const double lambda = 1.0 / (1.0 + std::exp(-x));
  return std::clamp(lambda, std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
}

TrainingPrior sample_training_prior(const VoxelGrid& gt, std::uint64_t seed) {
  if (gt.n() <= 0 || gt.empty()) throw Error(Errc::kEmptyGrid, "training prior needs a non-empty ground truth");
  CounterRng rng(seed, streams::kPriorChoice);
  return static_cast<TrainingPrior>(rng.next_below(4));
}

std::vector<std::uint8_t> encode_sslt(const LatentGrid& latent) {
  ByteWriter w;
  w.raw(std::string_view("SSLT"));
  w.u32(kSsltVersion);
  w.u32(static_cast<std::uint32_t>(latent.d));
  w.u32(static_cast<std::uint32_t>(latent.c));
  for (double v : latent.values) w.f32(static_cast<float>(v));
  return std::move(w.bytes());
}

LatentGrid decode_sslt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw Error(Errc::kFormatError, "SSLT: truncated header");
  ByteReader r(bytes);
  if (r.raw(4) != "SSLT") throw Error(Errc::kFormatError, "SSLT: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kSsltVersion) throw Error(Errc::kFormatError, fmt::format("SSLT: unsupported version {}", version));
  const std::uint32_t d = r.u32();
  const std::uint32_t c = r.u32();
  if (d == 0 || c == 0 || d > 1024 || c > 4096) throw Error(Errc::kFormatError, fmt::format("SSLT: bad dims {}x{}", d, c));
  const std::size_t count = static_cast<std::size_t>(d) * d * d * c;
  if (r.remaining() != count * 4) {
    throw Error(Errc::kFormatError, fmt::format("SSLT: expected {} value bytes, found {}", count * 4, r.remaining()));
  }
  LatentGrid latent(static_cast<int>(d), static_cast<int>(c));
  for (double& v : latent.values) v = r.f32();
  return latent;
}

void write_sslt(const LatentGrid& latent, const std::filesystem::path& path) { write_bytes(path, encode_sslt(latent)); }

LatentGrid read_sslt(const std::filesystem::path& path) { return decode_sslt(read_bytes(path)); }

nlohmann::json to_json(const NormStats& stats) { return {{"mean", stats.mean}, {"std", stats.std}}; }

NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  return s;
}

}  // namespace geoforge

// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "geoforge/voxel_prior.hpp"

namespace geoforge {

inline constexpr double kDefaultTau = 0.05;
inline constexpr std::string_view kChamferConvention = "symmetric-mean-euclidean-half";

using VoxelPoint = std::array<int, 3>;

/// Occupied voxel coordinates in linear-index order.
std::vector<VoxelPoint> occupied_points(const VoxelGrid& grid);

/// Distance in normalized-frame units between two voxel centers of an n-grid.
inline double voxel_distance(const VoxelPoint& a, const VoxelPoint& b, int n) noexcept;

/// Uniform spatial hash over integer voxel coordinates answering exact
/// nearest-neighbor distance queries.
class SpatialHash {
 public:
  SpatialHash(std::span<const VoxelPoint> points, int n, int cell_size = 4);

  /// Exact distance (normalized units) from `q` to the nearest stored point.
  double nearest_distance(const VoxelPoint& q) const;

 private:
  std::int64_t key(int cx, int cy, int cz) const noexcept;

  std::span<const VoxelPoint> points_;
  int n_;
  int cell_;
  int cells_per_axis_;
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> buckets_;
};

/// Nearest-neighbor distance of every point of `from` to the set `to`.
std::vector<double> nearest_distances(std::span<const VoxelPoint> from, std::span<const VoxelPoint> to, int n);

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b);
double chamfer(const VoxelGrid& a, const VoxelGrid& b);
double f_score(const VoxelGrid& a, const VoxelGrid& b, double tau = kDefaultTau);

struct EvalReport {
  double iou = 0.0;
  double chamfer = 0.0;
  double f_score = 0.0;
  double tau = kDefaultTau;
  int n = 0;
  std::string cd_convention{kChamferConvention};

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport eval_report(const VoxelGrid& pred, const VoxelGrid& gt, double tau = kDefaultTau);

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);

inline double voxel_distance(const VoxelPoint& a, const VoxelPoint& b, int n) noexcept {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz) / n;
}

}  // namespace geoforge

// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "geoforge/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "geoforge/error.hpp"

namespace geoforge {

namespace {

void require_same_n(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.n() != b.n()) {
    throw Error(Errc::kResolutionMismatch,
                fmt::format("grid resolutions differ: {} vs {}", a.n(), b.n()));
  }
}

void require_points(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.empty() || b.empty()) throw Error(Errc::kEmptyGrid, "point-set metric needs non-empty grids");
}

int floor_div(int v, int d) { return v >= 0 ? v / d : -((-v + d - 1) / d); }

double mean(const std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

/// Harmonic mean of the fractions of each direction's distances within tau.
double f_score_from(const std::vector<double>& d_pred, const std::vector<double>& d_gt, double tau) {
  auto fraction_within = [tau](const std::vector<double>& d) {
    const auto hits = std::count_if(d.begin(), d.end(), [tau](double x) { return x <= tau; });
    return static_cast<double>(hits) / static_cast<double>(d.size());
  };
  const double precision = fraction_within(d_pred);
  const double recall = fraction_within(d_gt);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

std::vector<VoxelPoint> occupied_points(const VoxelGrid& grid) {
  std::vector<VoxelPoint> points;
  points.reserve(grid.count());
  const int n = grid.n();
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (grid.at(x, y, z)) points.push_back({x, y, z});
  return points;
}

SpatialHash::SpatialHash(std::span<const VoxelPoint> points, int n, int cell_size)
    : points_(points), n_(n), cell_(std::max(1, cell_size)), cells_per_axis_((n + cell_ - 1) / cell_ + 1) {
  buckets_.reserve(points.size() / 4 + 1);
  for (std::uint32_t i = 0; i < points.size(); ++i) {
    const VoxelPoint& p = points[i];
    buckets_[key(floor_div(p[0], cell_), floor_div(p[1], cell_), floor_div(p[2], cell_))].push_back(i);
  }
}

std::int64_t SpatialHash::key(int cx, int cy, int cz) const noexcept {
  const std::int64_t m = cells_per_axis_ + 2;
  return (static_cast<std::int64_t>(cx) + 1) + m * ((static_cast<std::int64_t>(cy) + 1) + m * (static_cast<std::int64_t>(cz) + 1));
}

double SpatialHash::nearest_distance(const VoxelPoint& q) const {
  if (points_.empty()) return std::numeric_limits<double>::infinity();
  const int qx = floor_div(q[0], cell_);
  const int qy = floor_div(q[1], cell_);
  const int qz = floor_div(q[2], cell_);
  double best = std::numeric_limits<double>::infinity();
  const int max_ring = cells_per_axis_ + 1;
  for (int ring = 0; ring <= max_ring; ++ring) {
    // Any point in shell `ring` is at least (ring - 1) * cell voxels away.
    if (ring >= 1 && static_cast<double>((ring - 1) * cell_) / n_ > best) break;
    for (int dz = -ring; dz <= ring; ++dz)
      for (int dy = -ring; dy <= ring; ++dy)
        for (int dx = -ring; dx <= ring; ++dx) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
          const int cx = qx + dx, cy = qy + dy, cz = qz + dz;
          if (cx < 0 || cy < 0 || cz < 0 || cx >= cells_per_axis_ || cy >= cells_per_axis_ ||
              cz >= cells_per_axis_) {
            continue;
          }
          auto gap = [&](int c, int v) { return std::max({0, c * cell_ - v, v - (c * cell_ + cell_ - 1)}); };
          const double gx = gap(cx, q[0]), gy = gap(cy, q[1]), gz = gap(cz, q[2]);
          if (std::sqrt(gx * gx + gy * gy + gz * gz) / n_ >= best) continue;
          const auto it = buckets_.find(key(cx, cy, cz));
          if (it == buckets_.end()) continue;
          for (std::uint32_t idx : it->second) best = std::min(best, voxel_distance(q, points_[idx], n_));
        }
  }
  return best;
}

std::vector<double> nearest_distances(std::span<const VoxelPoint> from, std::span<const VoxelPoint> to, int n) {
  const SpatialHash index(to, n);
  std::vector<double> out;
  out.reserve(from.size());
  for (const VoxelPoint& p : from) out.push_back(index.nearest_distance(p));
  return out;
}

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b) {
  require_same_n(a, b);
  std::size_t inter = 0, uni = 0;
  const auto wa = a.words();
  const auto wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i) {
    inter += static_cast<std::size_t>(std::popcount(wa[i] & wb[i]));
    uni += static_cast<std::size_t>(std::popcount(wa[i] | wb[i]));
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double chamfer(const VoxelGrid& a, const VoxelGrid& b) {
  require_same_n(a, b);
  require_points(a, b);
  const auto pa = occupied_points(a);
  const auto pb = occupied_points(b);
  return 0.5 * (mean(nearest_distances(pa, pb, a.n())) + mean(nearest_distances(pb, pa, a.n())));
}

double f_score(const VoxelGrid& a, const VoxelGrid& b, double tau) {
  require_same_n(a, b);
  require_points(a, b);
  if (!(tau > 0.0)) throw Error(Errc::kInvalidArgument, fmt::format("tau must be > 0, got {}", tau));
  const auto pa = occupied_points(a);
  const auto pb = occupied_points(b);
  return f_score_from(nearest_distances(pa, pb, a.n()), nearest_distances(pb, pa, a.n()), tau);
}

EvalReport eval_report(const VoxelGrid& pred, const VoxelGrid& gt, double tau) {
  EvalReport r;
  r.iou = voxel_iou(pred, gt);
  require_same_n(pred, gt);
  require_points(pred, gt);
  if (!(tau > 0.0)) throw Error(Errc::kInvalidArgument, fmt::format("tau must be > 0, got {}", tau));
  const auto pp = occupied_points(pred);
  const auto pg = occupied_points(gt);
  const auto d_pred = nearest_distances(pp, pg, gt.n());
  const auto d_gt = nearest_distances(pg, pp, gt.n());
  r.chamfer = 0.5 * (mean(d_pred) + mean(d_gt));
  r.f_score = f_score_from(d_pred, d_gt, tau);
  r.tau = tau;
  r.n = gt.n();
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"iou", r.iou},  {"chamfer", r.chamfer}, {"f_score", r.f_score},
          {"tau", r.tau},  {"n", r.n},             {"cd_convention", r.cd_convention}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.iou = j.at("iou").get<double>();
  r.chamfer = j.at("chamfer").get<double>();
  r.f_score = j.at("f_score").get<double>();
  r.tau = j.at("tau").get<double>();
  r.n = j.at("n").get<int>();
  r.cd_convention = j.at("cd_convention").get<std::string>();
  return r;
}

}  // namespace geoforge

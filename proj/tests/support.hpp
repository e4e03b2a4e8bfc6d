// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

// Independent oracles and fixtures shared by the test binaries. Nothing here
// calls into the code paths it is used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <array>
#include <unistd.h>
#include <string>
#include <vector>

#include "geoforge/geo_ingest.hpp"
#include "geoforge/voxel_prior.hpp"

namespace geoforge::testing {

inline std::filesystem::path fixture_dir() { return GEOFORGE_FIXTURE_DIR; }

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("geoforge_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline VoxelGrid random_grid(int n, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(density);
  VoxelGrid g(n);
  for (std::size_t i = 0; i < g.size(); ++i) g.set(i, bit(rng));
  return g;
}

/// Box [x0, x1) x [y0, y1) x [z0, z1).
inline VoxelGrid box_grid(int n, int x0, int x1, int y0, int y1, int z0, int z1) {
  VoxelGrid g(n);
  for (int z = z0; z < z1; ++z)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) g.set(x, y, z);
  return g;
}

inline std::size_t count_set(const VoxelGrid& g) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < g.size(); ++i) k += g.test(i) ? 1 : 0;
  return k;
}

inline std::vector<std::array<double, 3>> centers(const VoxelGrid& g) {
  std::vector<std::array<double, 3>> out;
  const int n = g.n();
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (g.at(x, y, z)) out.push_back({(x + 0.5) / n, (y + 0.5) / n, (z + 0.5) / n});
  return out;
}

/// O(|P||Q|) nearest distances.
inline std::vector<double> brute_nearest(const std::vector<std::array<double, 3>>& from,
                                         const std::vector<std::array<double, 3>>& to) {
  std::vector<double> out;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    out.push_back(best);
  }
  return out;
}

inline double brute_chamfer(const VoxelGrid& a, const VoxelGrid& b) {
  const auto pa = centers(a), pb = centers(b);
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
  };
  return 0.5 * (mean(brute_nearest(pa, pb)) + mean(brute_nearest(pb, pa)));
}

inline double brute_iou(const VoxelGrid& a, const VoxelGrid& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a.test(i) && b.test(i)) ? 1 : 0;
    uni += (a.test(i) || b.test(i)) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

/// Textbook crossing-number test, written independently of src/polygon.cpp.
inline bool crossing_inside(double px, double py, const std::vector<std::array<double, 2>>& ring) {
  bool inside = false;
  const std::size_t m = ring.size();
  for (std::size_t i = 0, j = m - 1; i < m; j = i++) {
    const double xi = ring[i][0], yi = ring[i][1], xj = ring[j][0], yj = ring[j][1];
    if (((yi > py) != (yj > py)) && (px < (xj - xi) * (py - yi) / (yj - yi) + xi)) inside = !inside;
  }
  return inside;
}

/// Closed rectangle ring in (lat, lon).
inline std::vector<LatLon> rect_ring(double lat0, double lon0, double lat1, double lon1) {
  return {{lat0, lon0}, {lat0, lon1}, {lat1, lon1}, {lat1, lon0}, {lat0, lon0}};
}

inline GeoFootprint rect_footprint(double lat0, double lon0, double lat1, double lon1, double height) {
  GeoFootprint fp;
  fp.outer = rect_ring(lat0, lon0, lat1, lon1);
  fp.height_m = height;
  fp.source_id = "way/1";
  return fp;
}

/// True when every occupied voxel is reachable from the first one through
/// face neighbours.
inline bool six_connected(const VoxelGrid& g) {
  const int n = g.n();
  std::vector<char> seen(g.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t total = 0, start = g.size();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.test(i)) {
      ++total;
      if (start == g.size()) start = i;
    }
  }
  if (total == 0) return false;
  stack.push_back(start);
  seen[start] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    ++reached;
    const int x = static_cast<int>(i % n), y = static_cast<int>((i / n) % n), z = static_cast<int>(i / n / n);
    const int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const auto& o : d) {
      const int a = x + o[0], b = y + o[1], c = z + o[2];
      if (a < 0 || b < 0 || c < 0 || a >= n || b >= n || c >= n) continue;
      const std::size_t j = g.index(a, b, c);
      if (g.test(j) && !seen[j]) {
        seen[j] = 1;
        stack.push_back(j);
      }
    }
  }
  return reached == total;
}

}  // namespace geoforge::testing

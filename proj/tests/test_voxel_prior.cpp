// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "geoforge/error.hpp"
#include "geoforge/io.hpp"
#include "geoforge/voxel_prior.hpp"
#include "support.hpp"

namespace geoforge {
namespace {

using testing::box_grid;
using testing::TempDir;

template <typename Fn>
Errc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no geoforge::Error thrown";
  return Errc::kIoError;
}

constexpr LodLevel kLevels[] = {LodLevel::kLod0, LodLevel::kLod1, LodLevel::kLod2};

// Per-voxel-center extrusion oracle: projects, normalizes and tests every
// center against the crossing-number rule.
VoxelGrid rasterize_oracle(const GeoFootprint& fp, int n) {
  double lat0 = 0, lon0 = 0;
  const std::size_t m = fp.outer.size() - 1;
  for (std::size_t i = 0; i < m; ++i) lat0 += fp.outer[i].lat, lon0 += fp.outer[i].lon;
  lat0 /= m;
  lon0 /= m;
  const double ky = 6371008.8 * std::numbers::pi / 180.0;
  const double kx = ky * std::cos(lat0 * std::numbers::pi / 180.0);
  auto project = [&](const std::vector<LatLon>& ring) {
    std::vector<std::array<double, 2>> out;
    for (const auto& p : ring) out.push_back({(p.lon - lon0) * kx, (p.lat - lat0) * ky});
    return out;
  };
  auto outer = project(fp.outer);
  std::vector<std::vector<std::array<double, 2>>> holes;
  for (const auto& h : fp.holes) holes.push_back(project(h));
  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  for (const auto& p : outer) {
    x_lo = std::min(x_lo, p[0]), x_hi = std::max(x_hi, p[0]);
    y_lo = std::min(y_lo, p[1]), y_hi = std::max(y_hi, p[1]);
  }
  const double extent = std::max(x_hi - x_lo, y_hi - y_lo);
  const double cx = 0.5 * (x_lo + x_hi), cy = 0.5 * (y_lo + y_hi);
  const double top = std::min(0.5, -0.5 + fp.height_m / extent);
  const double bottom = -0.5 + fp.min_height_m / extent;
  auto norm = [&](std::vector<std::array<double, 2>>& ring) {
    for (auto& p : ring) p = {(p[0] - cx) / extent, (p[1] - cy) / extent};
  };
  norm(outer);
  for (auto& h : holes) norm(h);
  VoxelGrid g(n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double px = VoxelGrid::center(n, x), py = VoxelGrid::center(n, y);
      bool inside = testing::crossing_inside(px, py, outer);
      for (const auto& h : holes)
        if (testing::crossing_inside(px, py, h)) inside = !inside;
      if (!inside) continue;
      for (int z = 0; z < n; ++z) {
        const double zc = VoxelGrid::center(n, z);
        if (zc >= bottom && zc <= top) g.set(x, y, z);
      }
    }
  return g;
}

// Exhaustive two-band construction over every split height.
VoxelGrid lod2_oracle(const VoxelGrid& gt, int* split_out) {
  const int n = gt.n();
  auto band = [&](int z_lo, int z_hi, VoxelGrid& out) {
    std::vector<char> cross(static_cast<std::size_t>(n) * n, 0);
    int first = -1, last = -1;
    for (int z = z_lo; z < z_hi; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (gt.at(x, y, z)) {
            cross[x + n * y] = 1;
            if (first < 0) first = z;
            last = z;
          }
    if (first < 0) return;
    for (int z = first; z <= last; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (cross[x + n * y]) out.set(x, y, z);
  };
  VoxelGrid best;
  std::size_t best_volume = SIZE_MAX;
  for (int h = 1; h < n; ++h) {
    VoxelGrid g(n);
    band(0, h, g);
    band(h, n, g);
    if (g.count() < best_volume) {
      best_volume = g.count();
      best = g;
      *split_out = h;
    }
  }
  return best;
}

/// Wide base over z in [0, k), narrow tower over z in [k, m).
VoxelGrid tower_on_base(int n, int k, int m) {
  VoxelGrid g = box_grid(n, 2, n - 2, 2, n - 2, 0, k);
  for (int z = k; z < m; ++z)
    for (int y = n / 2 - 2; y < n / 2 + 2; ++y)
      for (int x = n / 2 - 2; x < n / 2 + 2; ++x) g.set(x, y, z);
  return g;
}

TEST(Rasterize, SquareWithFullHeightIsSolidCuboid) {
  // 20 m square at the equator; height fills the frame.
  const double d = 20.0 / (6371008.8 * std::numbers::pi / 180.0);
  const GeoFootprint fp = testing::rect_footprint(0.0, 0.0, d, d, 100.0);
  const VoxelGrid g = rasterize_footprint(fp, 32);
  EXPECT_EQ(g.count(), g.size());
}

TEST(Rasterize, HalfHeightFillsLowerHalf) {
  const double d = 20.0 / (6371008.8 * std::numbers::pi / 180.0);
  const VoxelGrid g = rasterize_footprint(testing::rect_footprint(0.0, 0.0, d, d, 10.0), 16);
  for (int z = 0; z < 16; ++z) EXPECT_EQ(g.at(5, 5, z), z < 8) << z;
}

TEST(Rasterize, RingFootprintMatchesOracle) {
  GeoFootprint fp = testing::rect_footprint(47.0, 8.0, 47.0003, 8.0004, 12.0);
  fp.holes = {testing::rect_ring(47.0001, 8.00013, 47.0002, 8.00031)};
  for (int n : {8, 16, 32}) {
    const VoxelGrid g = rasterize_footprint(fp, n);
    EXPECT_EQ(g, rasterize_oracle(fp, n)) << n;
    EXPECT_LT(g.count(), lod_prior(g, LodLevel::kLod0).count());
  }
}

TEST(Rasterize, RandomPolygonsMatchOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0), height(3.0, 60.0);
  for (int trial = 0; trial < 60; ++trial) {
    GeoFootprint fp;
    const int m = 3 + trial % 6;
    for (int k = 0; k < m; ++k) {
      // Star-shaped around the origin so the ring never self-intersects badly.
      const double angle = 2 * std::numbers::pi * (k + 0.3 * u(rng)) / m;
      const double r = 0.6 + 0.4 * u(rng);
      fp.outer.push_back({45.0 + 2e-4 * r * std::sin(angle), 7.0 + 2e-4 * r * std::cos(angle)});
    }
    fp.outer.push_back(fp.outer.front());
    fp.height_m = height(rng);
    fp.min_height_m = trial % 3 == 0 ? 2.0 : 0.0;
    const int n = trial % 2 ? 16 : 32;
    ASSERT_EQ(rasterize_footprint(fp, n), rasterize_oracle(fp, n)) << trial;
  }
}

TEST(Rasterize, ZeroAreaIsDegenerate) {
  GeoFootprint line;
  line.outer = {{1.0, 1.0}, {1.0, 1.001}, {1.0, 1.002}, {1.0, 1.0}};
  EXPECT_EQ(code_of([&] { rasterize_footprint(line, 16); }), Errc::kDegenerateFootprint);
  GeoFootprint point;
  point.outer = {{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}};
  EXPECT_EQ(code_of([&] { rasterize_footprint(point, 16); }), Errc::kDegenerateFootprint);
  EXPECT_EQ(code_of([] { rasterize_footprint(testing::rect_footprint(0, 0, 1e-4, 1e-4, 5), 4); }),
            Errc::kInvalidArgument);
}

TEST(LodPrior, CuboidIsFixedPointOfEveryLevel) {
  const VoxelGrid g = box_grid(16, 3, 12, 4, 10, 0, 7);
  for (LodLevel l : kLevels) EXPECT_EQ(lod_prior(g, l), g) << to_string(l);
}

TEST(LodPrior, TowerOnBaseSplitsAtBaseTop) {
  const int n = 24, k = 6, m = 18;
  const VoxelGrid g = tower_on_base(n, k, m);
  int oracle_split = 0;
  const VoxelGrid oracle = lod2_oracle(g, &oracle_split);
  EXPECT_EQ(oracle_split, k);
  EXPECT_EQ(lod2_split_height(g), k);
  EXPECT_EQ(lod_prior(g, LodLevel::kLod2), g);
  EXPECT_EQ(oracle, g);
  // LOD1 is the base footprint extruded over the whole occupied range.
  EXPECT_EQ(lod_prior(g, LodLevel::kLod1), box_grid(n, 2, n - 2, 2, n - 2, 0, m));
}

TEST(LodPrior, Lod2MatchesExhaustiveOracleOnSynthCorpus) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const VoxelGrid g = synth_shape(seed, 24);
    int split = 0;
    const VoxelGrid oracle = lod2_oracle(g, &split);
    ASSERT_EQ(lod_prior(g, LodLevel::kLod2), oracle) << seed;
    ASSERT_EQ(lod2_split_height(g), split) << seed;
  }
}

TEST(LodPrior, Lod1IsUnionProjection) {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const VoxelGrid g = synth_shape(seed, 20);
    const int n = g.n();
    std::set<std::pair<int, int>> columns;
    int z_lo = n, z_hi = -1;
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (g.at(x, y, z)) columns.insert({x, y}), z_lo = std::min(z_lo, z), z_hi = std::max(z_hi, z);
    VoxelGrid expect(n);
    for (const auto& [x, y] : columns)
      for (int z = z_lo; z <= z_hi; ++z) expect.set(x, y, z);
    ASSERT_EQ(lod_prior(g, LodLevel::kLod1), expect) << seed;
  }
}

TEST(LodPrior, ContainmentChainAndIdempotence) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const VoxelGrid g = synth_shape(seed, 32);
    const VoxelGrid l0 = lod_prior(g, LodLevel::kLod0);
    const VoxelGrid l1 = lod_prior(g, LodLevel::kLod1);
    const VoxelGrid l2 = lod_prior(g, LodLevel::kLod2);
    ASSERT_TRUE(is_subset(g, l2)) << seed;
    ASSERT_TRUE(is_subset(l2, l1)) << seed;
    ASSERT_TRUE(is_subset(l1, l0)) << seed;
    ASSERT_GE(l0.count(), l1.count());
    ASSERT_GE(l1.count(), l2.count());
    ASSERT_GE(l2.count(), g.count());
    ASSERT_EQ(lod_prior(l0, LodLevel::kLod0), l0);
    ASSERT_EQ(lod_prior(l1, LodLevel::kLod1), l1);
    ASSERT_EQ(lod_prior(l2, LodLevel::kLod2), l2);
  }
}

TEST(LodPrior, EmptyGridRejected) {
  for (LodLevel l : kLevels) EXPECT_EQ(code_of([&] { lod_prior(VoxelGrid(16), l); }), Errc::kEmptyGrid);
}

TEST(Synth, DeterministicInSeed) {
  EXPECT_EQ(synth_shape(1234, 32), synth_shape(1234, 32));
  EXPECT_EQ(to_json(synth_params(1234, 32)), to_json(synth_params(1234, 32)));
  EXPECT_EQ(synth_from_params(synth_params(77, 32)), synth_shape(77, 32));
}

TEST(Synth, ThousandSeedsNonEmptyAndSixConnected) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const VoxelGrid g = synth_shape(seed, 32);
    ASSERT_FALSE(g.empty()) << seed;
    ASSERT_TRUE(testing::six_connected(g)) << seed;
  }
}

TEST(Synth, RingFamilyProjectionDiffersFromBox) {
  int rings = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    if (synth_params(seed, 32).family != ShapeFamily::kRing) continue;
    ++rings;
    const VoxelGrid g = synth_shape(seed, 32);
    ASSERT_NE(lod_prior(g, LodLevel::kLod1), lod_prior(g, LodLevel::kLod0)) << seed;
  }
  EXPECT_GT(rings, 0);
}

TEST(Synth, AllFamiliesAppear) {
  std::set<ShapeFamily> seen;
  for (std::uint64_t seed = 0; seed < 100; ++seed) seen.insert(synth_params(seed, 32).family);
  EXPECT_EQ(seen.size(), 3u);
}

TEST(Ssvx, RandomGridRoundTrip) {
  TempDir dir("ssvx");
  std::mt19937_64 rng(5);
  const VoxelGrid g = testing::random_grid(64, 0.3, rng);
  write_ssvx(g, dir.path() / "g.ssvx");
  EXPECT_EQ(read_ssvx(dir.path() / "g.ssvx"), g);
}

TEST(Ssvx, LayoutIsLittleEndianLsbFirst) {
  VoxelGrid g(8);
  g.set(0, 0, 0);
  g.set(1, 1, 0);  // linear 9 -> byte 1, bit 1
  g.set(7, 7, 7);  // linear 511 -> byte 63, bit 7
  const auto bytes = encode_ssvx(g);
  ASSERT_EQ(bytes.size(), 16u + 64u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SSVX");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 8);
  EXPECT_EQ(bytes[16], 0x01);
  EXPECT_EQ(bytes[17], 0x02);
  EXPECT_EQ(bytes[16 + 63], 0x80);
}

TEST(Ssvx, EmptyGridFileSize) {
  TempDir dir("ssvx");
  write_ssvx(VoxelGrid(64), dir.path() / "e.ssvx");
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "e.ssvx"), 16u + 64u * 64u * 64u / 8u);
}

TEST(Ssvx, MalformedInputsAreFormatErrors) {
  std::mt19937_64 rng(2);
  auto bytes = encode_ssvx(testing::random_grid(16, 0.5, rng));
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 1);
  EXPECT_EQ(code_of([&] { decode_ssvx(truncated); }), Errc::kFormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_ssvx(bad_magic); }), Errc::kFormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_EQ(code_of([&] { decode_ssvx(bad_version); }), Errc::kFormatError);
  EXPECT_EQ(code_of([] { decode_ssvx(std::vector<std::uint8_t>(5, 0)); }), Errc::kFormatError);
  TempDir dir("ssvx");
  write_bytes(dir.path() / "t.ssvx", truncated);
  EXPECT_EQ(code_of([&] { read_ssvx(dir.path() / "t.ssvx"); }), Errc::kFormatError);
}

}  // namespace
}  // namespace geoforge

// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "geoforge/error.hpp"
#include "geoforge/metrics.hpp"
#include "support.hpp"

namespace geoforge {
namespace {

using testing::box_grid;
using testing::random_grid;

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

VoxelGrid single(int n, int x, int y, int z) {
  VoxelGrid g(n);
  g.set(x, y, z);
  return g;
}

// F-score from brute-force nearest distances.
double brute_f(const VoxelGrid& a, const VoxelGrid& b, double tau) {
  const auto pa = testing::centers(a), pb = testing::centers(b);
  auto frac = [tau](const std::vector<double>& d) {
    double hit = 0;
    for (double v : d) hit += v <= tau ? 1 : 0;
    return hit / d.size();
  };
  const double p = frac(testing::brute_nearest(pa, pb)), r = frac(testing::brute_nearest(pb, pa));
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

/// Random pair that shares some structure, so distances are not all tiny.
std::pair<VoxelGrid, VoxelGrid> random_pair(int n, std::mt19937_64& rng) {
  const double da = std::uniform_real_distribution<double>(0.01, 0.4)(rng);
  const double db = std::uniform_real_distribution<double>(0.01, 0.4)(rng);
  VoxelGrid a = random_grid(n, da, rng), b = random_grid(n, db, rng);
  if (a.empty()) a.set(0);
  if (b.empty()) b.set(b.size() - 1);
  return {a, b};
}

TEST(Iou, HandCountedExamples) {
  const VoxelGrid cube = box_grid(16, 2, 4, 2, 4, 2, 4);
  const VoxelGrid shifted = box_grid(16, 3, 5, 2, 4, 2, 4);
  EXPECT_DOUBLE_EQ(voxel_iou(cube, shifted), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(voxel_iou(cube, cube), 1.0);
  EXPECT_DOUBLE_EQ(voxel_iou(cube, box_grid(16, 10, 12, 2, 4, 2, 4)), 0.0);
  EXPECT_DOUBLE_EQ(voxel_iou(VoxelGrid(16), VoxelGrid(16)), 1.0);
  EXPECT_EQ(code_of([] { voxel_iou(VoxelGrid(16), VoxelGrid(8)); }), Errc::kResolutionMismatch);
}

TEST(Chamfer, HandComputedExamples) {
  EXPECT_DOUBLE_EQ(chamfer(single(64, 10, 10, 10), single(64, 11, 10, 10)), 1.0 / 64.0);
  const VoxelGrid g = box_grid(16, 1, 5, 2, 9, 0, 3);
  EXPECT_EQ(chamfer(g, g), 0.0);
  // Two points vs one: distances {0, 1/16} from the pair, {0} back.
  VoxelGrid pair = single(16, 0, 0, 0);
  pair.set(1, 0, 0);
  EXPECT_DOUBLE_EQ(chamfer(pair, single(16, 0, 0, 0)), 0.5 * (0.5 / 16.0 + 0.0));
  EXPECT_EQ(code_of([] { chamfer(VoxelGrid(16), single(16, 0, 0, 0)); }), Errc::kEmptyGrid);
  EXPECT_EQ(code_of([] { chamfer(single(8, 0, 0, 0), single(16, 0, 0, 0)); }), Errc::kResolutionMismatch);
}

TEST(Chamfer, AcceleratedEqualsBruteForceOn16Cubed) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto [a, b] = random_pair(16, rng);
    ASSERT_NEAR(chamfer(a, b), testing::brute_chamfer(a, b), 1e-9) << i;
  }
}

TEST(Chamfer, NearestNeighborExactUpTo32Cubed) {
  std::mt19937_64 rng(2);
  for (int n : {8, 16, 32}) {
    for (int i = 0; i < 10; ++i) {
      const auto [a, b] = random_pair(n, rng);
      const auto pa = occupied_points(a), pb = occupied_points(b);
      const auto fast = nearest_distances(pa, pb, n);
      const auto slow = testing::brute_nearest(testing::centers(a), testing::centers(b));
      ASSERT_EQ(fast.size(), slow.size());
      for (std::size_t k = 0; k < fast.size(); ++k) ASSERT_NEAR(fast[k], slow[k], 1e-12) << n;
    }
  }
}

TEST(Chamfer, SparseFarApartSetsStayExact) {
  for (int cell : {1, 2, 4, 8}) {
    const VoxelGrid a = single(32, 0, 0, 0), b = single(32, 31, 31, 31);
    const std::vector<VoxelPoint> pa = occupied_points(a), pb = occupied_points(b);
    const SpatialHash hash(pb, 32, cell);
    EXPECT_DOUBLE_EQ(hash.nearest_distance(pa[0]), voxel_distance(pa[0], pb[0], 32)) << cell;
  }
}

TEST(FScore, HandComputedExamples) {
  const VoxelGrid a = single(64, 10, 10, 10), b = single(64, 11, 10, 10);
  EXPECT_DOUBLE_EQ(f_score(a, b, 0.05), 1.0);
  EXPECT_DOUBLE_EQ(f_score(a, b, 0.01), 0.0);
  EXPECT_DOUBLE_EQ(f_score(a, a, 1e-9), 1.0);
  EXPECT_EQ(code_of([&] { f_score(a, VoxelGrid(64), 0.05); }), Errc::kEmptyGrid);
  EXPECT_EQ(code_of([&] { f_score(a, b, 0.0); }), Errc::kInvalidArgument);
}

TEST(FScore, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 30; ++i) {
    const auto [a, b] = random_pair(16, rng);
    for (double tau : {0.02, 0.05, 0.1}) ASSERT_NEAR(f_score(a, b, tau), brute_f(a, b, tau), 1e-12);
  }
}

TEST(Properties, SymmetryAndIdentityOverRandomPairs) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const int n = 8 + 4 * static_cast<int>(rng() % 3);
    const auto [a, b] = random_pair(n, rng);
    ASSERT_EQ(voxel_iou(a, b), voxel_iou(b, a));
    ASSERT_EQ(chamfer(a, b), chamfer(b, a));
    ASSERT_EQ(f_score(a, b, 0.1), f_score(b, a, 0.1));
    ASSERT_EQ(chamfer(a, b) == 0.0, a == b);
    ASSERT_EQ(voxel_iou(a, b) == 1.0, a == b);
    ASSERT_EQ(chamfer(a, a), 0.0);
    ASSERT_EQ(voxel_iou(a, a), 1.0);
  }
}

TEST(Properties, FScoreMonotoneInTau) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto [a, b] = random_pair(12, rng);
    double prev = 0.0;
    for (double tau = 0.01; tau < 0.5; tau += 0.02) {
      const double f = f_score(a, b, tau);
      ASSERT_GE(f, prev);
      prev = f;
    }
  }
}

TEST(Report, IdenticalInputs) {
  const VoxelGrid g = synth_shape(3, 32);
  const EvalReport r = eval_report(g, g, 0.05);
  EXPECT_EQ(r.iou, 1.0);
  EXPECT_EQ(r.chamfer, 0.0);
  EXPECT_EQ(r.f_score, 1.0);
  EXPECT_EQ(r.n, 32);
  EXPECT_EQ(r.cd_convention, "symmetric-mean-euclidean-half");
}

TEST(Report, Lod0IouIsContainmentRatio) {
  VoxelGrid g = box_grid(24, 2, 22, 2, 22, 0, 6);
  for (int z = 6; z < 18; ++z)
    for (int y = 10; y < 14; ++y)
      for (int x = 10; x < 14; ++x) g.set(x, y, z);
  const VoxelGrid l0 = lod_prior(g, LodLevel::kLod0);
  EXPECT_EQ(eval_report(l0, g).iou, static_cast<double>(testing::count_set(g)) / testing::count_set(l0));
}

TEST(Report, AgreesWithStandaloneMetrics) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20; ++i) {
    const auto [a, b] = random_pair(16, rng);
    const EvalReport r = eval_report(a, b, 0.07);
    EXPECT_EQ(r.iou, voxel_iou(a, b));
    EXPECT_NEAR(r.chamfer, chamfer(a, b), 1e-15);
    EXPECT_EQ(r.f_score, f_score(a, b, 0.07));
    EXPECT_EQ(r.tau, 0.07);
  }
}

TEST(Report, JsonRoundTrip) {
  std::mt19937_64 rng(7);
  const auto [a, b] = random_pair(16, rng);
  const EvalReport r = eval_report(a, b);
  const auto j = to_json(r);
  EXPECT_EQ(eval_report_from_json(j), r);
  for (const char* k : {"iou", "chamfer", "f_score", "tau", "n", "cd_convention"}) EXPECT_TRUE(j.contains(k)) << k;
}

}  // namespace
}  // namespace geoforge

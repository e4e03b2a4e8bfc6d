// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "geoforge/geo_ingest.hpp"

namespace geoforge {

/// N^3 binary occupancy. Linear index = x + N*y + N^2*z, z is height.
/// Frame: voxel i along any axis has its center at -0.5 + (i + 0.5) / N.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(int n);

  int n() const noexcept { return n_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(n_) * n_ * n_; }

  std::size_t index(int x, int y, int z) const noexcept {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(n_) * (y + static_cast<std::size_t>(n_) * z);
  }
  bool test(std::size_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1U; }
  bool at(int x, int y, int z) const noexcept { return test(index(x, y, z)); }
  void set(std::size_t i, bool value = true) noexcept {
    const std::uint64_t mask = std::uint64_t{1} << (i & 63);
    words_[i >> 6] = value ? (words_[i >> 6] | mask) : (words_[i >> 6] & ~mask);
  }
  void set(int x, int y, int z, bool value = true) noexcept { set(index(x, y, z), value); }

  std::size_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> words() noexcept { return words_; }

  static double center(int n, int i) noexcept { return -0.5 + (i + 0.5) / n; }

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  int n_ = 0;
  std::vector<std::uint64_t> words_;
};

/// True when every occupied voxel of `inner` is occupied in `outer`.
bool is_subset(const VoxelGrid& inner, const VoxelGrid& outer);

enum class LodLevel { kLod0 = 0, kLod1 = 1, kLod2 = 2 };
std::string to_string(LodLevel level);

/// Extrudes a footprint into the normalized frame: equirectangular about the
/// ring's vertex centroid, horizontal bounding square scaled to [-0.5, 0.5],
/// ground at z = -0.5, true height-to-width ratio clamped at the ceiling.
/// Throws Error(kDegenerateFootprint) for zero-area outlines.
VoxelGrid rasterize_footprint(const GeoFootprint& footprint, int n);

/// Coarse priors. Throws Error(kEmptyGrid) for an empty input.
VoxelGrid lod_prior(const VoxelGrid& gt, LodLevel level);

/// Split height chosen by the two-band construction (lowest z of the upper band).
int lod2_split_height(const VoxelGrid& gt);

enum class ShapeFamily { kRect, kLShape, kRing };

/// Everything needed to regenerate a synthetic shape; logged with it.
struct SynthParams {
  std::uint64_t seed = 0;
  int n = 0;
  ShapeFamily family = ShapeFamily::kRect;
  bool long_axis_x = true;
  int base_x0 = 0, base_x1 = 0, base_y0 = 0, base_y1 = 0;  // half-open voxel ranges
  int base_height = 0;
  // L-shape corner cut or ring courtyard, half-open ranges.
  int cut_x0 = 0, cut_x1 = 0, cut_y0 = 0, cut_y1 = 0;
  bool has_tower = false;
  int tower_x0 = 0, tower_x1 = 0, tower_y0 = 0, tower_y1 = 0;
  int tower_top = 0;
  // Ground-level passage through the base along one horizontal axis.
  bool has_passage = false;
  bool passage_along_x = true;
  int passage_lo = 0, passage_hi = 0, passage_top = 0;
};

nlohmann::json to_json(const SynthParams& params);
std::string to_string(ShapeFamily family);

/// Deterministic building-like shape for the toy training/eval corpus.
SynthParams synth_params(std::uint64_t seed, int n);
VoxelGrid synth_from_params(const SynthParams& params);
VoxelGrid synth_shape(std::uint64_t seed, int n);

/// SSVX: "SSVX" | u32 version=1 | u32 n | u32 reserved=0 | ceil(n^3/8) bytes, LSB-first.
std::vector<std::uint8_t> encode_ssvx(const VoxelGrid& grid);
VoxelGrid decode_ssvx(std::span<const std::uint8_t> bytes);
void write_ssvx(const VoxelGrid& grid, const std::filesystem::path& path);
VoxelGrid read_ssvx(const std::filesystem::path& path);

/// Debug export: one cube per occupied voxel.
void write_obj(const VoxelGrid& grid, const std::filesystem::path& path);

}  // namespace geoforge

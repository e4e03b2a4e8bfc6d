// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "geoforge/voxel_prior.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include "geoforge/error.hpp"
#include "geoforge/io.hpp"
#include "geoforge/polygon.hpp"
#include "geoforge/rng.hpp"

namespace geoforge {

namespace {

constexpr double kEarthRadiusM = 6371008.8;
constexpr std::uint32_t kSsvxVersion = 1;
constexpr std::size_t kSsvxHeader = 16;
constexpr int kMaxSsvxN = 2048;

using Slice = std::vector<std::uint8_t>;  // n*n, index x + n*y

Slice slice_of(const VoxelGrid& g, int z) {
  const int n = g.n();
  Slice s(static_cast<std::size_t>(n) * n, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) s[x + static_cast<std::size_t>(n) * y] = g.at(x, y, z);
  return s;
}

void unite(Slice& acc, const Slice& s) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] |= s[i];
}

std::size_t popcount(const Slice& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), 1)); }

void extrude(VoxelGrid& out, const Slice& cross, int z0, int z1) {
  const int n = out.n();
  for (int z = z0; z <= z1; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (cross[x + static_cast<std::size_t>(n) * y]) out.set(x, y, z);
}

struct SliceStack {
  std::vector<Slice> slices;
  std::vector<bool> occupied;
  int z_min = -1;
  int z_max = -1;
};

SliceStack stack_of(const VoxelGrid& g) {
  SliceStack st;
  const int n = g.n();
  for (int z = 0; z < n; ++z) {
    st.slices.push_back(slice_of(g, z));
    const bool occ = popcount(st.slices.back()) > 0;
    st.occupied.push_back(occ);
    if (occ) {
      if (st.z_min < 0) st.z_min = z;
      st.z_max = z;
    }
  }
  return st;
}

/// Two-band volumes for every split; returns the best split (lowest z of the
/// upper band) and fills `best_cross_lo/hi` and their occupied z ranges.
struct TwoBand {
  int split = 1;
  Slice lower, upper;
  int lower_z0 = -1, lower_z1 = -1, upper_z0 = -1, upper_z1 = -1;
};

TwoBand best_two_band(const SliceStack& st, int n) {
  const std::size_t area = static_cast<std::size_t>(n) * n;
  // prefix[h] = union of slices [0, h); suffix[h] = union of slices [h, n).
  std::vector<Slice> prefix(n + 1, Slice(area, 0));
  std::vector<Slice> suffix(n + 1, Slice(area, 0));
  std::vector<int> last_below(n + 1, -1);   // highest occupied z < h
  std::vector<int> first_above(n + 1, -1);  // lowest occupied z >= h
  for (int h = 1; h <= n; ++h) {
    prefix[h] = prefix[h - 1];
    unite(prefix[h], st.slices[h - 1]);
    last_below[h] = st.occupied[h - 1] ? h - 1 : last_below[h - 1];
  }
  for (int h = n - 1; h >= 0; --h) {
    suffix[h] = suffix[h + 1];
    unite(suffix[h], st.slices[h]);
    first_above[h] = st.occupied[h] ? h : first_above[h + 1];
  }
  auto band_volume = [&](const Slice& cross, int z0, int z1) -> std::size_t {
    if (z0 < 0 || z1 < z0) return 0;
    return popcount(cross) * static_cast<std::size_t>(z1 - z0 + 1);
  };
  TwoBand best;
  std::size_t best_volume = SIZE_MAX;
  for (int h = 1; h <= n - 1; ++h) {
    const int lo0 = st.occupied[st.z_min] && st.z_min < h ? st.z_min : -1;
    const int lo1 = last_below[h];
    const int up0 = first_above[h];
    const int up1 = up0 >= 0 ? st.z_max : -1;
    const std::size_t volume = band_volume(prefix[h], lo0, lo1) + band_volume(suffix[h], up0, up1);
    if (volume < best_volume) {
      best_volume = volume;
      best.split = h;
      best.lower_z0 = lo0;
      best.lower_z1 = lo1;
      best.upper_z0 = up0;
      best.upper_z1 = up1;
    }
  }
  best.lower = prefix[best.split];
  best.upper = suffix[best.split];
  return best;
}

void require_non_empty(const VoxelGrid& g) {
  if (g.n() <= 0 || g.empty()) throw Error(Errc::kEmptyGrid, "prior source grid is empty");
}

int round_int(double v) { return static_cast<int>(std::lround(v)); }

}  // namespace

VoxelGrid::VoxelGrid(int n) : n_(n) {
  if (n <= 0) throw Error(Errc::kInvalidArgument, fmt::format("grid resolution must be > 0, got {}", n));
  words_.assign((size() + 63) / 64, 0);
}

std::size_t VoxelGrid::count() const noexcept {
  std::size_t total = 0;
  for (std::uint64_t w : words_) total += static_cast<std::size_t>(std::popcount(w));
  return total;
}

bool is_subset(const VoxelGrid& inner, const VoxelGrid& outer) {
  if (inner.n() != outer.n()) return false;
  const auto a = inner.words();
  const auto b = outer.words();
  for (std::size_t i = 0; i < a.size(); ++i)
    if ((a[i] & ~b[i]) != 0) return false;
  return true;
}

std::string to_string(LodLevel level) { return fmt::format("lod{}", static_cast<int>(level)); }

VoxelGrid rasterize_footprint(const GeoFootprint& footprint, int n) {
  if (n < 8) throw Error(Errc::kInvalidArgument, fmt::format("resolution must be >= 8, got {}", n));
  if (footprint.outer.size() < 4) {
    throw Error(Errc::kDegenerateFootprint, footprint.source_id + ": outer ring has < 4 vertices");
  }
  // Vertex centroid, ignoring the closing duplicate.
  double lat0 = 0.0, lon0 = 0.0;
  const std::size_t unique = footprint.outer.size() - 1;
  for (std::size_t i = 0; i < unique; ++i) {
    lat0 += footprint.outer[i].lat;
    lon0 += footprint.outer[i].lon;
  }
  lat0 /= static_cast<double>(unique);
  lon0 /= static_cast<double>(unique);
  const double ky = kEarthRadiusM * std::numbers::pi / 180.0;
  const double kx = ky * std::cos(lat0 * std::numbers::pi / 180.0);
  auto project = [&](const std::vector<LatLon>& ring) {
    Ring out;
    out.reserve(ring.size());
    for (const LatLon& p : ring) out.push_back({(p.lon - lon0) * kx, (p.lat - lat0) * ky});
    return out;
  };
  Ring outer = project(footprint.outer);
  std::vector<Ring> holes;
  for (const auto& h : footprint.holes) holes.push_back(project(h));

  const Box2 box = bounds(outer);
  const double extent = std::max(box.max_x - box.min_x, box.max_y - box.min_y);
  const double area = std::abs(signed_area(outer));
  if (!(extent > 0.0) || area <= 1e-9 * extent * extent) {
    throw Error(Errc::kDegenerateFootprint,
                fmt::format("{}: footprint has zero area after projection", footprint.source_id));
  }
  const double cx = 0.5 * (box.min_x + box.max_x);
  const double cy = 0.5 * (box.min_y + box.max_y);
  auto to_frame = [&](Ring& ring) {
    for (Point2& p : ring) p = {(p.x - cx) / extent, (p.y - cy) / extent};
  };
  to_frame(outer);
  for (Ring& h : holes) to_frame(h);

  double z_top = -0.5 + footprint.height_m / extent;
  const double z_bottom = -0.5 + footprint.min_height_m / extent;
  if (z_top > 0.5) {
    spdlog::warn("{}: height {} m exceeds frame (width {:.2f} m); clamped", footprint.source_id,
                 footprint.height_m, extent);
    z_top = 0.5;
  }

  VoxelGrid grid(n);
  Slice mask(static_cast<std::size_t>(n) * n, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      mask[x + static_cast<std::size_t>(n) * y] = point_in_polygon(
          {VoxelGrid::center(n, x), VoxelGrid::center(n, y)}, outer, holes);
  for (int z = 0; z < n; ++z) {
    const double zc = VoxelGrid::center(n, z);
    if (zc < z_bottom || zc > z_top) continue;
    extrude(grid, mask, z, z);
  }
  return grid;
}

int lod2_split_height(const VoxelGrid& gt) {
  require_non_empty(gt);
  return best_two_band(stack_of(gt), gt.n()).split;
}

VoxelGrid lod_prior(const VoxelGrid& gt, LodLevel level) {
  require_non_empty(gt);
  const int n = gt.n();
  VoxelGrid out(n);
  switch (level) {
    case LodLevel::kLod0: {
      int lo[3] = {n, n, n};
      int hi[3] = {-1, -1, -1};
      for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x)
            if (gt.at(x, y, z)) {
              lo[0] = std::min(lo[0], x), hi[0] = std::max(hi[0], x);
              lo[1] = std::min(lo[1], y), hi[1] = std::max(hi[1], y);
              lo[2] = std::min(lo[2], z), hi[2] = std::max(hi[2], z);
            }
      for (int z = lo[2]; z <= hi[2]; ++z)
        for (int y = lo[1]; y <= hi[1]; ++y)
          for (int x = lo[0]; x <= hi[0]; ++x) out.set(x, y, z);
      return out;
    }
    case LodLevel::kLod1: {
      const SliceStack st = stack_of(gt);
      Slice cross(static_cast<std::size_t>(n) * n, 0);
      for (const Slice& s : st.slices) unite(cross, s);
      extrude(out, cross, st.z_min, st.z_max);
      return out;
    }
    case LodLevel::kLod2: {
      const SliceStack st = stack_of(gt);
      const TwoBand bands = best_two_band(st, n);
      if (bands.lower_z0 >= 0) extrude(out, bands.lower, bands.lower_z0, bands.lower_z1);
      if (bands.upper_z0 >= 0) extrude(out, bands.upper, bands.upper_z0, bands.upper_z1);
      return out;
    }
  }
  throw Error(Errc::kInvalidArgument, "unknown LOD level");
}

std::string to_string(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::kRect: return "rect";
    case ShapeFamily::kLShape: return "l_shape";
    case ShapeFamily::kRing: return "ring";
  }
  return "unknown";
}

nlohmann::json to_json(const SynthParams& p) {
  return {{"seed", p.seed},
          {"n", p.n},
          {"family", to_string(p.family)},
          {"long_axis_x", p.long_axis_x},
          {"base", {p.base_x0, p.base_x1, p.base_y0, p.base_y1}},
          {"base_height", p.base_height},
          {"cut", {p.cut_x0, p.cut_x1, p.cut_y0, p.cut_y1}},
          {"has_tower", p.has_tower},
          {"tower", {p.tower_x0, p.tower_x1, p.tower_y0, p.tower_y1}},
          {"tower_top", p.tower_top},
          {"has_passage", p.has_passage},
          {"passage_along_x", p.passage_along_x},
          {"passage", {p.passage_lo, p.passage_hi, p.passage_top}}};
}

SynthParams synth_params(std::uint64_t seed, int n) {
  if (n < 16) throw Error(Errc::kInvalidArgument, fmt::format("synthetic shapes need n >= 16, got {}", n));
  CounterRng rng(seed, streams::kSynth);
  SynthParams p;
  p.seed = seed;
  p.n = n;
  p.family = static_cast<ShapeFamily>(rng.next_below(3));
  p.long_axis_x = rng.next_below(2) == 0;

  // The long horizontal side spans the frame, as after footprint normalization.
  const int width = std::clamp(round_int(n * rng.next_uniform(0.45, 1.0)), 7, n);
  const int w0 = (n - width) / 2;
  int u0 = 0, u1 = n, v0 = w0, v1 = w0 + width;  // u = long axis, v = short axis
  p.base_height = std::max(2, round_int(n * rng.next_uniform(0.2, 0.55)));

  int cu0 = 0, cu1 = 0, cv0 = 0, cv1 = 0;
  const int wall = std::max(2, n / 10);
  if (p.family == ShapeFamily::kLShape) {
    const int cut_u = round_int(n * rng.next_uniform(0.35, 0.6));
    const int cut_v = std::clamp(round_int(width * rng.next_uniform(0.35, 0.6)), 1, width - wall);
    const bool at_u_start = rng.next_below(2) == 0;
    const bool at_v_start = rng.next_below(2) == 0;
    cu0 = at_u_start ? u0 : u1 - cut_u;
    cu1 = cu0 + cut_u;
    cv0 = at_v_start ? v0 : v1 - cut_v;
    cv1 = cv0 + cut_v;
  } else if (p.family == ShapeFamily::kRing) {
    const int hole_u = std::clamp(round_int(n * rng.next_uniform(0.3, 0.5)), 2, n - 2 * wall);
    const int hole_v = std::clamp(round_int(width * rng.next_uniform(0.3, 0.5)), 1, width - 2 * wall);
    cu0 = u0 + (n - hole_u) / 2;
    cu1 = cu0 + hole_u;
    cv0 = v0 + (width - hole_v) / 2;
    cv1 = cv0 + hole_v;
  }

  int tu0 = 0, tu1 = 0, tv0 = 0, tv1 = 0;
  if (rng.next_below(2) == 0) {
    const int tw_u = std::max(2, round_int(n * rng.next_uniform(0.3, 0.6)));
    const int tw_v = std::max(2, round_int(width * rng.next_uniform(0.3, 0.6)));
    tu0 = u0 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - tw_u + 1)));
    tv0 = v0 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(width - tw_v + 1)));
    tu1 = tu0 + tw_u;
    tv1 = tv0 + tw_v;
    const int top = p.base_height + std::max(1, round_int(n * rng.next_uniform(0.15, 0.4)));
    p.tower_top = std::min(n, top);
    // A tower entirely over the cut-out has nothing to stand on.
    const bool inside_cut = tu0 >= cu0 && tu1 <= cu1 && tv0 >= cv0 && tv1 <= cv1;
    p.has_tower = p.tower_top > p.base_height && !inside_cut;
  }

  int pass_lo = 0, pass_hi = 0;
  if (rng.next_below(10) < 3 && p.base_height >= 3) {
    p.has_passage = true;
    const bool along_u = rng.next_below(2) == 0;
    const int span = along_u ? width : n;
    const int lo_edge = along_u ? v0 : u0;
    const int pw = std::clamp(round_int(span * rng.next_uniform(0.2, 0.35)), 1, span - 2);
    pass_lo = lo_edge + (span - pw) / 2;
    pass_hi = pass_lo + pw;
    p.passage_top = std::clamp(round_int(p.base_height * rng.next_uniform(0.3, 0.6)), 1, p.base_height - 1);
    p.passage_along_x = along_u == p.long_axis_x;
  }
  p.passage_lo = pass_lo;
  p.passage_hi = pass_hi;

  // Map (u, v) to (x, y).
  auto assign = [&](int a0, int a1, int b0, int b1, int& x0, int& x1, int& y0, int& y1) {
    if (p.long_axis_x) {
      x0 = a0, x1 = a1, y0 = b0, y1 = b1;
    } else {
      x0 = b0, x1 = b1, y0 = a0, y1 = a1;
    }
  };
  assign(u0, u1, v0, v1, p.base_x0, p.base_x1, p.base_y0, p.base_y1);
  assign(cu0, cu1, cv0, cv1, p.cut_x0, p.cut_x1, p.cut_y0, p.cut_y1);
  assign(tu0, tu1, tv0, tv1, p.tower_x0, p.tower_x1, p.tower_y0, p.tower_y1);
  return p;
}

VoxelGrid synth_from_params(const SynthParams& p) {
  const int n = p.n;
  VoxelGrid g(n);
  auto in = [](int v, int lo, int hi) { return v >= lo && v < hi; };
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const bool base = in(x, p.base_x0, p.base_x1) && in(y, p.base_y0, p.base_y1) &&
                        !(in(x, p.cut_x0, p.cut_x1) && in(y, p.cut_y0, p.cut_y1));
      if (!base) continue;
      const int across = p.passage_along_x ? y : x;
      const bool under_passage = p.has_passage && in(across, p.passage_lo, p.passage_hi);
      for (int z = 0; z < p.base_height; ++z) {
        if (under_passage && z < p.passage_top) continue;
        g.set(x, y, z);
      }
      if (p.has_tower && in(x, p.tower_x0, p.tower_x1) && in(y, p.tower_y0, p.tower_y1)) {
        for (int z = p.base_height; z < p.tower_top; ++z) g.set(x, y, z);
      }
    }
  }
  return g;
}

VoxelGrid synth_shape(std::uint64_t seed, int n) {
  const SynthParams params = synth_params(seed, n);
  spdlog::debug("synth_shape {}", to_json(params).dump());
  return synth_from_params(params);
}

std::vector<std::uint8_t> encode_ssvx(const VoxelGrid& grid) {
  ByteWriter w;
  w.raw(std::string_view("SSVX"));
  w.u32(kSsvxVersion);
  w.u32(static_cast<std::uint32_t>(grid.n()));
  w.u32(0);
  const std::size_t payload = (grid.size() + 7) / 8;
  auto& bytes = w.bytes();
  bytes.reserve(kSsvxHeader + payload);
  const auto words = grid.words();
  for (std::size_t b = 0; b < payload; ++b) {
    bytes.push_back(static_cast<std::uint8_t>(words[b / 8] >> (8 * (b % 8))));
  }
  return std::move(bytes);
}

VoxelGrid decode_ssvx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kSsvxHeader) throw Error(Errc::kFormatError, "SSVX: truncated header");
  ByteReader r(bytes);
  if (r.raw(4) != "SSVX") throw Error(Errc::kFormatError, "SSVX: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kSsvxVersion) throw Error(Errc::kFormatError, fmt::format("SSVX: unsupported version {}", version));
  const std::uint32_t n = r.u32();
  if (n == 0 || n > kMaxSsvxN) throw Error(Errc::kFormatError, fmt::format("SSVX: bad resolution {}", n));
  if (r.u32() != 0) throw Error(Errc::kFormatError, "SSVX: reserved field must be 0");
  VoxelGrid grid(static_cast<int>(n));
  const std::size_t payload = (grid.size() + 7) / 8;
  if (r.remaining() != payload) {
    throw Error(Errc::kFormatError, fmt::format("SSVX: expected {} payload bytes, found {}", payload, r.remaining()));
  }
  const auto data = r.rest();
  auto words = grid.words();
  for (std::size_t b = 0; b < payload; ++b) {
    words[b / 8] |= static_cast<std::uint64_t>(data[b]) << (8 * (b % 8));
  }
  const std::size_t tail = grid.size() % 64;
  if (tail != 0 && (words.back() >> tail) != 0) {
    throw Error(Errc::kFormatError, "SSVX: padding bits set past n^3");
  }
  return grid;
}

void write_ssvx(const VoxelGrid& grid, const std::filesystem::path& path) {
  write_bytes(path, encode_ssvx(grid));
}

VoxelGrid read_ssvx(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_ssvx(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("{} ({})", e.what(), path.string()));
  }
}

void write_obj(const VoxelGrid& grid, const std::filesystem::path& path) {
  const int n = grid.n();
  std::string out = "# occupied voxel cubes, normalized frame\n";
  std::size_t vertex_base = 1;
  auto occupied = [&](int x, int y, int z) {
    return x >= 0 && y >= 0 && z >= 0 && x < n && y < n && z < n && grid.at(x, y, z);
  };
  // Face corner offsets per axis direction, counter-clockwise seen from outside.
  static constexpr int kFaces[6][4][3] = {
      {{1, 0, 0}, {1, 1, 0}, {1, 1, 1}, {1, 0, 1}}, {{0, 0, 0}, {0, 0, 1}, {0, 1, 1}, {0, 1, 0}},
      {{0, 1, 0}, {0, 1, 1}, {1, 1, 1}, {1, 1, 0}}, {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1}},
      {{0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}, {{0, 0, 0}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}}};
  static constexpr int kNormals[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        if (!grid.at(x, y, z)) continue;
        for (int f = 0; f < 6; ++f) {
          if (occupied(x + kNormals[f][0], y + kNormals[f][1], z + kNormals[f][2])) continue;
          for (const auto& c : kFaces[f]) {
            out += fmt::format("v {} {} {}\n", -0.5 + double(x + c[0]) / n, -0.5 + double(y + c[1]) / n,
                               -0.5 + double(z + c[2]) / n);
          }
          out += fmt::format("f {} {} {} {}\n", vertex_base, vertex_base + 1, vertex_base + 2, vertex_base + 3);
          vertex_base += 4;
        }
      }
  write_text(path, out);
}

}  // namespace geoforge

// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

namespace geoforge {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

using Ring = std::vector<Point2>;

/// Even-odd crossing test. The ring may or may not repeat its first vertex.
bool point_in_ring(Point2 p, std::span<const Point2> ring) noexcept;

/// Inside the outer ring and outside every hole.
bool point_in_polygon(Point2 p, std::span<const Point2> outer, std::span<const Ring> holes) noexcept;

/// Signed shoelace area (counter-clockwise positive).
double signed_area(std::span<const Point2> ring) noexcept;

struct Box2 {
  double min_x, min_y, max_x, max_y;
  bool intersects(const Box2& other) const noexcept {
    return min_x <= other.max_x && other.min_x <= max_x && min_y <= other.max_y &&
           other.min_y <= max_y;
  }
};

Box2 bounds(std::span<const Point2> ring) noexcept;

}  // namespace geoforge

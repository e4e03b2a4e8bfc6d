// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "geoforge/polygon.hpp"

#include <algorithm>
#include <limits>

namespace geoforge {

bool point_in_ring(Point2 p, std::span<const Point2> ring) noexcept {
  bool inside = false;
  const std::size_t n = ring.size();
  if (n < 3) return false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point2& a = ring[i];
    const Point2& b = ring[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

bool point_in_polygon(Point2 p, std::span<const Point2> outer, std::span<const Ring> holes) noexcept {
  if (!point_in_ring(p, outer)) return false;
  return std::none_of(holes.begin(), holes.end(),
                      [&](const Ring& hole) { return point_in_ring(p, hole); });
}

double signed_area(std::span<const Point2> ring) noexcept {
  const std::size_t n = ring.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    twice += (ring[j].x - ring[i].x) * (ring[j].y + ring[i].y);
  }
  return 0.5 * twice;
}

Box2 bounds(std::span<const Point2> ring) noexcept {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Box2 box{inf, inf, -inf, -inf};
  for (const Point2& p : ring) {
    box.min_x = std::min(box.min_x, p.x);
    box.min_y = std::min(box.min_y, p.y);
    box.max_x = std::max(box.max_x, p.x);
    box.max_y = std::max(box.max_y, p.y);
  }
  return box;
}

}  // namespace geoforge

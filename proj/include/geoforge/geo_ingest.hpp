// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geoforge/transport.hpp"

namespace geoforge {

/// Web Mercator latitude limit in degrees.
inline constexpr double kMaxMercatorLat = 85.0511;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
  friend bool operator==(const LatLon&, const LatLon&) = default;
};

struct GeoBBox {
  double min_lat = 0.0;
  double max_lat = 0.0;
  double min_lon = 0.0;
  double max_lon = 0.0;

  /// Throws Error(kInvalidBBox) on inverted, empty, or out-of-range bounds.
  void validate() const;
  friend bool operator==(const GeoBBox&, const GeoBBox&) = default;
};

using TagMap = std::map<std::string, std::string>;

/// A building outline. Rings are closed (first vertex repeated at the end).
struct GeoFootprint {
  std::vector<LatLon> outer;
  std::vector<std::vector<LatLon>> holes;
  double height_m = 0.0;
  double min_height_m = 0.0;
  std::string source_id;
  TagMap raw_tags;

  friend bool operator==(const GeoFootprint&, const GeoFootprint&) = default;
};

/// Height fallback chain constants.
struct HeightRules {
  double meters_per_level = 3.0;
  double default_height_m = 10.0;
};

/// `height` (optional "m" suffix), else `building:levels` x meters_per_level,
/// else default_height_m. Always returns a positive finite value.
double infer_height(const TagMap& tags, const HeightRules& rules = {});

/// Overpass QL selecting building ways and multipolygon relations in `bbox`
/// with full geometry, JSON output.
std::string build_overpass_query(const GeoBBox& bbox, int timeout_s = 60);

struct ParseWarning {
  std::string source_id;
  std::string message;
};

struct ParseResult {
  std::vector<GeoFootprint> footprints;
  std::vector<ParseWarning> warnings;
};

/// Parses an Overpass JSON response produced with `out geom`.
/// Throws Error(kMalformedResponse) on syntax or schema errors.
ParseResult parse_buildings(std::string_view response_json, const HeightRules& rules = {});

inline constexpr std::string_view kDefaultOverpassUrl = "https://overpass-api.de/api/interpreter";

/// build_overpass_query -> POST -> parse_buildings, with retries on transient failures.
ParseResult fetch_buildings(const GeoBBox& bbox, const std::string& endpoint, Transport& transport,
                            const RetryPolicy& retry = {}, const HeightRules& rules = {});

nlohmann::json to_json(const GeoFootprint& footprint);
GeoFootprint footprint_from_json(const nlohmann::json& j);
nlohmann::json footprints_to_json(std::span<const GeoFootprint> footprints);
std::vector<GeoFootprint> footprints_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GeoBBox& bbox);
GeoBBox bbox_from_json(const nlohmann::json& j);

}  // namespace geoforge

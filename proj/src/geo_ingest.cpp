// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "geoforge/geo_ingest.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>

#include "geoforge/error.hpp"
#include "geoforge/polygon.hpp"

namespace geoforge {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

/// Positive finite number, optionally followed by `unit`.
std::optional<double> parse_positive(std::string_view text, std::string_view unit) {
  text = trim(text);
  if (!unit.empty() && text.size() >= unit.size() &&
      text.substr(text.size() - unit.size()) == unit) {
    text = trim(text.substr(0, text.size() - unit.size()));
  }
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) return std::nullopt;
  if (!std::isfinite(value) || value <= 0.0) return std::nullopt;
  return value;
}

std::optional<double> tag_number(const TagMap& tags, const std::string& key, std::string_view unit) {
  const auto it = tags.find(key);
  if (it == tags.end()) return std::nullopt;
  return parse_positive(it->second, unit);
}

[[noreturn]] void malformed(const std::string& what) { throw Error(Errc::kMalformedResponse, what); }

TagMap read_tags(const nlohmann::json& element) {
  TagMap tags;
  const auto it = element.find("tags");
  if (it == element.end()) return tags;
  if (!it->is_object()) malformed("'tags' is not an object");
  for (const auto& [key, value] : it->items()) {
    tags.emplace(key, value.is_string() ? value.get<std::string>() : value.dump());
  }
  return tags;
}

using Polyline = std::vector<LatLon>;

Polyline read_geometry(const nlohmann::json& geometry, const std::string& owner) {
  if (!geometry.is_array()) malformed(fmt::format("{}: 'geometry' is not an array", owner));
  Polyline line;
  line.reserve(geometry.size());
  for (const auto& vertex : geometry) {
    if (!vertex.is_object() || !vertex.contains("lat") || !vertex.contains("lon") ||
        !vertex["lat"].is_number() || !vertex["lon"].is_number()) {
      malformed(fmt::format("{}: geometry vertex without numeric lat/lon", owner));
    }
    line.push_back({vertex["lat"].get<double>(), vertex["lon"].get<double>()});
  }
  return line;
}

bool is_closed(const Polyline& ring) { return ring.size() >= 4 && ring.front() == ring.back(); }

/// Joins way segments end-to-end into closed rings. Segments that cannot be
/// closed are reported through `open_count`.
std::vector<Polyline> assemble_rings(std::vector<Polyline> segments, int& open_count) {
  std::vector<Polyline> rings;
  open_count = 0;
  std::vector<bool> used(segments.size(), false);
  for (std::size_t start = 0; start < segments.size(); ++start) {
    if (used[start] || segments[start].empty()) continue;
    used[start] = true;
    Polyline ring = segments[start];
    bool extended = true;
    while (!(ring.size() >= 2 && ring.front() == ring.back()) && extended) {
      extended = false;
      for (std::size_t k = 0; k < segments.size(); ++k) {
        if (used[k] || segments[k].empty()) continue;
        const Polyline& seg = segments[k];
        if (seg.front() == ring.back()) {
          ring.insert(ring.end(), seg.begin() + 1, seg.end());
        } else if (seg.back() == ring.back()) {
          ring.insert(ring.end(), seg.rbegin() + 1, seg.rend());
        } else {
          continue;
        }
        used[k] = true;
        extended = true;
        break;
      }
    }
    if (is_closed(ring)) {
      rings.push_back(std::move(ring));
    } else {
      ++open_count;
    }
  }
  return rings;
}

Ring to_plane(const Polyline& ring) {
  Ring out;
  out.reserve(ring.size());
  for (const LatLon& p : ring) out.push_back({p.lon, p.lat});
  return out;
}

void apply_heights(GeoFootprint& fp, const HeightRules& rules, std::vector<ParseWarning>& warnings) {
  fp.height_m = infer_height(fp.raw_tags, rules);
  double min_height = 0.0;
  if (auto v = tag_number(fp.raw_tags, "min_height", "m")) {
    min_height = *v;
  } else if (auto levels = tag_number(fp.raw_tags, "building:min_level", "")) {
    min_height = *levels * rules.meters_per_level;
  }
  if (min_height >= fp.height_m) {
    warnings.push_back({fp.source_id, fmt::format("min_height {} >= height {}; using 0",
                                                  min_height, fp.height_m)});
    min_height = 0.0;
  }
  fp.min_height_m = min_height;
}

std::string element_id(const nlohmann::json& element, std::string_view type) {
  const auto it = element.find("id");
  if (it == element.end() || !it->is_number_integer()) {
    malformed(fmt::format("{} element without integer 'id'", type));
  }
  return fmt::format("{}/{}", type, it->get<std::int64_t>());
}

void parse_way(const nlohmann::json& element, const HeightRules& rules, ParseResult& out) {
  const std::string id = element_id(element, "way");
  TagMap tags = read_tags(element);
  if (!tags.contains("building")) return;
  if (!element.contains("geometry")) {
    out.warnings.push_back({id, "way has no geometry (query must use 'out geom')"});
    return;
  }
  Polyline ring = read_geometry(element["geometry"], id);
  if (!is_closed(ring)) {
    out.warnings.push_back({id, "unclosed building way skipped"});
    return;
  }
  GeoFootprint fp;
  fp.outer = std::move(ring);
  fp.source_id = id;
  fp.raw_tags = std::move(tags);
  apply_heights(fp, rules, out.warnings);
  out.footprints.push_back(std::move(fp));
}

void parse_relation(const nlohmann::json& element, const HeightRules& rules, ParseResult& out) {
  const std::string id = element_id(element, "relation");
  TagMap tags = read_tags(element);
  if (!tags.contains("building")) return;
  const auto type = tags.find("type");
  if (type == tags.end() || type->second != "multipolygon") {
    out.warnings.push_back({id, "non-multipolygon building relation skipped"});
    return;
  }
  const auto members = element.find("members");
  if (members == element.end() || !members->is_array()) malformed(id + ": 'members' missing");

  std::vector<Polyline> outer_segments;
  std::vector<Polyline> inner_segments;
  for (const auto& member : *members) {
    if (!member.is_object()) malformed(id + ": member is not an object");
    if (member.value("type", "") != "way") continue;
    if (!member.contains("geometry")) {
      out.warnings.push_back({id, "member way without geometry ignored"});
      continue;
    }
    Polyline line = read_geometry(member["geometry"], id);
    if (line.size() < 2) continue;
    (member.value("role", "") == "inner" ? inner_segments : outer_segments).push_back(std::move(line));
  }

  int open_outer = 0;
  int open_inner = 0;
  std::vector<Polyline> outers = assemble_rings(std::move(outer_segments), open_outer);
  std::vector<Polyline> inners = assemble_rings(std::move(inner_segments), open_inner);
  if (open_outer > 0 || open_inner > 0) {
    out.warnings.push_back(
        {id, fmt::format("{} outer / {} inner ring(s) could not be closed", open_outer, open_inner)});
  }
  if (outers.empty()) {
    out.warnings.push_back({id, "multipolygon without a closed outer ring skipped"});
    return;
  }

  std::vector<GeoFootprint> parts(outers.size());
  std::vector<Ring> planar;
  for (const auto& o : outers) planar.push_back(to_plane(o));
  for (auto& inner : inners) {
    const Point2 probe{inner.front().lon, inner.front().lat};
    bool placed = false;
    for (std::size_t k = 0; k < outers.size() && !placed; ++k) {
      if (point_in_ring(probe, planar[k])) {
        parts[k].holes.push_back(std::move(inner));
        placed = true;
      }
    }
    if (!placed) out.warnings.push_back({id, "inner ring outside every outer ring dropped"});
  }
  for (std::size_t k = 0; k < outers.size(); ++k) {
    GeoFootprint& fp = parts[k];
    fp.outer = std::move(outers[k]);
    fp.source_id = k == 0 ? id : fmt::format("{}/{}", id, k + 1);
    fp.raw_tags = tags;
    apply_heights(fp, rules, out.warnings);
    out.footprints.push_back(std::move(fp));
  }
}

nlohmann::json ring_to_json(const std::vector<LatLon>& ring) {
  nlohmann::json arr = nlohmann::json::array();
  for (const LatLon& p : ring) arr.push_back({p.lat, p.lon});
  return arr;
}

std::vector<LatLon> ring_from_json(const nlohmann::json& arr) {
  std::vector<LatLon> ring;
  for (const auto& p : arr) ring.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return ring;
}

}  // namespace

void GeoBBox::validate() const {
  const bool finite = std::isfinite(min_lat) && std::isfinite(max_lat) && std::isfinite(min_lon) &&
                      std::isfinite(max_lon);
  if (!finite || !(min_lat < max_lat) || !(min_lon < max_lon) || min_lat < -kMaxMercatorLat ||
      max_lat > kMaxMercatorLat || min_lon < -180.0 || max_lon > 180.0) {
    throw Error(Errc::kInvalidBBox, fmt::format("invalid bbox lat [{}, {}] lon [{}, {}]", min_lat,
                                                max_lat, min_lon, max_lon));
  }
}

double infer_height(const TagMap& tags, const HeightRules& rules) {
  if (auto h = tag_number(tags, "height", "m")) return *h;
  if (auto levels = tag_number(tags, "building:levels", "")) {
    const double h = *levels * rules.meters_per_level;
    if (std::isfinite(h) && h > 0.0) return h;
  }
  if (!(rules.default_height_m > 0.0) || !std::isfinite(rules.default_height_m)) {
    throw Error(Errc::kInvalidArgument, "default building height must be positive");
  }
  return rules.default_height_m;
}

std::string build_overpass_query(const GeoBBox& bbox, int timeout_s) {
  bbox.validate();
  // Overpass bbox order is south, west, north, east.
  const std::string b =
      fmt::format("({},{},{},{})", bbox.min_lat, bbox.min_lon, bbox.max_lat, bbox.max_lon);
  return fmt::format(
      "[out:json][timeout:{}];\n"
      "(\n"
      "  way[\"building\"]{};\n"
      "  relation[\"building\"][\"type\"=\"multipolygon\"]{};\n"
      ");\n"
      "out geom;\n",
      timeout_s, b, b);
}

ParseResult parse_buildings(std::string_view response_json, const HeightRules& rules) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(response_json);
  } catch (const nlohmann::json::parse_error& e) {
    malformed(fmt::format("invalid JSON: {}", e.what()));
  }
  if (!doc.is_object() || !doc.contains("elements") || !doc["elements"].is_array()) {
    malformed("response has no 'elements' array");
  }
  ParseResult result;
  try {
    for (const auto& element : doc["elements"]) {
      if (!element.is_object() || !element.contains("type") || !element["type"].is_string()) {
        malformed("element without string 'type'");
      }
      const std::string type = element["type"].get<std::string>();
      if (type == "way") {
        parse_way(element, rules, result);
      } else if (type == "relation") {
        parse_relation(element, rules, result);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    malformed(fmt::format("schema error: {}", e.what()));
  }
  for (const auto& w : result.warnings) spdlog::warn("{}: {}", w.source_id, w.message);
  return result;
}

ParseResult fetch_buildings(const GeoBBox& bbox, const std::string& endpoint, Transport& transport,
                            const RetryPolicy& retry, const HeightRules& rules) {
  HttpRequest request;
  request.method = "POST";
  request.url = endpoint;
  request.body = "data=" + url_encode(build_overpass_query(bbox));
  request.content_type = "application/x-www-form-urlencoded";
  const HttpResponse response = send_with_retry(transport, request, retry);
  if (response.status != 200) {
    throw Error(Errc::kNetworkError,
                fmt::format("Overpass endpoint {} answered HTTP {}", endpoint, response.status));
  }
  return parse_buildings(response.body, rules);
}

nlohmann::json to_json(const GeoFootprint& fp) {
  nlohmann::json holes = nlohmann::json::array();
  for (const auto& h : fp.holes) holes.push_back(ring_to_json(h));
  return {{"id", fp.source_id},          {"outer", ring_to_json(fp.outer)},
          {"holes", holes},              {"height_m", fp.height_m},
          {"min_height_m", fp.min_height_m}, {"tags", fp.raw_tags}};
}

GeoFootprint footprint_from_json(const nlohmann::json& j) {
  GeoFootprint fp;
  fp.source_id = j.at("id").get<std::string>();
  fp.outer = ring_from_json(j.at("outer"));
  for (const auto& h : j.at("holes")) fp.holes.push_back(ring_from_json(h));
  fp.height_m = j.at("height_m").get<double>();
  fp.min_height_m = j.value("min_height_m", 0.0);
  fp.raw_tags = j.value("tags", TagMap{});
  return fp;
}

nlohmann::json footprints_to_json(std::span<const GeoFootprint> footprints) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& fp : footprints) arr.push_back(to_json(fp));
  return arr;
}

std::vector<GeoFootprint> footprints_from_json(const nlohmann::json& j) {
  std::vector<GeoFootprint> out;
  for (const auto& item : j) out.push_back(footprint_from_json(item));
  return out;
}

nlohmann::json to_json(const GeoBBox& bbox) {
  return {{"min_lat", bbox.min_lat},
          {"max_lat", bbox.max_lat},
          {"min_lon", bbox.min_lon},
          {"max_lon", bbox.max_lon}};
}

GeoBBox bbox_from_json(const nlohmann::json& j) {
  return {j.at("min_lat").get<double>(), j.at("max_lat").get<double>(),
          j.at("min_lon").get<double>(), j.at("max_lon").get<double>()};
}

}  // namespace geoforge

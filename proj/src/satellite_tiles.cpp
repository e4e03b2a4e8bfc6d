// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "geoforge/satellite_tiles.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numbers>
#include <optional>
#include <thread>

#include "geoforge/error.hpp"
#include "geoforge/io.hpp"
#include "geoforge/polygon.hpp"
#include "geoforge/rng.hpp"

namespace geoforge {

namespace {

void check_zoom(int zoom) {
  if (zoom < 0 || zoom > kMaxTileZoom) {
    throw Error(Errc::kInvalidArgument, fmt::format("zoom {} outside [0, {}]", zoom, kMaxTileZoom));
  }
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) h = (h ^ b) * 0x100000001b3ULL;
  return h;
}

}  // namespace

std::string TileCoord::to_string() const { return fmt::format("{}/{}/{}", zoom, x, y); }

TileFraction latlon_to_tile_fraction(double lat, double lon, int zoom) {
  check_zoom(zoom);
  if (!std::isfinite(lat) || std::abs(lat) > kMaxMercatorLat) {
    throw Error(Errc::kOutOfProjection, fmt::format("latitude {} beyond the Web Mercator limit {}", lat, kMaxMercatorLat));
  }
  if (!std::isfinite(lon) || lon < -180.0 || lon > 180.0) {
    throw Error(Errc::kInvalidArgument, fmt::format("longitude {} outside [-180, 180]", lon));
  }
  const double n = std::ldexp(1.0, zoom);
  const double phi = lat * std::numbers::pi / 180.0;
  return {(lon + 180.0) / 360.0 * n,
          (1.0 - std::log(std::tan(phi) + 1.0 / std::cos(phi)) / std::numbers::pi) / 2.0 * n};
}

TilePosition latlon_to_tile(double lat, double lon, int zoom) {
  const TileFraction f = latlon_to_tile_fraction(lat, lon, zoom);
  const double last = std::ldexp(1.0, zoom) - 1.0;
  const double tx = std::clamp(std::floor(f.x), 0.0, last);
  const double ty = std::clamp(std::floor(f.y), 0.0, last);
  return {{zoom, static_cast<int>(tx), static_cast<int>(ty)}, f.x - tx, f.y - ty};
}

LatLon tile_fraction_to_latlon(double x, double y, int zoom) {
  check_zoom(zoom);
  const double n = std::ldexp(1.0, zoom);
  const double lon = x / n * 360.0 - 180.0;
  const double lat = std::atan(std::sinh(std::numbers::pi * (1.0 - 2.0 * y / n))) * 180.0 / std::numbers::pi;
  return {lat, lon};
}

std::string tile_url(std::string_view url_template, const TileCoord& tile, std::string_view api_key) {
  std::string url(url_template);
  replace_all(url, "{z}", std::to_string(tile.zoom));
  replace_all(url, "{x}", std::to_string(tile.x));
  replace_all(url, "{y}", std::to_string(tile.y));
  if (url.find("{key}") != std::string::npos) {
    replace_all(url, "{key}", url_encode(api_key));
  } else if (!api_key.empty()) {
    url += (url.find('?') == std::string::npos ? '?' : '&');
    url += "access_token=" + url_encode(api_key);
  }
  return url;
}

PixelBounds bbox_pixel_bounds(const GeoBBox& bbox, int zoom, int tile_size) {
  bbox.validate();
  if (tile_size <= 0) throw Error(Errc::kInvalidArgument, "tile size must be positive");
  const TileFraction nw = latlon_to_tile_fraction(bbox.max_lat, bbox.min_lon, zoom);
  const TileFraction se = latlon_to_tile_fraction(bbox.min_lat, bbox.max_lon, zoom);
  const auto world = static_cast<std::int64_t>(std::ldexp(1.0, zoom)) * tile_size;
  PixelBounds b;
  b.x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(nw.x * tile_size)), 0, world - 1);
  b.y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(nw.y * tile_size)), 0, world - 1);
  b.x1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(se.x * tile_size)), 0, world);
  b.y1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(se.y * tile_size)), 0, world);
  b.x1 = std::max(b.x1, b.x0 + 1);
  b.y1 = std::max(b.y1, b.y0 + 1);
  return b;
}

GeoImage fetch_and_stitch(const GeoBBox& bbox, int zoom, std::string_view url_template, Transport& transport,
                          const StitchOptions& options) {
  if (url_template.find("{z}") == std::string_view::npos || url_template.find("{x}") == std::string_view::npos ||
      url_template.find("{y}") == std::string_view::npos) {
    throw Error(Errc::kInvalidArgument, fmt::format("tile url template '{}' lacks {{z}}/{{x}}/{{y}}", url_template));
  }
  const int ts = options.tile_size;
  const PixelBounds b = bbox_pixel_bounds(bbox, zoom, ts);
  const int tx0 = static_cast<int>(b.x0 / ts), tx1 = static_cast<int>((b.x1 - 1) / ts);
  const int ty0 = static_cast<int>(b.y0 / ts), ty1 = static_cast<int>((b.y1 - 1) / ts);
  const int cols = tx1 - tx0 + 1;
  const std::size_t count = static_cast<std::size_t>(cols) * (ty1 - ty0 + 1);

  std::vector<std::optional<RgbaImage>> tiles(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      const TileCoord coord{zoom, tx0 + static_cast<int>(i % cols), ty0 + static_cast<int>(i / cols)};
      try {
        HttpRequest request;
        request.url = tile_url(url_template, coord, options.api_key);
        HttpResponse response;
        try {
          response = send_with_retry(transport, request, options.retry);
        } catch (const Error& e) {
          throw Error(Errc::kNetworkError, fmt::format("tile {}: {}", coord.to_string(), e.what()));
        }
        if (response.status != 200) {
          throw Error(Errc::kNetworkError, fmt::format("tile {}: HTTP {}", coord.to_string(), response.status));
        }
        RgbaImage image;
        try {
          image = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(response.body.data()),
                                         response.body.size()));
        } catch (const Error& e) {
          throw Error(Errc::kTileDecodeError, fmt::format("tile {}: {}", coord.to_string(), e.what()));
        }
        if (image.width != ts || image.height != ts) {
          throw Error(Errc::kTileDecodeError, fmt::format("tile {}: expected {}x{} pixels, got {}x{}",
                                                          coord.to_string(), ts, ts, image.width, image.height));
        }
        tiles[i] = std::move(image);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(options.max_in_flight, 1)), 1,
                                                      count);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  GeoImage out;
  out.pixels.width = static_cast<int>(b.x1 - b.x0);
  out.pixels.height = static_cast<int>(b.y1 - b.y0);
  out.pixels.rgba.assign(static_cast<std::size_t>(out.pixels.width) * out.pixels.height * 4, 0);
  for (std::int64_t gy = b.y0; gy < b.y1; ++gy) {
    const int row_tile = static_cast<int>(gy / ts) - ty0;
    const int in_y = static_cast<int>(gy % ts);
    for (int col_tile = 0; col_tile < cols; ++col_tile) {
      const std::int64_t tile_x0 = static_cast<std::int64_t>(tx0 + col_tile) * ts;
      const std::int64_t from = std::max(b.x0, tile_x0), to = std::min(b.x1, tile_x0 + ts);
      if (from >= to) continue;
      const RgbaImage& tile = *tiles[static_cast<std::size_t>(row_tile) * cols + col_tile];
      std::copy_n(&tile.rgba[(static_cast<std::size_t>(in_y) * ts + (from - tile_x0)) * 4], (to - from) * 4,
                  &out.pixels.rgba[(static_cast<std::size_t>(gy - b.y0) * out.pixels.width + (from - b.x0)) * 4]);
    }
  }
  const LatLon nw = tile_fraction_to_latlon(static_cast<double>(b.x0) / ts, static_cast<double>(b.y0) / ts, zoom);
  const LatLon se = tile_fraction_to_latlon(static_cast<double>(b.x1) / ts, static_cast<double>(b.y1) / ts, zoom);
  out.geo = {nw.lat, nw.lon, (se.lon - nw.lon) / out.pixels.width, (se.lat - nw.lat) / out.pixels.height, zoom};
  return out;
}

int choose_zoom(const GeoBBox& bbox, int min_long_side_px, int max_zoom, int tile_size) {
  bbox.validate();
  max_zoom = std::clamp(max_zoom, 0, kMaxTileZoom);
  for (int z = 0; z < max_zoom; ++z) {
    const TileFraction nw = latlon_to_tile_fraction(bbox.max_lat, bbox.min_lon, z);
    const TileFraction se = latlon_to_tile_fraction(bbox.min_lat, bbox.max_lon, z);
    const double long_side = std::max(se.x - nw.x, se.y - nw.y) * tile_size;
    if (long_side >= min_long_side_px) return z;
  }
  return max_zoom;
}

GeoImage crop_geo_image(const GeoImage& image, const GeoBBox& bbox) {
  const GeoTransform& g = image.geo;
  if (g.deg_per_px_x == 0.0 || g.deg_per_px_y == 0.0) {
    throw Error(Errc::kInvalidArgument, "image has a degenerate geo transform");
  }
  const auto clamp_px = [](double v, int hi) {
    return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi)));
  };
  const double cx0 = (bbox.min_lon - g.origin_lon) / g.deg_per_px_x;
  const double cx1 = (bbox.max_lon - g.origin_lon) / g.deg_per_px_x;
  const double ry0 = (bbox.max_lat - g.origin_lat) / g.deg_per_px_y;
  const double ry1 = (bbox.min_lat - g.origin_lat) / g.deg_per_px_y;
  const int col0 = clamp_px(std::floor(std::min(cx0, cx1)), image.width());
  const int col1 = clamp_px(std::ceil(std::max(cx0, cx1)), image.width());
  const int row0 = clamp_px(std::floor(std::min(ry0, ry1)), image.height());
  const int row1 = clamp_px(std::ceil(std::max(ry0, ry1)), image.height());
  if (col1 <= col0 || row1 <= row0) {
    throw Error(Errc::kFootprintOutsideImage, "crop window lies outside the image");
  }
  GeoImage out;
  out.pixels.width = col1 - col0;
  out.pixels.height = row1 - row0;
  out.pixels.rgba.resize(static_cast<std::size_t>(out.pixels.width) * out.pixels.height * 4);
  for (int row = row0; row < row1; ++row) {
    std::copy_n(&image.pixels.rgba[(static_cast<std::size_t>(row) * image.width() + col0) * 4], out.pixels.width * 4,
                &out.pixels.rgba[static_cast<std::size_t>(row - row0) * out.pixels.width * 4]);
  }
  out.geo = g;
  out.geo.origin_lat = g.origin_lat + row0 * g.deg_per_px_y;
  out.geo.origin_lon = g.origin_lon + col0 * g.deg_per_px_x;
  return out;
}

GeoImage mask_with_footprint(const GeoImage& image, const GeoFootprint& footprint) {
  const auto to_ring = [](const std::vector<LatLon>& pts) {
    Ring ring;
    ring.reserve(pts.size());
    for (const auto& p : pts) ring.push_back({p.lon, p.lat});
    return ring;
  };
  const Ring outer = to_ring(footprint.outer);
  std::vector<Ring> holes;
  for (const auto& h : footprint.holes) holes.push_back(to_ring(h));
  const GeoTransform& g = image.geo;
  const double lon_a = g.origin_lon, lon_b = g.origin_lon + image.width() * g.deg_per_px_x;
  const double lat_a = g.origin_lat, lat_b = g.origin_lat + image.height() * g.deg_per_px_y;
  const Box2 extent{std::min(lon_a, lon_b), std::min(lat_a, lat_b), std::max(lon_a, lon_b), std::max(lat_a, lat_b)};
  if (outer.size() < 3 || !bounds(outer).intersects(extent)) {
    throw Error(Errc::kFootprintOutsideImage,
                fmt::format("footprint {} does not intersect the image extent", footprint.source_id));
  }
  GeoImage out = image;
  for (int row = 0; row < image.height(); ++row)
    for (int col = 0; col < image.width(); ++col) {
      const LatLon c = g.pixel_center(col, row);
      const bool inside = point_in_polygon({c.lon, c.lat}, outer, holes);
      out.pixels.rgba[(static_cast<std::size_t>(row) * image.width() + col) * 4 + 3] = inside ? 255 : 0;
    }
  return out;
}

std::string default_refine_prompt() {
  return "INPUT\n"
         "A north-up satellite crop of one building seen from above. Pixels outside the building outline are "
         "transparent and carry no information.\n\n"
         "DESIRED OUTPUT\n"
         "The same roof at the same scale and position, rendered as a sharp, evenly lit aerial photograph.\n\n"
         "OPERATIONS\n"
         "Remove blur and compression noise. Recover crisp roof edges and surface texture. Balance exposure "
         "across the roof.\n\n"
         "DO NOT\n"
         "Do not move, resize or reshape the outline. Do not add structures, vehicles, vegetation, text or "
         "shadows. Keep the transparent background transparent.\n";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char ch : text) {
    if (ch != '\n' && ch != '\r' && ch != ' ' && ch != '\t') clean.push_back(ch);
  }
  if (clean.size() % 4 != 0) throw Error(Errc::kFormatError, "base64 input length is not a multiple of 4");
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw Error(Errc::kFormatError, "invalid base64 input");
  std::size_t padding = 0;
  if (!clean.empty() && clean.back() == '=') ++padding;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

GeoImage refine_image(const GeoImage& image, std::string_view prompt, const RefineOptions& options,
                      Transport* transport) {
  if (options.provider == RefineProvider::kMock) return image;
  const char* key = std::getenv(options.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw Error(Errc::kMissingCredentials, fmt::format("remote refinement needs ${}", options.api_key_env));
  }
  if (transport == nullptr) throw Error(Errc::kInvalidArgument, "remote refinement needs a transport");

  const std::vector<std::uint8_t> png = encode_png(image.pixels);
  const std::string boundary = fmt::format("geoforge-{:016x}", mix64(fnv1a(png)));
  std::string body;
  const auto field = [&](std::string_view name, std::string_view value) {
    body += fmt::format("--{}\r\nContent-Disposition: form-data; name=\"{}\"\r\n\r\n{}\r\n", boundary, name, value);
  };
  field("model", options.model);
  field("prompt", prompt);
  body += fmt::format(
      "--{}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"image.png\"\r\n"
      "Content-Type: image/png\r\n\r\n",
      boundary);
  body.append(reinterpret_cast<const char*>(png.data()), png.size());
  body += fmt::format("\r\n--{}--\r\n", boundary);

  HttpRequest request;
  request.method = "POST";
  request.url = options.url;
  request.body = std::move(body);
  request.content_type = "multipart/form-data; boundary=" + boundary;
  request.headers.emplace_back("Authorization", std::string("Bearer ") + key);
  HttpResponse response;
  try {
    response = send_with_retry(*transport, request, options.retry);
  } catch (const Error& e) {
    throw Error(Errc::kProviderError, fmt::format("refinement request failed: {}", e.what()));
  }
  if (response.status != 200) {
    std::string message = response.body.substr(0, 300);
    try {
      message = nlohmann::json::parse(response.body).at("error").at("message").get<std::string>();
    } catch (const nlohmann::json::exception&) {
    }
    throw Error(Errc::kProviderError, fmt::format("provider returned HTTP {}: {}", response.status, message));
  }
  RgbaImage refined;
  try {
    const auto payload = nlohmann::json::parse(response.body);
    refined = decode_image(base64_decode(payload.at("data").at(0).at("b64_json").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kProviderError, fmt::format("unexpected provider response: {}", e.what()));
  } catch (const Error& e) {
    throw Error(Errc::kProviderError, fmt::format("provider image undecodable: {}", e.what()));
  }
  GeoImage out;
  out.geo = image.geo;
  out.geo.deg_per_px_x *= static_cast<double>(image.width()) / refined.width;
  out.geo.deg_per_px_y *= static_cast<double>(image.height()) / refined.height;
  out.pixels = std::move(refined);
  return out;
}

nlohmann::json to_json(const GeoTransform& geo) {
  return {{"origin_lat", geo.origin_lat},
          {"origin_lon", geo.origin_lon},
          {"deg_per_px_x", geo.deg_per_px_x},
          {"deg_per_px_y", geo.deg_per_px_y},
          {"zoom", geo.zoom}};
}

GeoTransform geo_transform_from_json(const nlohmann::json& j) {
  try {
    return {j.at("origin_lat").get<double>(), j.at("origin_lon").get<double>(), j.at("deg_per_px_x").get<double>(),
            j.at("deg_per_px_y").get<double>(), j.at("zoom").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kFormatError, fmt::format("geo transform: {}", e.what()));
  }
}

void write_geo_image(const GeoImage& image, const std::filesystem::path& path) {
  write_bytes(path, encode_png(image.pixels));
  write_text(std::filesystem::path(path.string() + ".json"), to_json(image.geo).dump(2) + "\n");
}

GeoImage read_geo_image(const std::filesystem::path& path) {
  GeoImage image;
  image.pixels = decode_png(read_bytes(path));
  const auto sidecar = std::filesystem::path(path.string() + ".json");
  try {
    image.geo = geo_transform_from_json(nlohmann::json::parse(read_text(sidecar)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kFormatError, fmt::format("{}: {}", sidecar.string(), e.what()));
  }
  return image;
}

}  // namespace geoforge

// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

#include "geoforge/geo_ingest.hpp"
#include "geoforge/image_io.hpp"
#include "geoforge/transport.hpp"

namespace geoforge {

inline constexpr int kTileSize = 256;
inline constexpr int kMaxTileZoom = 22;

struct TileCoord {
  int zoom = 0;
  int x = 0;
  int y = 0;

  std::string to_string() const;
  friend bool operator==(const TileCoord&, const TileCoord&) = default;
};

struct TilePosition {
  TileCoord tile;
  double offset_x = 0.0;  // in [0, 1)
  double offset_y = 0.0;  // in [0, 1)
};

/// Fractional slippy-map coordinates (tile units) of a point.
struct TileFraction {
  double x = 0.0;
  double y = 0.0;
};

/// Throws kOutOfProjection for |lat| > kMaxMercatorLat and kInvalidArgument
/// for lon outside [-180, 180] or zoom outside [0, kMaxTileZoom]. Tile
/// indices are clamped to 2^zoom - 1, so lon = 180 lands in the last column
/// with offset 1 instead of wrapping.
TileFraction latlon_to_tile_fraction(double lat, double lon, int zoom);
TilePosition latlon_to_tile(double lat, double lon, int zoom);
/// Inverse Mercator of fractional tile coordinates.
LatLon tile_fraction_to_latlon(double x, double y, int zoom);

/// Affine pixel -> (lat, lon) map. The origin is the top-left corner of
/// pixel (0, 0); the center of pixel (col, row) sits at
/// (origin_lat + (row + 0.5) * deg_per_px_y, origin_lon + (col + 0.5) * deg_per_px_x).
/// deg_per_px_y is negative.
struct GeoTransform {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double deg_per_px_x = 0.0;
  double deg_per_px_y = 0.0;
  int zoom = 0;

  LatLon pixel_center(int col, int row) const noexcept {
    return {origin_lat + (row + 0.5) * deg_per_px_y, origin_lon + (col + 0.5) * deg_per_px_x};
  }
  friend bool operator==(const GeoTransform&, const GeoTransform&) = default;
};

struct GeoImage {
  RgbaImage pixels;
  GeoTransform geo;

  int width() const noexcept { return pixels.width; }
  int height() const noexcept { return pixels.height; }
  friend bool operator==(const GeoImage&, const GeoImage&) = default;
};

/// Substitutes {z}, {x}, {y} and {key}. Without a {key} placeholder a
/// non-empty key is appended as an access_token query parameter.
std::string tile_url(std::string_view url_template, const TileCoord& tile, std::string_view api_key = {});

struct StitchOptions {
  int tile_size = kTileSize;
  /// Upper bound on concurrent tile requests.
  int max_in_flight = 4;
  std::string api_key;
  RetryPolicy retry;
};

/// Pixel rectangle [x0, x1) x [y0, y1) in global pixel coordinates at a zoom.
struct PixelBounds {
  std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// floor/ceil of the bbox corners in global pixel coordinates, at least one
/// pixel wide and tall.
PixelBounds bbox_pixel_bounds(const GeoBBox& bbox, int zoom, int tile_size = kTileSize);

/// Fetches the minimal tile rectangle covering bbox, stitches it and crops
/// to bbox_pixel_bounds. The result does not depend on fetch completion
/// order. On failure the error of the lowest-index tile (row-major) is
/// reported: kNetworkError naming the tile for HTTP failures and
/// kTileDecodeError for undecodable payloads.
GeoImage fetch_and_stitch(const GeoBBox& bbox, int zoom, std::string_view url_template, Transport& transport,
                          const StitchOptions& options = {});

/// Smallest zoom at which the bbox's longer pixel side reaches
/// min_long_side_px, capped at max_zoom.
int choose_zoom(const GeoBBox& bbox, int min_long_side_px = 512, int max_zoom = 19, int tile_size = kTileSize);

/// Sub-image covering bbox under the image's affine transform: pixel
/// columns floor((min_lon - origin_lon) / deg_per_px_x) up to the ceil of the
/// max edge, likewise for rows, clamped to the image. Throws
/// kFootprintOutsideImage when the clamped window is empty.
GeoImage crop_geo_image(const GeoImage& image, const GeoBBox& bbox);

/// Alpha 255 where the pixel center is inside the footprint (even-odd rule,
/// holes excluded), alpha 0 elsewhere; RGB is left untouched. Throws
/// kFootprintOutsideImage when the outer ring misses the image extent.
GeoImage mask_with_footprint(const GeoImage& image, const GeoFootprint& footprint);

enum class RefineProvider { kMock, kRemote };

inline constexpr std::string_view kDefaultRefineUrl = "https://api.openai.com/v1/images/edits";

struct RefineOptions {
  RefineProvider provider = RefineProvider::kMock;
  std::string url = std::string(kDefaultRefineUrl);
  std::string model = "gpt-image-1";
  /// Environment variable holding the bearer token for the remote provider.
  std::string api_key_env = "GEOFORGE_REFINE_KEY";
  RetryPolicy retry;
};

/// Instruction prompt with input, desired output, operations and
/// constraint sections.
std::string default_refine_prompt();

/// The mock provider returns the input unchanged. The remote provider sends
/// a multipart image-edit request and decodes data[0].b64_json; the geo
/// transform is rescaled when the returned image has a different size.
/// Throws kMissingCredentials, kProviderError.
GeoImage refine_image(const GeoImage& image, std::string_view prompt, const RefineOptions& options,
                      Transport* transport);

/// Standard base64 (RFC 4648) via OpenSSL. decode throws kFormatError.
std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

nlohmann::json to_json(const GeoTransform& geo);
GeoTransform geo_transform_from_json(const nlohmann::json& j);

/// Writes the PNG and a sidecar `<path>.json` holding the geo transform.
void write_geo_image(const GeoImage& image, const std::filesystem::path& path);
GeoImage read_geo_image(const std::filesystem::path& path);

}  // namespace geoforge

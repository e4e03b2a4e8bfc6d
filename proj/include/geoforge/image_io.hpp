// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace geoforge {

/// 8-bit RGBA raster, row-major, 4 bytes per pixel.
struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgba;

  friend bool operator==(const RgbaImage&, const RgbaImage&) = default;
};

/// Decodes PNG or JPEG (sniffed from the signature) to RGBA.
/// Throws Error(kFormatError) on unsupported or corrupt input.
RgbaImage decode_image(std::span<const std::uint8_t> bytes);
RgbaImage decode_png(std::span<const std::uint8_t> bytes);
RgbaImage decode_jpeg(std::span<const std::uint8_t> bytes);

/// Lossless 8-bit RGBA PNG.
std::vector<std::uint8_t> encode_png(const RgbaImage& image);

}  // namespace geoforge

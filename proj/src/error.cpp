// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "geoforge/error.hpp"

namespace geoforge {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kInvalidBBox: return "InvalidBBox";
    case Errc::kMalformedResponse: return "MalformedResponse";
    case Errc::kNetworkError: return "NetworkError";
    case Errc::kOutOfProjection: return "OutOfProjection";
    case Errc::kTileDecodeError: return "TileDecodeError";
    case Errc::kFootprintOutsideImage: return "FootprintOutsideImage";
    case Errc::kMissingCredentials: return "MissingCredentials";
    case Errc::kProviderError: return "ProviderError";
    case Errc::kDegenerateFootprint: return "DegenerateFootprint";
    case Errc::kEmptyGrid: return "EmptyGrid";
    case Errc::kFormatError: return "FormatError";
    case Errc::kResolutionMismatch: return "ResolutionMismatch";
    case Errc::kNonPositiveStd: return "NonPositiveStd";
    case Errc::kEmptyCorpus: return "EmptyCorpus";
    case Errc::kLambdaOutOfRange: return "LambdaOutOfRange";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kNonFiniteState: return "NonFiniteState";
    case Errc::kMissingFixture: return "MissingFixture";
    case Errc::kIoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace geoforge

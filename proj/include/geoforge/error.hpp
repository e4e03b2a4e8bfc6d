// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace geoforge {

enum class Errc {
  kInvalidArgument,
  kInvalidBBox,
  kMalformedResponse,
  kNetworkError,
  kOutOfProjection,
  kTileDecodeError,
  kFootprintOutsideImage,
  kMissingCredentials,
  kProviderError,
  kDegenerateFootprint,
  kEmptyGrid,
  kFormatError,
  kResolutionMismatch,
  kNonPositiveStd,
  kEmptyCorpus,
  kLambdaOutOfRange,
  kShapeMismatch,
  kNonFiniteState,
  kMissingFixture,
  kIoError,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure surfaced by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace geoforge

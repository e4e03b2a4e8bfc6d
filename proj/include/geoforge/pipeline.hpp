// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "geoforge/flow_sampler.hpp"
#include "geoforge/geo_ingest.hpp"
#include "geoforge/metrics.hpp"
#include "geoforge/satellite_tiles.hpp"
#include "geoforge/transport.hpp"

namespace geoforge {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kDefaultTileUrl = "https://api.mapbox.com/v4/mapbox.satellite/{z}/{x}/{y}.png";

/// Per-building artifact paths, relative to the manifest directory. Empty
/// strings and maps mean "not produced yet".
struct BuildingRecord {
  std::string source_id;
  std::string dir;
  std::string footprint;
  std::string crop;
  std::string masked;
  std::string refined;
  std::map<std::string, std::string> priors;   // "lod0".."lod2" -> ssvx
  std::string reference;
  std::map<std::string, std::string> latents;  // "start", "final" -> sslt
  std::string generated;
  std::string eval_report;

  friend bool operator==(const BuildingRecord&, const BuildingRecord&) = default;
};

struct StageFailure {
  std::string stage;
  std::string source_id;
  std::string code;
  std::string message;

  friend bool operator==(const StageFailure&, const StageFailure&) = default;
};

struct PipelineManifest {
  GeoBBox bbox;
  std::string tool_version = std::string(kToolVersion);
  std::string created_at;
  std::string updated_at;
  std::string image;
  /// Stage name -> the configuration that stage last ran with.
  nlohmann::json config = nlohmann::json::object();
  std::vector<BuildingRecord> buildings;
  std::vector<StageFailure> failures;

  bool has_failures(std::string_view stage) const;
  friend bool operator==(const PipelineManifest&, const PipelineManifest&) = default;
};

nlohmann::json to_json(const PipelineManifest& manifest);
PipelineManifest manifest_from_json(const nlohmann::json& j);
/// Canonical text form: two-space indentation, sorted keys, trailing newline.
std::string dump_manifest(const PipelineManifest& manifest);
void write_manifest(const PipelineManifest& manifest, const std::filesystem::path& path);
PipelineManifest read_manifest(const std::filesystem::path& path);

/// Filesystem-safe directory name for a source id ("way/12" -> "way_12").
std::string building_slug(std::string_view source_id);

/// UTC timestamp in RFC 3339 form, second resolution.
std::string utc_timestamp();

struct PipelineEnv {
  /// Timestamp source for created_at/updated_at.
  std::function<std::string()> clock = utc_timestamp;
  /// Per-building worker threads; results never depend on this value.
  int workers = 1;
};

struct FetchOptions {
  std::string overpass_url = std::string(kDefaultOverpassUrl);
  std::string tile_url = std::string(kDefaultTileUrl);
  std::string tile_key;
  /// 0 selects choose_zoom.
  int zoom = 0;
  int max_in_flight = 4;
  /// Fractional padding around each footprint's bounds for its image crop.
  double crop_padding = 0.1;
  RetryPolicy retry;
};

/// Footprints + area image + per-building masked crops into out_dir, merged
/// with any manifest already there. Returns the manifest as written.
PipelineManifest cmd_fetch(const GeoBBox& bbox, const std::filesystem::path& out_dir, const FetchOptions& options,
                           Transport& transport, const PipelineEnv& env = {});

/// One SSVX prior per building per requested LOD. Degenerate footprints are
/// recorded as failures and skipped.
PipelineManifest cmd_priorize(const std::filesystem::path& manifest_path, const std::vector<LodLevel>& lods,
                              int resolution, const PipelineEnv& env = {});

struct GenerateOptions {
  FlowConfig flow;
  LodLevel prior = LodLevel::kLod1;
  double tau = kDefaultTau;
};

/// Per-building seed: a hash of the run seed and the building's source id.
std::uint64_t building_seed(std::uint64_t seed, std::string_view source_id);

/// Validates options before touching the filesystem, then per building:
/// prior -> generate -> generated.ssvx, start/final latents, reference
/// raster of the footprint, and an eval report against that reference.
PipelineManifest cmd_generate(const std::filesystem::path& manifest_path, const std::filesystem::path& model_path,
                              const GenerateOptions& options, const PipelineEnv& env = {});

EvalReport cmd_eval(const std::filesystem::path& pred_path, const std::filesystem::path& gt_path, double tau);

/// Re-evaluates every building that has a generated grid and a reference.
PipelineManifest cmd_eval_manifest(const std::filesystem::path& manifest_path, double tau,
                                   const PipelineEnv& env = {});

/// Refines every masked crop of the manifest into refined.png.
PipelineManifest cmd_refine_manifest(const std::filesystem::path& manifest_path, const RefineOptions& options,
                                     const std::string& prompt, Transport* transport, const PipelineEnv& env = {});

/// 0 success, 1 some buildings failed in `stage`, 2 is reserved for fatal errors.
int exit_code_for(const PipelineManifest& manifest, std::string_view stage);

}  // namespace geoforge

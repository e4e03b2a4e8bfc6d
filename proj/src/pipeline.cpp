// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "geoforge/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <optional>
#include <thread>

#include "geoforge/error.hpp"
#include "geoforge/io.hpp"
#include "geoforge/rng.hpp"

namespace geoforge {

namespace fs = std::filesystem;

namespace {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Exceptions are
/// rethrown afterwards, lowest index first.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1,
                                                      std::max<std::size_t>(count, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Outcome {
  BuildingRecord record;
  std::optional<StageFailure> failure;
};

StageFailure failure_from(std::string_view stage, const std::string& source_id, const Error& e) {
  return {std::string(stage), source_id, std::string(to_string(e.code())), e.what()};
}

void replace_stage_failures(PipelineManifest& m, std::string_view stage, const std::vector<Outcome>& outcomes) {
  std::erase_if(m.failures, [&](const StageFailure& f) { return f.stage == stage; });
  for (const auto& o : outcomes) {
    if (o.failure) m.failures.push_back(*o.failure);
  }
}

/// Runs `work` per building, turning geoforge errors into recorded failures.
template <typename Work>
std::vector<Outcome> for_each_building(const PipelineManifest& m, std::string_view stage, int workers, Work&& work) {
  std::vector<Outcome> outcomes(m.buildings.size());
  parallel_for(m.buildings.size(), workers, [&](std::size_t i) {
    outcomes[i].record = m.buildings[i];
    try {
      work(outcomes[i].record);
    } catch (const Error& e) {
      spdlog::warn("{} {}: {}", stage, m.buildings[i].source_id, e.what());
      outcomes[i].failure = failure_from(stage, m.buildings[i].source_id, e);
    }
  });
  return outcomes;
}

void adopt(PipelineManifest& m, const std::vector<Outcome>& outcomes) {
  for (std::size_t i = 0; i < outcomes.size(); ++i) m.buildings[i] = outcomes[i].record;
}

std::string rel(const fs::path& p) { return p.generic_string(); }

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

fs::path manifest_dir(const fs::path& manifest_path) {
  const fs::path dir = manifest_path.parent_path();
  return dir.empty() ? fs::path(".") : dir;
}

PipelineManifest load_for_stage(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) {
    throw Error(Errc::kIoError, fmt::format("manifest not found: '{}'", manifest_path.string()));
  }
  return read_manifest(manifest_path);
}

void stamp_and_write(PipelineManifest& m, const fs::path& manifest_path, const PipelineEnv& env) {
  m.tool_version = std::string(kToolVersion);
  m.updated_at = env.clock();
  if (m.created_at.empty()) m.created_at = m.updated_at;
  write_manifest(m, manifest_path);
}

template <typename T>
void put_if(nlohmann::json& j, const char* key, const T& value) {
  if (!value.empty()) j[key] = value;
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

bool PipelineManifest::has_failures(std::string_view stage) const {
  return std::any_of(failures.begin(), failures.end(), [&](const StageFailure& f) { return f.stage == stage; });
}

nlohmann::json to_json(const PipelineManifest& m) {
  nlohmann::json buildings = nlohmann::json::array();
  for (const auto& b : m.buildings) {
    nlohmann::json j = {{"source_id", b.source_id}};
    put_if(j, "dir", b.dir);
    put_if(j, "footprint", b.footprint);
    put_if(j, "crop", b.crop);
    put_if(j, "masked", b.masked);
    put_if(j, "refined", b.refined);
    put_if(j, "priors", b.priors);
    put_if(j, "reference", b.reference);
    put_if(j, "latents", b.latents);
    put_if(j, "generated", b.generated);
    put_if(j, "eval_report", b.eval_report);
    buildings.push_back(std::move(j));
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : m.failures) {
    failures.push_back({{"stage", f.stage}, {"source_id", f.source_id}, {"code", f.code}, {"message", f.message}});
  }
  nlohmann::json j = {{"tool_version", m.tool_version},
                      {"created_at", m.created_at},
                      {"updated_at", m.updated_at},
                      {"bbox", to_json(m.bbox)},
                      {"config", m.config},
                      {"buildings", std::move(buildings)},
                      {"failures", std::move(failures)}};
  put_if(j, "image", m.image);
  return j;
}

PipelineManifest manifest_from_json(const nlohmann::json& j) {
  try {
    PipelineManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.updated_at = j.at("updated_at").get<std::string>();
    m.bbox = bbox_from_json(j.at("bbox"));
    m.config = j.at("config");
    get_if(j, "image", m.image);
    for (const auto& bj : j.at("buildings")) {
      BuildingRecord b;
      b.source_id = bj.at("source_id").get<std::string>();
      get_if(bj, "dir", b.dir);
      get_if(bj, "footprint", b.footprint);
      get_if(bj, "crop", b.crop);
      get_if(bj, "masked", b.masked);
      get_if(bj, "refined", b.refined);
      get_if(bj, "priors", b.priors);
      get_if(bj, "reference", b.reference);
      get_if(bj, "latents", b.latents);
      get_if(bj, "generated", b.generated);
      get_if(bj, "eval_report", b.eval_report);
      m.buildings.push_back(std::move(b));
    }
    for (const auto& fj : j.at("failures")) {
      m.failures.push_back({fj.at("stage").get<std::string>(), fj.at("source_id").get<std::string>(),
                            fj.at("code").get<std::string>(), fj.at("message").get<std::string>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kFormatError, fmt::format("manifest: {}", e.what()));
  }
}

std::string dump_manifest(const PipelineManifest& manifest) { return to_json(manifest).dump(2) + "\n"; }

void write_manifest(const PipelineManifest& manifest, const fs::path& path) {
  write_text(path, dump_manifest(manifest));
}

PipelineManifest read_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kFormatError, fmt::format("{}: {}", path.string(), e.what()));
  }
  return manifest_from_json(j);
}

std::string building_slug(std::string_view source_id) {
  std::string slug;
  for (char ch : source_id) {
    const bool keep = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-';
    slug.push_back(keep ? ch : '_');
  }
  return slug.empty() ? std::string("building") : slug;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                     tm.tm_min, tm.tm_sec);
}

PipelineManifest cmd_fetch(const GeoBBox& bbox, const fs::path& out_dir, const FetchOptions& options,
                           Transport& transport, const PipelineEnv& env) {
  bbox.validate();
  const fs::path manifest_path = out_dir / kManifestFile;
  PipelineManifest m;
  if (fs::exists(manifest_path)) m = read_manifest(manifest_path);
  const std::vector<BuildingRecord> previous = std::move(m.buildings);
  m.buildings.clear();
  m.bbox = bbox;

  const ParseResult parsed = fetch_buildings(bbox, options.overpass_url, transport, options.retry);
  const int zoom = options.zoom > 0 ? options.zoom : choose_zoom(bbox);
  StitchOptions stitch;
  stitch.max_in_flight = options.max_in_flight;
  stitch.api_key = options.tile_key;
  stitch.retry = options.retry;
  const GeoImage area = fetch_and_stitch(bbox, zoom, options.tile_url, transport, stitch);
  m.image = "images/area.png";
  write_geo_image(area, out_dir / m.image);
  write_json(out_dir / "footprints.json", footprints_to_json(parsed.footprints));

  for (const auto& fp : parsed.footprints) {
    const auto it = std::find_if(previous.begin(), previous.end(),
                                 [&](const BuildingRecord& r) { return r.source_id == fp.source_id; });
    BuildingRecord record = it != previous.end() ? *it : BuildingRecord{};
    record.source_id = fp.source_id;
    record.dir = rel(fs::path("buildings") / building_slug(fp.source_id));
    m.buildings.push_back(std::move(record));
  }
  auto outcomes = for_each_building(m, "fetch", env.workers, [&](BuildingRecord& r) {
    const auto& fp = *std::find_if(parsed.footprints.begin(), parsed.footprints.end(),
                                   [&](const GeoFootprint& f) { return f.source_id == r.source_id; });
    const fs::path dir(r.dir);
    r.footprint = rel(dir / "footprint.json");
    write_json(out_dir / r.footprint, to_json(fp));
    r.crop.clear();
    r.masked.clear();
    GeoBBox box{fp.outer.front().lat, fp.outer.front().lat, fp.outer.front().lon, fp.outer.front().lon};
    for (const auto& p : fp.outer) {
      box.min_lat = std::min(box.min_lat, p.lat);
      box.max_lat = std::max(box.max_lat, p.lat);
      box.min_lon = std::min(box.min_lon, p.lon);
      box.max_lon = std::max(box.max_lon, p.lon);
    }
    const double pad_lat = (box.max_lat - box.min_lat) * options.crop_padding;
    const double pad_lon = (box.max_lon - box.min_lon) * options.crop_padding;
    box = {box.min_lat - pad_lat, box.max_lat + pad_lat, box.min_lon - pad_lon, box.max_lon + pad_lon};
    const GeoImage crop = crop_geo_image(area, box);
    const GeoImage masked = mask_with_footprint(crop, fp);
    r.crop = rel(dir / "crop.png");
    write_geo_image(crop, out_dir / r.crop);
    r.masked = rel(dir / "masked.png");
    write_geo_image(masked, out_dir / r.masked);
  });
  adopt(m, outcomes);
  replace_stage_failures(m, "fetch", outcomes);
  // Warnings about kept buildings are informational; the rest dropped a building.
  for (const auto& w : parsed.warnings) {
    const bool kept = std::any_of(parsed.footprints.begin(), parsed.footprints.end(),
                                  [&](const GeoFootprint& f) { return f.source_id == w.source_id; });
    if (kept) {
      spdlog::warn("fetch {}: {}", w.source_id, w.message);
    } else {
      m.failures.push_back({"fetch", w.source_id, std::string(to_string(Errc::kMalformedResponse)), w.message});
    }
  }
  m.config["fetch"] = {{"overpass_url", options.overpass_url},
                       {"tile_url", options.tile_url},
                       {"zoom", zoom},
                       {"max_in_flight", options.max_in_flight},
                       {"crop_padding", options.crop_padding}};
  stamp_and_write(m, manifest_path, env);
  spdlog::info("fetch: {} buildings, {}x{} px area image at zoom {}", m.buildings.size(), area.width(), area.height(), zoom);
  return m;
}

PipelineManifest cmd_priorize(const fs::path& manifest_path, const std::vector<LodLevel>& lods, int resolution,
                              const PipelineEnv& env) {
  if (lods.empty()) throw Error(Errc::kInvalidArgument, "no LOD levels requested");
  if (resolution < 8) throw Error(Errc::kInvalidArgument, fmt::format("resolution must be >= 8, got {}", resolution));
  PipelineManifest m = load_for_stage(manifest_path);
  const fs::path root = manifest_dir(manifest_path);
  auto outcomes = for_each_building(m, "priorize", env.workers, [&](BuildingRecord& r) {
    r.priors.clear();
    if (r.footprint.empty()) throw Error(Errc::kIoError, "building has no footprint");
    const GeoFootprint fp = footprint_from_json(nlohmann::json::parse(read_text(root / r.footprint)));
    const VoxelGrid raster = rasterize_footprint(fp, resolution);
    for (LodLevel lod : lods) {
      const std::string name = to_string(lod);
      const std::string path = rel(fs::path(r.dir) / (name + ".ssvx"));
      write_ssvx(lod_prior(raster, lod), root / path);
      r.priors[name] = path;
    }
  });
  adopt(m, outcomes);
  replace_stage_failures(m, "priorize", outcomes);
  nlohmann::json names = nlohmann::json::array();
  for (LodLevel lod : lods) names.push_back(to_string(lod));
  m.config["priorize"] = {{"lods", names}, {"resolution", resolution}};
  stamp_and_write(m, manifest_path, env);
  return m;
}

std::uint64_t building_seed(std::uint64_t seed, std::string_view source_id) {
  return mix64(seed ^ mix64(fnv1a(source_id)));
}

PipelineManifest cmd_generate(const fs::path& manifest_path, const fs::path& model_path,
                              const GenerateOptions& options, const PipelineEnv& env) {
  options.flow.validate();
  if (!(options.tau > 0.0)) throw Error(Errc::kInvalidArgument, fmt::format("tau must be > 0, got {}", options.tau));
  if (!fs::exists(model_path)) throw Error(Errc::kIoError, fmt::format("model not found: '{}'", model_path.string()));
  const ToyModel model = load_toy_model(model_path);
  const int cells = static_cast<int>(std::lround(std::sqrt(model.velocity.arch().cond_dim)));
  if (cells * cells != model.velocity.arch().cond_dim) {
    throw Error(Errc::kShapeMismatch, fmt::format("condition size {} is not a square silhouette",
                                                  model.velocity.arch().cond_dim));
  }
  PipelineManifest m = load_for_stage(manifest_path);
  const fs::path root = manifest_dir(manifest_path);
  const std::string prior_name = to_string(options.prior);

  auto outcomes = for_each_building(m, "generate", env.workers, [&](BuildingRecord& r) {
    r.latents.clear();
    r.generated.clear();
    r.reference.clear();
    r.eval_report.clear();
    const auto it = r.priors.find(prior_name);
    if (it == r.priors.end()) throw Error(Errc::kIoError, fmt::format("building has no {} prior", prior_name));
    const VoxelGrid prior = read_ssvx(root / it->second);
    if (prior.n() != model.codec.n()) {
      throw Error(Errc::kResolutionMismatch,
                  fmt::format("prior is {}^3 but the model codec expects {}^3", prior.n(), model.codec.n()));
    }
    const GeoFootprint fp = footprint_from_json(nlohmann::json::parse(read_text(root / r.footprint)));
    const VoxelGrid reference = rasterize_footprint(fp, prior.n());
    const ConditionVector cond = silhouette_condition(reference, cells);
    FlowConfig flow = options.flow;
    flow.seed = building_seed(options.flow.seed, r.source_id);
    const GenerationTrace trace =
        generate_traced(model.velocity, &prior, &cond, flow, model.codec, model.stats);
    const fs::path dir(r.dir);
    r.latents["start"] = rel(dir / "start.sslt");
    r.latents["final"] = rel(dir / "final.sslt");
    write_sslt(trace.start, root / r.latents["start"]);
    write_sslt(trace.final_state, root / r.latents["final"]);
    r.generated = rel(dir / "generated.ssvx");
    write_ssvx(trace.grid, root / r.generated);
    r.reference = rel(dir / "reference.ssvx");
    write_ssvx(reference, root / r.reference);
    const EvalReport report = eval_report(trace.grid, reference, options.tau);
    r.eval_report = rel(dir / "eval.json");
    write_json(root / r.eval_report, to_json(report));
  });
  adopt(m, outcomes);
  replace_stage_failures(m, "generate", outcomes);
  m.config["generate"] = {{"model", model_path.generic_string()}, {"steps", options.flow.steps},
                          {"cfg_scale", options.flow.cfg_scale},  {"lambda", options.flow.lambda},
                          {"seed", options.flow.seed},            {"prior", prior_name},
                          {"tau", options.tau}};
  stamp_and_write(m, manifest_path, env);
  return m;
}

EvalReport cmd_eval(const fs::path& pred_path, const fs::path& gt_path, double tau) {
  return eval_report(read_ssvx(pred_path), read_ssvx(gt_path), tau);
}

PipelineManifest cmd_eval_manifest(const fs::path& manifest_path, double tau, const PipelineEnv& env) {
  if (!(tau > 0.0)) throw Error(Errc::kInvalidArgument, fmt::format("tau must be > 0, got {}", tau));
  PipelineManifest m = load_for_stage(manifest_path);
  const fs::path root = manifest_dir(manifest_path);
  auto outcomes = for_each_building(m, "eval", env.workers, [&](BuildingRecord& r) {
    if (r.generated.empty() || r.reference.empty()) {
      r.eval_report.clear();
      throw Error(Errc::kIoError, "building has no generated grid or reference");
    }
    const EvalReport report = cmd_eval(root / r.generated, root / r.reference, tau);
    r.eval_report = rel(fs::path(r.dir) / "eval.json");
    write_json(root / r.eval_report, to_json(report));
  });
  adopt(m, outcomes);
  replace_stage_failures(m, "eval", outcomes);
  m.config["eval"] = {{"tau", tau}};
  stamp_and_write(m, manifest_path, env);
  return m;
}

PipelineManifest cmd_refine_manifest(const fs::path& manifest_path, const RefineOptions& options,
                                     const std::string& prompt, Transport* transport, const PipelineEnv& env) {
  PipelineManifest m = load_for_stage(manifest_path);
  const fs::path root = manifest_dir(manifest_path);
  auto outcomes = for_each_building(m, "refine", env.workers, [&](BuildingRecord& r) {
    r.refined.clear();
    if (r.masked.empty()) throw Error(Errc::kIoError, "building has no masked image");
    const GeoImage refined = refine_image(read_geo_image(root / r.masked), prompt, options, transport);
    r.refined = rel(fs::path(r.dir) / "refined.png");
    write_geo_image(refined, root / r.refined);
  });
  adopt(m, outcomes);
  replace_stage_failures(m, "refine", outcomes);
  m.config["refine"] = {{"provider", options.provider == RefineProvider::kMock ? "mock" : "remote"},
                        {"url", options.url},
                        {"model", options.model}};
  stamp_and_write(m, manifest_path, env);
  return m;
}

int exit_code_for(const PipelineManifest& manifest, std::string_view stage) {
  return manifest.has_failures(stage) ? 1 : 0;
}

}  // namespace geoforge

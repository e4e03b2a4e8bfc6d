// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

// geoforge: bounding box -> footprints -> priors -> generated grids -> eval.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "geoforge/error.hpp"
#include "geoforge/flow_sampler.hpp"
#include "geoforge/io.hpp"
#include "geoforge/pipeline.hpp"
#include "geoforge/satellite_tiles.hpp"
#include "geoforge/transport.hpp"
#include "geoforge/voxel_prior.hpp"

namespace fs = std::filesystem;
using namespace geoforge;

namespace {

constexpr int kExitFatal = 2;

std::string env_or(const char* name, std::string_view fallback) {
  const char* value = std::getenv(name);
  return value != nullptr && *value != '\0' ? std::string(value) : std::string(fallback);
}

GeoBBox parse_bbox(const std::string& text) {
  std::vector<double> v;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw Error(Errc::kInvalidBBox, fmt::format("--bbox: '{}' is not a number", part));
    }
  }
  if (v.size() != 4) throw Error(Errc::kInvalidBBox, "--bbox expects minlat,minlon,maxlat,maxlon");
  GeoBBox bbox{v[0], v[2], v[1], v[3]};
  bbox.validate();
  return bbox;
}

std::vector<LodLevel> parse_lods(const std::string& text) {
  if (text == "all") return {LodLevel::kLod0, LodLevel::kLod1, LodLevel::kLod2};
  if (text == "0") return {LodLevel::kLod0};
  if (text == "1") return {LodLevel::kLod1};
  if (text == "2") return {LodLevel::kLod2};
  throw Error(Errc::kInvalidArgument, fmt::format("--lod must be 0, 1, 2 or all, got '{}'", text));
}

RetryPolicy offline_retry() {
  RetryPolicy retry;
  retry.max_attempts = 1;
  return retry;
}

std::vector<fs::path> list_ssvx(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::kIoError, fmt::format("corpus directory not found: '{}'", dir.string()));
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ssvx") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GeoForge: prior-guided 3D building geometry from a bounding box"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kToolVersion));
  bool verbose = false;
  bool quiet = false;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings and errors only");
  app.add_option("--workers", workers, "Per-building worker threads")->check(CLI::PositiveNumber);

  // fetch
  auto* fetch = app.add_subcommand("fetch", "Footprints, satellite image and masked crops for a bbox");
  std::string bbox_text;
  fs::path out_dir;
  bool offline = false;
  fs::path fixtures = "fixtures/zurich";
  FetchOptions fetch_opts;
  fetch_opts.overpass_url = env_or("GEOFORGE_OVERPASS_URL", kDefaultOverpassUrl);
  fetch_opts.tile_url = env_or("GEOFORGE_TILE_URL", kDefaultTileUrl);
  fetch->add_option("--bbox", bbox_text, "minlat,minlon,maxlat,maxlon")->required();
  fetch->add_option("--out", out_dir, "Output directory")->required();
  fetch->add_flag("--offline", offline, "Serve every request from replay fixtures");
  fetch->add_option("--fixtures", fixtures, "Replay fixture directory (with index.json)")->capture_default_str();
  fetch->add_option("--overpass-url", fetch_opts.overpass_url, "Overpass endpoint")->capture_default_str();
  fetch->add_option("--tile-url", fetch_opts.tile_url, "Tile URL template with {z} {x} {y} [{key}]")->capture_default_str();
  fetch->add_option("--zoom", fetch_opts.zoom, "Tile zoom, 0 = automatic")->capture_default_str()->check(CLI::Range(0, kMaxTileZoom));
  fetch->add_option("--max-in-flight", fetch_opts.max_in_flight, "Concurrent tile requests")->capture_default_str()
      ->check(CLI::PositiveNumber);

  // priorize
  auto* priorize = app.add_subcommand("priorize", "Coarse LOD priors per building");
  fs::path manifest_path;
  std::string lod_text = "all";
  int resolution = 64;
  priorize->add_option("--manifest", manifest_path, "Pipeline manifest")->required();
  priorize->add_option("--lod", lod_text, "0, 1, 2 or all")->capture_default_str();
  priorize->add_option("--resolution", resolution, "Grid resolution")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic building corpus as SSVX files");
  int synth_count = 500;
  std::uint64_t synth_seed = 0;
  fs::path synth_out;
  synth->add_option("--count", synth_count, "Number of shapes")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--resolution", resolution, "Grid resolution")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Corpus seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Train the toy velocity model on an SSVX corpus");
  fs::path corpus_dir;
  fs::path model_out;
  ToyTrainConfig train_cfg;
  train->add_option("--corpus", corpus_dir, "Directory of ground-truth SSVX grids")->required();
  train->add_option("--epochs", train_cfg.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--seed", train_cfg.seed, "Training seed")->capture_default_str();
  train->add_option("--lr", train_cfg.learning_rate, "Adam learning rate")->capture_default_str();
  train->add_option("--batch", train_cfg.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--out", model_out, "Output model (.gftm)")->required();

  // generate
  auto* gen = app.add_subcommand("generate", "Prior-guided generation for every building");
  fs::path model_path;
  GenerateOptions gen_opts;
  int prior_lod = 1;
  gen->add_option("--manifest", manifest_path, "Pipeline manifest")->required();
  gen->add_option("--model", model_path, "Toy model (.gftm)")->required();
  gen->add_option("--lambda", gen_opts.flow.lambda, "0 = prior only, 1 = pure noise")->capture_default_str();
  gen->add_option("--steps", gen_opts.flow.steps, "Euler steps")->capture_default_str();
  gen->add_option("--cfg", gen_opts.flow.cfg_scale, "Classifier-free guidance scale")->capture_default_str();
  gen->add_option("--seed", gen_opts.flow.seed, "Run seed")->capture_default_str();
  gen->add_option("--prior-lod", prior_lod, "Prior LOD used as the start")->capture_default_str()->check(CLI::Range(0, 2));
  gen->add_option("--tau", gen_opts.tau, "F-score threshold")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "IoU, Chamfer and F-score of generated grids");
  fs::path pred_path, gt_path, eval_out;
  double tau = kDefaultTau;
  eval->add_option("--pred", pred_path, "Predicted SSVX");
  eval->add_option("--gt", gt_path, "Ground-truth SSVX");
  eval->add_option("--out", eval_out, "Report path (default <pred>.eval.json)");
  eval->add_option("--manifest", manifest_path, "Re-evaluate every building of a manifest");
  eval->add_option("--tau", tau, "F-score threshold")->capture_default_str();

  // refine
  auto* refine = app.add_subcommand("refine", "Clean up masked satellite crops");
  fs::path image_path, refine_out, prompt_file;
  std::string provider = "mock";
  RefineOptions refine_opts;
  refine->add_option("--image", image_path, "Masked crop (PNG with geo sidecar)");
  refine->add_option("--out", refine_out, "Output image (default <image>.refined.png)");
  refine->add_option("--manifest", manifest_path, "Refine every masked crop of a manifest");
  refine->add_option("--provider", provider, "mock or remote")->capture_default_str()->check(CLI::IsMember({"mock", "remote"}));
  refine->add_option("--refine-url", refine_opts.url, "Image-edit endpoint")->capture_default_str();
  refine->add_option("--model", refine_opts.model, "Provider model name")->capture_default_str();
  refine->add_option("--prompt-file", prompt_file, "Override the bundled prompt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitFatal;
  }

  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);
  spdlog::set_pattern("[%l] %v");
  PipelineEnv env;
  env.workers = workers;

  try {
    if (*fetch) {
      const GeoBBox bbox = parse_bbox(bbox_text);
      std::unique_ptr<Transport> transport;
      if (offline) {
        transport = ReplayTransport::from_directory(fixtures);
        fetch_opts.retry = offline_retry();
      } else {
        fetch_opts.tile_key = env_or("GEOFORGE_TILE_KEY", "");
        transport = std::make_unique<LiveTransport>();
      }
      const auto m = cmd_fetch(bbox, out_dir, fetch_opts, *transport, env);
      fmt::print("{}\n", (out_dir / kManifestFile).string());
      return exit_code_for(m, "fetch");
    }
    if (*priorize) {
      const auto m = cmd_priorize(manifest_path, parse_lods(lod_text), resolution, env);
      return exit_code_for(m, "priorize");
    }
    if (*synth) {
      fs::create_directories(synth_out);
      for (int i = 0; i < synth_count; ++i) {
        write_ssvx(synth_shape(synth_seed + static_cast<std::uint64_t>(i), resolution),
                   synth_out / fmt::format("shape_{:05}.ssvx", i));
      }
      spdlog::info("wrote {} shapes to {}", synth_count, synth_out.string());
      return 0;
    }
    if (*train) {
      std::vector<TrainingShape> corpus;
      for (const auto& file : list_ssvx(corpus_dir)) {
        VoxelGrid gt = read_ssvx(file);
        ConditionVector cond = silhouette_condition(gt);
        corpus.push_back({std::move(gt), std::move(cond)});
      }
      const int n = corpus.empty() ? 64 : corpus.front().gt.n();
      const ToyModel model = train_toy(corpus, train_cfg, ToyArchitecture{}, SurrogateCodec(n));
      save_toy_model(model, model_out);
      spdlog::info("loss {:.4f} -> {:.4f}; model written to {}", model.initial_loss, model.final_loss,
                   model_out.string());
      return 0;
    }
    if (*gen) {
      gen_opts.prior = static_cast<LodLevel>(prior_lod);
      const auto m = cmd_generate(manifest_path, model_path, gen_opts, env);
      return exit_code_for(m, "generate");
    }
    if (*eval) {
      if (!manifest_path.empty()) {
        const auto m = cmd_eval_manifest(manifest_path, tau, env);
        return exit_code_for(m, "eval");
      }
      if (pred_path.empty() || gt_path.empty()) {
        throw Error(Errc::kInvalidArgument, "eval needs --pred and --gt, or --manifest");
      }
      const std::string report = to_json(cmd_eval(pred_path, gt_path, tau)).dump(2) + "\n";
      const fs::path out = eval_out.empty() ? fs::path(pred_path.string() + ".eval.json") : eval_out;
      write_text(out, report);
      fmt::print("{}", report);
      return 0;
    }
    if (*refine) {
      refine_opts.provider = provider == "remote" ? RefineProvider::kRemote : RefineProvider::kMock;
      const std::string prompt = prompt_file.empty() ? default_refine_prompt() : read_text(prompt_file);
      std::unique_ptr<Transport> transport;
      if (refine_opts.provider == RefineProvider::kRemote) transport = std::make_unique<LiveTransport>();
      if (!manifest_path.empty()) {
        const auto m = cmd_refine_manifest(manifest_path, refine_opts, prompt, transport.get(), env);
        return exit_code_for(m, "refine");
      }
      if (image_path.empty()) throw Error(Errc::kInvalidArgument, "refine needs --image or --manifest");
      const GeoImage refined = refine_image(read_geo_image(image_path), prompt, refine_opts, transport.get());
      const fs::path out = refine_out.empty() ? fs::path(image_path).replace_extension(".refined.png") : refine_out;
      write_geo_image(refined, out);
      fmt::print("{}\n", out.string());
      return 0;
    }
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFatal;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFatal;
  }
  return kExitFatal;
}

// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <map>
#include <random>

#include "geoforge/error.hpp"
#include "geoforge/io.hpp"
#include "geoforge/pipeline.hpp"
#include "support.hpp"

namespace geoforge {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

const GeoBBox kBlock{47.3700, 47.3710, 8.5400, 8.5415};

template <typename Fn>
Error error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no geoforge::Error thrown";
  return Error(Errc::kIoError, "none");
}

PipelineEnv fixed_env(int workers = 1, std::string stamp = "2026-01-01T00:00:00Z") {
  PipelineEnv env;
  env.workers = workers;
  env.clock = [stamp] { return stamp; };
  return env;
}

FetchOptions offline_options() {
  FetchOptions o;
  o.retry.max_attempts = 1;
  o.retry.sleep = [](std::chrono::milliseconds) {};
  return o;
}

/// Relative path -> bytes for every regular file under `root`.
std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_bytes(e.path());
  return out;
}

/// Zero-parameter toy model: the identity flow over the default codec.
fs::path write_zero_model(const fs::path& dir) {
  ToyModel model;
  model.stats = {std::vector<double>(8, 0.0), std::vector<double>(8, 0.2)};
  const fs::path path = dir / "zero.gftm";
  save_toy_model(model, path);
  return path;
}

GenerateOptions quick_generate(double lambda = 0.5, std::uint64_t seed = 3) {
  GenerateOptions g;
  g.flow.steps = 8;
  g.flow.lambda = lambda;
  g.flow.seed = seed;
  return g;
}

struct RunResult {
  PipelineManifest fetched, priorized, generated;
};

RunResult run_pipeline(const fs::path& out, const fs::path& model, int workers = 1) {
  auto transport = ReplayTransport::from_directory(testing::fixture_dir() / "zurich");
  RunResult r;
  r.fetched = cmd_fetch(kBlock, out, offline_options(), *transport, fixed_env(workers));
  r.priorized = cmd_priorize(out / "manifest.json", {LodLevel::kLod0, LodLevel::kLod1, LodLevel::kLod2}, 64,
                             fixed_env(workers));
  r.generated = cmd_generate(out / "manifest.json", model, quick_generate(), fixed_env(workers));
  return r;
}

void expect_paths_exist(const fs::path& root, const PipelineManifest& m) {
  auto check = [&](const std::string& p) {
    if (!p.empty()) EXPECT_TRUE(fs::exists(root / p)) << p;
  };
  check(m.image);
  for (const auto& b : m.buildings) {
    for (const auto* p : {&b.footprint, &b.crop, &b.masked, &b.refined, &b.reference, &b.generated, &b.eval_report})
      check(*p);
    for (const auto& [k, p] : b.priors) check(p);
    for (const auto& [k, p] : b.latents) check(p);
  }
}

TEST(Pipeline, OfflineEndToEndOnBundledBlock) {
  TempDir dir("pipe");
  const fs::path model = write_zero_model(dir.path());
  const auto before = LiveTransport::connections_opened();
  const RunResult r = run_pipeline(dir.path() / "out", model);
  EXPECT_EQ(LiveTransport::connections_opened(), before);

  ASSERT_EQ(r.fetched.buildings.size(), 4u);
  for (const auto& b : r.fetched.buildings) {
    EXPECT_FALSE(b.masked.empty()) << b.source_id;
    EXPECT_FALSE(b.crop.empty()) << b.source_id;
  }
  EXPECT_TRUE(fs::exists(dir.path() / "out" / "footprints.json"));
  int priors = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path() / "out"))
    priors += e.path().extension() == ".ssvx" && e.path().filename().string().rfind("lod", 0) == 0 ? 1 : 0;
  EXPECT_EQ(priors, 12);

  const PipelineManifest& m = r.generated;
  EXPECT_TRUE(m.failures.empty());
  int reports = 0;
  for (const auto& b : m.buildings) {
    ASSERT_FALSE(b.eval_report.empty()) << b.source_id;
    const EvalReport rep = eval_report_from_json(nlohmann::json::parse(read_text(dir.path() / "out" / b.eval_report)));
    EXPECT_GE(rep.iou, 0.0);
    EXPECT_LE(rep.iou, 1.0);
    ++reports;
  }
  EXPECT_EQ(reports, 4);
  expect_paths_exist(dir.path() / "out", m);
  EXPECT_EQ(read_manifest(dir.path() / "out" / "manifest.json"), m);
  EXPECT_EQ(exit_code_for(m, "generate"), 0);
}

TEST(Pipeline, ByteIdenticalAcrossRunsAndWorkerCounts) {
  TempDir dir("pipe");
  const fs::path model = write_zero_model(dir.path());
  run_pipeline(dir.path() / "a", model, 1);
  run_pipeline(dir.path() / "b", model, 1);
  run_pipeline(dir.path() / "c", model, 3);
  const auto a = snapshot(dir.path() / "a");
  EXPECT_TRUE(read_manifest(dir.path() / "a" / "manifest.json").failures.empty());
  EXPECT_GT(a.size(), 20u);
  EXPECT_EQ(a, snapshot(dir.path() / "b"));
  EXPECT_EQ(a, snapshot(dir.path() / "c"));
}

TEST(Pipeline, RefetchIsIdempotentExceptTimestamps) {
  TempDir dir("pipe");
  auto transport = ReplayTransport::from_directory(testing::fixture_dir() / "zurich");
  const fs::path out = dir.path() / "out";
  const PipelineManifest first = cmd_fetch(kBlock, out, offline_options(), *transport, fixed_env(1, "T1"));
  auto files = snapshot(out);
  const PipelineManifest second = cmd_fetch(kBlock, out, offline_options(), *transport, fixed_env(1, "T2"));
  auto again = snapshot(out);
  EXPECT_EQ(second.created_at, "T1");
  EXPECT_EQ(second.updated_at, "T2");
  PipelineManifest a = first, b = second;
  a.updated_at = b.updated_at = "";
  EXPECT_EQ(a, b);
  files.erase("manifest.json");
  again.erase("manifest.json");
  EXPECT_EQ(files, again);
}

TEST(Pipeline, HoleFootprintLod1MatchesRaster) {
  TempDir dir("pipe");
  auto transport = ReplayTransport::from_directory(testing::fixture_dir() / "zurich");
  const fs::path out = dir.path() / "out";
  cmd_fetch(kBlock, out, offline_options(), *transport, fixed_env());
  const PipelineManifest m = cmd_priorize(out / "manifest.json", {LodLevel::kLod1}, 32, fixed_env());
  int checked = 0;
  for (const auto& b : m.buildings) {
    const GeoFootprint fp = footprint_from_json(nlohmann::json::parse(read_text(out / b.footprint)));
    const VoxelGrid lod1 = read_ssvx(out / b.priors.at("lod1"));
    EXPECT_EQ(lod1, rasterize_footprint(fp, 32)) << b.source_id;
    if (!fp.holes.empty()) {
      ++checked;
      EXPECT_LT(lod1.count(), lod_prior(lod1, LodLevel::kLod0).count());
    }
  }
  EXPECT_EQ(checked, 1);
  EXPECT_EQ(m.buildings.front().priors.size(), 1u);
}

TEST(Pipeline, DegenerateFootprintIsPartialSuccess) {
  TempDir dir("pipe");
  auto transport = ReplayTransport::from_directory(testing::fixture_dir() / "zurich");
  const fs::path out = dir.path() / "out";
  const PipelineManifest fetched = cmd_fetch(kBlock, out, offline_options(), *transport, fixed_env());
  const BuildingRecord& victim = fetched.buildings[1];
  auto j = nlohmann::json::parse(read_text(out / victim.footprint));
  const auto p = j["outer"][0];
  j["outer"] = nlohmann::json::array({p, p, p, p});
  write_text(out / victim.footprint, j.dump());

  const PipelineManifest m = cmd_priorize(out / "manifest.json",
                                          {LodLevel::kLod0, LodLevel::kLod1, LodLevel::kLod2}, 32, fixed_env());
  ASSERT_EQ(m.failures.size(), 1u);
  EXPECT_EQ(m.failures[0].stage, "priorize");
  EXPECT_EQ(m.failures[0].source_id, victim.source_id);
  EXPECT_EQ(m.failures[0].code, "DegenerateFootprint");
  int ok = 0;
  for (const auto& b : m.buildings) ok += b.priors.size() == 3 ? 1 : 0;
  EXPECT_EQ(ok, 3);
  EXPECT_EQ(exit_code_for(m, "priorize"), 1);
  EXPECT_EQ(exit_code_for(m, "fetch"), 0);
}

TEST(Pipeline, LambdaOutOfRangeRejectedBeforeAnyWrite) {
  TempDir dir("pipe");
  const fs::path model = write_zero_model(dir.path());
  auto transport = ReplayTransport::from_directory(testing::fixture_dir() / "zurich");
  const fs::path out = dir.path() / "out";
  cmd_fetch(kBlock, out, offline_options(), *transport, fixed_env());
  cmd_priorize(out / "manifest.json", {LodLevel::kLod1}, 32, fixed_env());
  const auto before = snapshot(out);
  const Error e = error_of([&] { cmd_generate(out / "manifest.json", model, quick_generate(1.2), fixed_env()); });
  EXPECT_EQ(e.code(), Errc::kLambdaOutOfRange);
  EXPECT_EQ(snapshot(out), before);
  EXPECT_EQ(error_of([&] { cmd_generate(out / "manifest.json", dir.path() / "missing.gftm", quick_generate(),
                                        fixed_env()); })
                .code(),
            Errc::kIoError);
  EXPECT_EQ(snapshot(out), before);
}

TEST(Pipeline, LambdaZeroIdentityModelReproducesPrior) {
  TempDir dir("pipe");
  const fs::path model = write_zero_model(dir.path());
  auto transport = ReplayTransport::from_directory(testing::fixture_dir() / "zurich");
  const fs::path out = dir.path() / "out";
  cmd_fetch(kBlock, out, offline_options(), *transport, fixed_env());
  cmd_priorize(out / "manifest.json", {LodLevel::kLod1}, 64, fixed_env());
  const PipelineManifest m = cmd_generate(out / "manifest.json", model, quick_generate(0.0), fixed_env());
  for (const auto& b : m.buildings) {
    const double iou = voxel_iou(read_ssvx(out / b.generated), read_ssvx(out / b.priors.at("lod1")));
    EXPECT_GE(iou, 0.95) << b.source_id;
  }
}

TEST(Pipeline, MissingPriorIsRecordedPerBuilding) {
  TempDir dir("pipe");
  const fs::path model = write_zero_model(dir.path());
  auto transport = ReplayTransport::from_directory(testing::fixture_dir() / "zurich");
  const fs::path out = dir.path() / "out";
  cmd_fetch(kBlock, out, offline_options(), *transport, fixed_env());
  cmd_priorize(out / "manifest.json", {LodLevel::kLod0}, 64, fixed_env());
  const PipelineManifest m = cmd_generate(out / "manifest.json", model, quick_generate(), fixed_env());
  EXPECT_EQ(m.failures.size(), 4u);
  EXPECT_EQ(exit_code_for(m, "generate"), 1);
}

TEST(Eval, FilesAndLodChain) {
  TempDir dir("eval");
  const VoxelGrid gt = synth_shape(42, 32);
  write_ssvx(gt, dir.path() / "gt.ssvx");
  EXPECT_EQ(cmd_eval(dir.path() / "gt.ssvx", dir.path() / "gt.ssvx", 0.05).iou, 1.0);
  double prev = 0.0;
  for (LodLevel l : {LodLevel::kLod0, LodLevel::kLod1, LodLevel::kLod2}) {
    const fs::path p = dir.path() / (to_string(l) + ".ssvx");
    write_ssvx(lod_prior(gt, l), p);
    const double iou = cmd_eval(p, dir.path() / "gt.ssvx", 0.05).iou;
    EXPECT_GE(iou, prev) << to_string(l);
    prev = iou;
  }
  write_ssvx(synth_shape(42, 16), dir.path() / "small.ssvx");
  const Error e = error_of([&] { cmd_eval(dir.path() / "small.ssvx", dir.path() / "gt.ssvx", 0.05); });
  EXPECT_EQ(e.code(), Errc::kResolutionMismatch);
  EXPECT_NE(std::string(e.what()).find("16"), std::string::npos);
  EXPECT_NE(std::string(e.what()).find("32"), std::string::npos);
}

PipelineManifest random_manifest(std::mt19937_64& rng) {
  auto word = [&] {
    std::string s;
    for (int i = 0, len = 1 + static_cast<int>(rng() % 8); i < len; ++i) s.push_back(static_cast<char>('a' + rng() % 26));
    return s;
  };
  std::uniform_real_distribution<double> u(-1, 1);
  PipelineManifest m;
  m.bbox = {40 + u(rng), 42 + u(rng), 5 + u(rng), 7 + u(rng)};
  m.created_at = word();
  m.updated_at = word();
  if (rng() % 2) m.image = word() + ".png";
  m.config[word()] = {{"x", u(rng)}, {"n", static_cast<int>(rng() % 100)}};
  for (int i = 0, count = static_cast<int>(rng() % 5); i < count; ++i) {
    BuildingRecord b;
    b.source_id = "way/" + std::to_string(rng() % 100000);
    b.dir = building_slug(b.source_id);
    if (rng() % 2) b.footprint = word();
    if (rng() % 2) b.masked = word();
    if (rng() % 2) b.priors["lod" + std::to_string(rng() % 3)] = word();
    if (rng() % 2) b.latents["start"] = word();
    if (rng() % 2) b.eval_report = word();
    m.buildings.push_back(b);
  }
  if (rng() % 3 == 0) m.failures.push_back({"priorize", "way/1", "DegenerateFootprint", word()});
  return m;
}

TEST(Manifest, WriteReadWriteIsByteIdentical) {
  TempDir dir("manifest");
  std::mt19937_64 rng(99);
  for (int i = 0; i < 500; ++i) {
    const PipelineManifest m = random_manifest(rng);
    write_manifest(m, dir.path() / "m.json");
    const std::string first = read_text(dir.path() / "m.json");
    const PipelineManifest back = read_manifest(dir.path() / "m.json");
    ASSERT_EQ(back, m);
    ASSERT_EQ(dump_manifest(back), first);
  }
}

TEST(Manifest, SlugAndTimestamp) {
  EXPECT_EQ(building_slug("way/12"), "way_12");
  EXPECT_EQ(building_slug("relation/7/2"), "relation_7_2");
  const std::string ts = utc_timestamp();
  ASSERT_EQ(ts.size(), 20u);
  EXPECT_EQ(ts[10], 'T');
  EXPECT_EQ(ts.back(), 'Z');
  EXPECT_NE(building_seed(1, "way/1"), building_seed(1, "way/2"));
  EXPECT_NE(building_seed(1, "way/1"), building_seed(2, "way/1"));
}

// ---------------------------------------------------------------------------
// Command-line integration.

struct Shell {
  int code = -1;
  std::string output;
};

Shell run_cli(const std::string& args) {
  const std::string cmd = std::string(GEOFORGE_CLI) + " " + args + " 2>&1";
  Shell r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t got = 0;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, got);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

TEST(Cli, OfflineWithoutFixturesNamesThePath) {
  TempDir dir("cli");
  const Shell r = run_cli("fetch --bbox 47.37,8.54,47.371,8.5415 --out " + q(dir.path() / "out") +
                          " --offline --fixtures " + q(dir.path() / "nowhere"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find((dir.path() / "nowhere" / "index.json").string()), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir.path() / "out" / "manifest.json"));
}

TEST(Cli, FullPipelineAndValidation) {
  TempDir dir("cli");
  const fs::path out = dir.path() / "out";
  const fs::path model = write_zero_model(dir.path());
  const std::string fixtures = q(testing::fixture_dir() / "zurich");
  Shell r = run_cli("-q fetch --bbox 47.3700,8.5400,47.3710,8.5415 --out " + q(out) + " --offline --fixtures " + fixtures);
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli("-q priorize --manifest " + q(out / "manifest.json") + " --lod all --resolution 64");
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli("-q generate --manifest " + q(out / "manifest.json") + " --model " + q(model) +
              " --lambda 1.2 --steps 4");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("LambdaOutOfRange"), std::string::npos) << r.output;
  r = run_cli("-q generate --manifest " + q(out / "manifest.json") + " --model " + q(model) +
              " --lambda 0.5 --steps 4 --cfg 7.5 --seed 9");
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli("-q eval --manifest " + q(out / "manifest.json") + " --tau 0.05");
  ASSERT_EQ(r.code, 0) << r.output;
  const PipelineManifest m = read_manifest(out / "manifest.json");
  ASSERT_EQ(m.buildings.size(), 4u);
  for (const auto& b : m.buildings) EXPECT_TRUE(fs::exists(out / b.eval_report)) << b.source_id;

  const fs::path gen = out / m.buildings[0].generated;
  r = run_cli("-q eval --pred " + q(gen) + " --gt " + q(gen));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(r.output);
  EXPECT_EQ(j.at("iou").get<double>(), 1.0);
  EXPECT_EQ(j.at("cd_convention"), "symmetric-mean-euclidean-half");

  r = run_cli("-q refine --manifest " + q(out / "manifest.json") + " --provider mock");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / read_manifest(out / "manifest.json").buildings[0].refined));
}

TEST(Cli, UsageErrorsAndHelp) {
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("fetch --bbox 1,2,3").code, 2);
  EXPECT_EQ(run_cli("priorize --manifest /nonexistent/manifest.json --lod 3").code, 2);
  const Shell bad_bbox = run_cli("fetch --bbox 2,0,1,1 --out /tmp/geoforge_unused --offline");
  EXPECT_EQ(bad_bbox.code, 2);
  EXPECT_NE(bad_bbox.output.find("InvalidBBox"), std::string::npos) << bad_bbox.output;
}

TEST(Cli, RemoteRefineWithoutKeyIsFatal) {
  TempDir dir("cli");
  GeoImage img;
  img.pixels = {2, 2, std::vector<std::uint8_t>(16, 200)};
  img.geo = {1.0, 0.0, 0.01, -0.01, 10};
  write_geo_image(img, dir.path() / "in.png");
  const Shell r = run_cli("refine --image " + q(dir.path() / "in.png") + " --provider remote");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("MissingCredentials"), std::string::npos) << r.output;
}

}  // namespace
}  // namespace geoforge

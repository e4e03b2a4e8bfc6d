// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <string>

#include "geoforge/error.hpp"
#include "geoforge/geo_ingest.hpp"
#include "geoforge/io.hpp"
#include "geoforge/transport.hpp"
#include "support.hpp"

namespace geoforge {
namespace {

constexpr const char* kEndpoint = "https://overpass.example/api/interpreter";

std::string block_fixture() { return read_text(testing::fixture_dir() / "overpass_block.json"); }

template <typename Fn>
Errc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no geoforge::Error thrown";
  return Errc::kIoError;
}

RetryPolicy no_sleep() {
  RetryPolicy p;
  p.sleep = [](std::chrono::milliseconds) {};
  return p;
}

TEST(OverpassQuery, UsesSouthWestNorthEastOrder) {
  const std::string q = build_overpass_query({1.0, 1.1, 2.0, 2.1});
  EXPECT_NE(q.find("(1,2,1.1,2.1)"), std::string::npos) << q;
  EXPECT_NE(q.find("[out:json]"), std::string::npos);
  EXPECT_NE(q.find("out geom"), std::string::npos);
}

TEST(OverpassQuery, FiltersBothWaysAndRelations) {
  const std::string q = build_overpass_query({47.36, 47.37, 8.54, 8.55});
  EXPECT_NE(q.find("way[\"building\"]"), std::string::npos);
  EXPECT_NE(q.find("relation[\"building\"]"), std::string::npos);
}

TEST(OverpassQuery, RejectsInvalidBBox) {
  EXPECT_EQ(code_of([] { build_overpass_query({2.0, 1.0, 0.0, 1.0}); }), Errc::kInvalidBBox);
  EXPECT_EQ(code_of([] { build_overpass_query({1.0, 1.0, 0.0, 1.0}); }), Errc::kInvalidBBox);
  EXPECT_EQ(code_of([] { build_overpass_query({80.0, 86.0, 0.0, 1.0}); }), Errc::kInvalidBBox);
  EXPECT_EQ(code_of([] { build_overpass_query({0.0, 1.0, -181.0, 1.0}); }), Errc::kInvalidBBox);
}

// Hand count of fixtures/overpass_block.json: ways 1001-1003 are closed,
// relation 2001 has one outer and one inner member.
TEST(ParseBuildings, BlockFixtureYieldsFourFootprintsOneWithHole) {
  const ParseResult r = parse_buildings(block_fixture());
  ASSERT_EQ(r.footprints.size(), 4u);
  EXPECT_TRUE(r.warnings.empty());
  int with_hole = 0;
  for (const auto& fp : r.footprints) {
    if (fp.holes.size() == 1) ++with_hole;
    EXPECT_GE(fp.outer.size(), 4u);
    EXPECT_EQ(fp.outer.front(), fp.outer.back());
    EXPECT_GT(fp.height_m, fp.min_height_m);
  }
  EXPECT_EQ(with_hole, 1);
  EXPECT_EQ(r.footprints[0].source_id, "way/1001");
  EXPECT_DOUBLE_EQ(r.footprints[0].height_m, 12.0);
  EXPECT_DOUBLE_EQ(r.footprints[1].height_m, 12.0);  // 4 levels
  EXPECT_DOUBLE_EQ(r.footprints[2].height_m, 10.0);  // default
  EXPECT_EQ(r.footprints[3].source_id, "relation/2001");
  EXPECT_DOUBLE_EQ(r.footprints[3].height_m, 18.0);
}

TEST(ParseBuildings, EmptyElements) {
  const ParseResult r = parse_buildings(R"({"elements":[]})");
  EXPECT_TRUE(r.footprints.empty());
  EXPECT_TRUE(r.warnings.empty());
}

TEST(ParseBuildings, UnclosedWaySkippedWithWarning) {
  const ParseResult r = parse_buildings(read_text(testing::fixture_dir() / "overpass_unclosed.json"));
  EXPECT_TRUE(r.footprints.empty());
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.warnings[0].source_id, "way/4001");
}

TEST(ParseBuildings, MalformedInputs) {
  EXPECT_EQ(code_of([] { parse_buildings("{not json"); }), Errc::kMalformedResponse);
  EXPECT_EQ(code_of([] { parse_buildings(R"({"foo":1})"); }), Errc::kMalformedResponse);
  EXPECT_EQ(code_of([] { parse_buildings(R"({"elements":[{"type":"way","tags":{"building":"yes"}}]})"); }),
            Errc::kMalformedResponse);
  EXPECT_EQ(code_of([] {
              parse_buildings(
                  R"({"elements":[{"type":"way","id":1,"tags":{"building":"yes"},"geometry":[{"lat":"x","lon":1}]}]})");
            }),
            Errc::kMalformedResponse);
}

TEST(ParseBuildings, UnknownTagsAndNonBuildingsIgnored) {
  const ParseResult r = parse_buildings(R"({"elements":[
    {"type":"node","id":1,"lat":1,"lon":2},
    {"type":"way","id":2,"tags":{"highway":"residential"},"geometry":[{"lat":0,"lon":0},{"lat":1,"lon":1}]},
    {"type":"way","id":3,"tags":{"building":"yes","weird:tag":{"nested":true},"levels":7},
     "geometry":[{"lat":0,"lon":0},{"lat":0,"lon":1},{"lat":1,"lon":1},{"lat":0,"lon":0}]}]})");
  ASSERT_EQ(r.footprints.size(), 1u);
  EXPECT_EQ(r.footprints[0].source_id, "way/3");
}

TEST(ParseBuildings, MultipolygonFromSplitOuterSegments) {
  const ParseResult r = parse_buildings(R"({"elements":[{"type":"relation","id":9,
    "tags":{"type":"multipolygon","building":"yes"},"members":[
      {"type":"way","role":"outer","geometry":[{"lat":0,"lon":0},{"lat":0,"lon":2},{"lat":2,"lon":2}]},
      {"type":"way","role":"outer","geometry":[{"lat":0,"lon":0},{"lat":2,"lon":0},{"lat":2,"lon":2}]}]}]})");
  ASSERT_EQ(r.footprints.size(), 1u);
  EXPECT_EQ(r.footprints[0].outer.size(), 5u);
  EXPECT_EQ(r.footprints[0].outer.front(), r.footprints[0].outer.back());
}

TEST(ParseBuildings, DeterministicSerialization) {
  const std::string text = block_fixture();
  EXPECT_EQ(footprints_to_json(parse_buildings(text).footprints).dump(),
            footprints_to_json(parse_buildings(text).footprints).dump());
}

TEST(ParseBuildings, FootprintJsonRoundTrip) {
  const auto fps = parse_buildings(block_fixture()).footprints;
  const nlohmann::json j = footprints_to_json(fps);
  EXPECT_EQ(footprints_from_json(j), fps);
  ASSERT_TRUE(j.is_array());
  for (const char* key : {"id", "outer", "holes", "height_m", "min_height_m", "tags"}) {
    EXPECT_TRUE(j[0].contains(key)) << key;
  }
}

TEST(InferHeight, FallbackChain) {
  EXPECT_DOUBLE_EQ(infer_height({{"height", "25 m"}}), 25.0);
  EXPECT_DOUBLE_EQ(infer_height({{"height", "25m"}}), 25.0);
  EXPECT_DOUBLE_EQ(infer_height({{"building:levels", "4"}}), 12.0);
  EXPECT_DOUBLE_EQ(infer_height({}), 10.0);
  EXPECT_DOUBLE_EQ(infer_height({{"height", "tall"}, {"building:levels", "2"}}), 6.0);
  EXPECT_DOUBLE_EQ(infer_height({{"height", "-3"}}), 10.0);
  HeightRules rules;
  rules.meters_per_level = 4.0;
  rules.default_height_m = 7.0;
  EXPECT_DOUBLE_EQ(infer_height({{"building:levels", "3"}}, rules), 12.0);
  EXPECT_DOUBLE_EQ(infer_height({}, rules), 7.0);
}

TEST(InferHeight, TotalAndPositiveOverRandomTags) {
  std::mt19937_64 rng(99);
  const std::string alphabet = "0123456789.-+ meEinfNa";
  auto random_text = [&] {
    std::string s;
    const int len = static_cast<int>(rng() % 8);
    for (int i = 0; i < len; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    return s;
  };
  for (int i = 0; i < 5000; ++i) {
    TagMap tags;
    if (rng() % 2) tags["height"] = random_text();
    if (rng() % 2) tags["building:levels"] = random_text();
    const double h = infer_height(tags);
    ASSERT_TRUE(std::isfinite(h));
    ASSERT_GT(h, 0.0);
  }
}

TEST(FetchBuildings, ReplayYieldsFourFootprintsWithoutNetwork) {
  const auto before = LiveTransport::connections_opened();
  ReplayTransport t;
  t.add("POST", kEndpoint, {200, block_fixture(), "application/json"});
  const ParseResult r = fetch_buildings({47.37, 47.371, 8.54, 8.5415}, kEndpoint, t, no_sleep());
  EXPECT_EQ(r.footprints.size(), 4u);
  EXPECT_EQ(LiveTransport::connections_opened(), before);
}

TEST(FetchBuildings, ThreeGatewayTimeoutsIsNetworkError) {
  ReplayTransport t;
  t.add("POST", kEndpoint, {504, "", ""});
  EXPECT_EQ(code_of([&] { fetch_buildings({47.37, 47.371, 8.54, 8.5415}, kEndpoint, t, no_sleep()); }),
            Errc::kNetworkError);
  EXPECT_EQ(t.requests_served(), 3u);
}

TEST(FetchBuildings, RetrySucceedsOnSecondAttempt) {
  ReplayTransport t;
  t.add("POST", kEndpoint, {504, "", ""});
  t.add("POST", kEndpoint, {200, block_fixture(), "application/json"});
  EXPECT_EQ(fetch_buildings({47.37, 47.371, 8.54, 8.5415}, kEndpoint, t, no_sleep()).footprints.size(), 4u);
  EXPECT_EQ(t.requests_served(), 2u);
}

TEST(FetchBuildings, MalformedBodyPropagates) {
  ReplayTransport t;
  t.add("POST", kEndpoint, {200, "<html>", "text/html"});
  EXPECT_EQ(code_of([&] { fetch_buildings({47.37, 47.371, 8.54, 8.5415}, kEndpoint, t, no_sleep()); }),
            Errc::kMalformedResponse);
}

TEST(GeoBBox, JsonRoundTrip) {
  const GeoBBox b{47.1, 47.2, 8.3, 8.4};
  EXPECT_EQ(bbox_from_json(to_json(b)), b);
}

}  // namespace
}  // namespace geoforge

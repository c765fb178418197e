#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "svdformer/config.hpp"
#include "test_util.hpp"

using namespace svdf;

TEST(Profiles, PcnConstants) {
  const auto c = profile_config("pcn");
  EXPECT_EQ(c.model.input_points, 2048u);
  EXPECT_EQ(c.model.seed_points, 512u);
  EXPECT_EQ(c.model.rate1, 4u);
  EXPECT_EQ(c.model.rate2, 8u);
  EXPECT_EQ(c.model.output_points(), 16384u);
  EXPECT_EQ(c.model.resolution, 224u);
  EXPECT_EQ(c.model.views, 3u);
  EXPECT_DOUBLE_EQ(c.model.view_distance, 0.7);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.train.decay, 0.7);
  EXPECT_EQ(c.train.decay_every, 40u);
  EXPECT_EQ(c.train.chamfer_variant(), ChamferVariant::L1);
  EXPECT_EQ(c.model.decoder1.size(), 2u);
}

TEST(Profiles, ShapeNet55Constants) {
  const auto c = profile_config("shapenet55");
  EXPECT_EQ(c.model.seed_points, 1024u);
  EXPECT_EQ(c.model.output_points(), 8192u);
  EXPECT_DOUBLE_EQ(c.model.view_distance, 1.5);
  EXPECT_DOUBLE_EQ(c.train.decay, 0.98);
  EXPECT_EQ(c.train.decay_every, 2u);
  EXPECT_EQ(c.model.decoder1.size(), 1u);
  EXPECT_EQ(c.model.decoder2.size(), 1u);
}

TEST(Profiles, DeskConstants) {
  const auto c = profile_config("desk");
  EXPECT_EQ(c.model.input_points, 512u);
  EXPECT_EQ(c.model.seed_points, 128u);
  EXPECT_EQ(c.model.output_points(), 512u);
  EXPECT_EQ(c.model.embed_dim, 64u);
  EXPECT_EQ(c.model.resolution, 64u);
  EXPECT_FALSE(c.model.attention_scale);
  EXPECT_NO_THROW(c.model.validate());
}

TEST(Profiles, UnknownNameIsDataError) { EXPECT_THROW(profile_config("kitti"), DataError); }

TEST(ParseConfig, OverridesApply) {
  const auto c = parse_run_config(nlohmann::json::parse(
      R"({"profile":"desk","model":{"gamma":0.5,"views":2},"train":{"lr":0.001,"seed":9}})"));
  EXPECT_DOUBLE_EQ(c.model.gamma, 0.5);
  EXPECT_EQ(c.model.views, 2u);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-3);
  EXPECT_EQ(c.train.seed, 9u);
}

TEST(ParseConfig, UnknownKeysRejected) {
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"model":{"gama":0.5}})")), DataError);
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"optim":{}})")), DataError);
}

TEST(ParseConfig, WrongTypeAndInvalidValuesRejected) {
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"model":{"views":"three"}})")), DataError);
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"train":{"lr":0}})")), DataError);
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"train":{"decay":1.5}})")), DataError);
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"model":{"rate1":3}})")), DataError);
}

TEST(ParseConfig, JsonRoundTrip) {
  auto c = profile_config("shapenet55");
  c.train.seed = 42;
  const auto back = parse_run_config(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(ParseConfig, LoadFromFile) {
  test_util::TempDir dir;
  std::ofstream(dir.path() / "c.json") << R"({"profile":"pcn","train":{"epochs":3}})";
  const auto c = load_run_config(dir.path() / "c.json");
  EXPECT_EQ(c.model.profile, "pcn");
  EXPECT_EQ(c.train.epochs, 3u);
  std::ofstream(dir.path() / "bad.json") << "{not json";
  EXPECT_THROW(load_run_config(dir.path() / "bad.json"), DataError);
}

TEST(Fov, FramingAngle) {
  const auto c = profile_config("desk");
  EXPECT_NEAR(c.model.fov_deg(), 2 * std::atan(0.55 / 0.7) * 180 / 3.14159265358979323846, 1e-12);
}

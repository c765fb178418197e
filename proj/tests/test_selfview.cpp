#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "svdformer/selfview.hpp"
#include "test_util.hpp"

using namespace svdf;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng, double r = 0.45) {
  std::vector<float> v(3 * n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-r, r));
  return PointCloud(std::move(v));
}

}  // namespace

TEST(Viewpoints, OrthogonalAtDistance) {
  const auto views = orthogonal_viewpoints(0.7);
  ASSERT_EQ(views.size(), 3u);
  for (const auto& v : views) EXPECT_DOUBLE_EQ(detail::vnorm(v.position), 0.7);
  EXPECT_THROW(orthogonal_viewpoints(0), std::invalid_argument);
}

TEST(Render, OriginLandsOnPrincipalPixel) {
  auto cloud = PointCloud::from_points({{0, 0, 0}});
  const Viewpoint view{{0, 0, 0.7}, {0, 0, 0}, {1, 0, 0}};
  const auto map = render_depth(cloud, view, 64, 60);
  EXPECT_EQ(map.occupied(), 1u);
  EXPECT_FLOAT_EQ(map.at(32, 32), 0.7f);
}

TEST(Render, ZBufferKeepsNearest) {
  auto cloud = PointCloud::from_points({{0, 0, 0.1f}, {0, 0, 0.4f}});
  const Viewpoint view{{0, 0, 0.7}, {0, 0, 0}, {1, 0, 0}};
  const auto map = render_depth(cloud, view, 32, 60);
  EXPECT_EQ(map.occupied(), 1u);
  EXPECT_NEAR(map.at(16, 16), 0.3f, 1e-6);
  auto reversed = PointCloud::from_points({{0, 0, 0.4f}, {0, 0, 0.1f}});
  EXPECT_EQ(render_depth(reversed, view, 32, 60), map);
}

TEST(Render, BehindCameraAndOutOfFrameDropped) {
  auto cloud = PointCloud::from_points({{0, 0, 1.0f}, {5, 0, 0}});
  const Viewpoint view{{0, 0, 0.7}, {0, 0, 0}, {1, 0, 0}};
  EXPECT_EQ(render_depth(cloud, view, 32, 60).occupied(), 0u);
}

TEST(Render, Errors) {
  auto cloud = PointCloud::from_points({{0, 0, 0}});
  const Viewpoint degenerate{{0, 0, 0.7}, {0, 0, 0}, {0, 0, 1}};
  EXPECT_ANY_THROW(render_depth(cloud, degenerate, 32, 60));
  const Viewpoint ok{{0, 0, 0.7}, {0, 0, 0}, {1, 0, 0}};
  EXPECT_THROW(render_depth(cloud, ok, 4, 60), std::invalid_argument);
  EXPECT_THROW(render_depth(cloud, ok, 32, 180), std::invalid_argument);
}

TEST(Render, FramedCubeStaysInBounds) {
  Rng rng(3);
  auto cloud = random_cloud(2000, rng, 0.5);
  const double fov = framing_fov_deg(0.5, 1.5);
  std::size_t total = 0;
  for (const auto& v : orthogonal_viewpoints(1.5)) total += render_depth(cloud, v, 64, fov).occupied();
  EXPECT_GT(total, 0u);
  for (const auto& v : orthogonal_viewpoints(1.5)) {
    for (float d : render_depth(cloud, v, 64, fov).depth) {
      if (d != 0.0f) {
        EXPECT_GE(d, 1.0f - 1e-6f);
        EXPECT_LE(d, 2.0f * std::sqrt(3.0f));
      }
    }
  }
}

TEST(Project, TensorShapes) {
  Rng rng(4);
  auto cloud = random_cloud(300, rng);
  auto set = project_all(cloud, orthogonal_viewpoints(0.7), 64, framing_fov_deg(0.5, 0.7));
  EXPECT_EQ(set.depth_tensor<float>().shape(), (Shape{3, 1, 64, 64}));
  EXPECT_EQ(set.position_matrix<float>().shape(), (Shape{3, 3}));
}

TEST(Project, AxisPermutationRotationIsBitIdentical) {
  Rng rng(5);
  auto cloud = random_cloud(500, rng);
  // Cyclic axis permutation (x, y, z) -> (y, z, x) is a rotation; apply it to points and cameras.
  std::vector<float> rotated;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    rotated.insert(rotated.end(), {p[1], p[2], p[0]});
  }
  auto rot = [](const Vec3& v) { return Vec3{v[1], v[2], v[0]}; };
  const double fov = framing_fov_deg(0.5, 0.7);
  for (const auto& v : orthogonal_viewpoints(0.7)) {
    const Viewpoint r{rot(v.position), rot(v.look_at), rot(v.up)};
    EXPECT_EQ(render_depth(cloud, v, 64, fov), render_depth(PointCloud(rotated), r, 64, fov));
  }
}

TEST(Jitter, StaysNearOriginalView) {
  Rng rng(6);
  const auto base = orthogonal_viewpoints(0.7)[0];
  for (int i = 0; i < 50; ++i) {
    const auto j = jitter_viewpoint(base, rng);
    const double dist = detail::vnorm(j.position);
    EXPECT_NEAR(dist, 0.7, 0.1 + 1e-12);
    const double cosang = detail::vdot(j.position, base.position) / (dist * 0.7);
    EXPECT_GE(cosang, std::cos(10.0 * std::numbers::pi / 180.0) - 1e-12);
  }
}

TEST(DepthIo, RoundTripIsBitExact) {
  test_util::TempDir dir;
  Rng rng(7);
  auto cloud = random_cloud(400, rng);
  const auto view = orthogonal_viewpoints(0.7)[1];
  const double fov = framing_fov_deg(0.5, 0.7);
  const auto map = render_depth(cloud, view, 48, fov);
  write_depth(dir.path() / "v0", map, view, fov);
  const auto back = read_depth(dir.path() / "v0");
  EXPECT_EQ(back.map, map);
  EXPECT_EQ(back.view.position, view.position);
  EXPECT_EQ(back.view.up, view.up);
  EXPECT_EQ(back.fov_deg, fov);
}

TEST(DepthIo, TruncatedBlobIsDataError) {
  test_util::TempDir dir;
  const auto view = orthogonal_viewpoints(0.7)[0];
  DepthMap map{8, 8, std::vector<float>(64, 0.5f)};
  write_depth(dir.path() / "v", map, view, 60);
  std::filesystem::resize_file(dir.path() / "v.depth", 10);
  EXPECT_THROW(read_depth(dir.path() / "v"), DataError);
}

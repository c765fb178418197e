#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "svdformer/model.hpp"
#include "svdformer/svfnet.hpp"

using namespace svdf;

namespace {

std::vector<double> random_points(std::size_t n, Rng& rng) {
  std::vector<double> v(3 * n);
  for (auto& x : v) x = rng.uniform(-0.45, 0.45);
  return v;
}

Tensor<double> random_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace

TEST(PointEncoderTest, DeskShapeAndPermutationInvariance) {
  const ModelConfig cfg;
  ParameterStore<double> store(1);
  PointEncoder<double> enc(store, cfg);
  Rng rng(2);
  auto pts = random_points(cfg.input_points, rng);
  std::vector<std::size_t> perm(cfg.input_points);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<double> shuffled;
  for (auto i : perm) shuffled.insert(shuffled.end(), pts.begin() + 3 * i, pts.begin() + 3 * i + 3);
  auto a = enc(Tensor<double>({cfg.input_points, 3}, pts));
  auto b = enc(Tensor<double>({cfg.input_points, 3}, shuffled));
  ASSERT_EQ(a.shape(), (Shape{cfg.point_feature()}));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
}

TEST(PointEncoderTest, DuplicatedPointStaysFinite) {
  const ModelConfig cfg;
  ParameterStore<double> store(3);
  PointEncoder<double> enc(store, cfg);
  std::vector<double> pts;
  for (std::size_t i = 0; i < cfg.input_points; ++i) pts.insert(pts.end(), {0.1, -0.2, 0.3});
  auto f = enc(Tensor<double>({cfg.input_points, 3}, pts));
  for (double v : f.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(ViewEncoderTest, ShapeAndSharedWeights) {
  const ModelConfig cfg;
  ParameterStore<double> store(4);
  ViewEncoder<double> enc(store, cfg);
  auto f = enc(Tensor<double>::zeros({3, 1, 64, 64}));
  ASSERT_EQ(f.shape(), (Shape{3, cfg.view_feature()}));
  for (std::size_t c = 0; c < cfg.view_feature(); ++c) {
    EXPECT_EQ(f[c], f[cfg.view_feature() + c]);
    EXPECT_EQ(f[c], f[2 * cfg.view_feature() + c]);
  }
  EXPECT_ANY_THROW(enc(Tensor<double>::zeros({3, 2, 64, 64})));
}

TEST(FusionTest, SingleViewHasUnitWeight) {
  ParameterStore<double> store(5);
  FeatureFusion<double> fusion(store, "fusion", 6, 5, 4, false);
  Rng rng(6);
  auto out = fusion(random_tensor({1, 6}, rng), random_tensor({5}, rng), random_tensor({1, 3}, rng));
  EXPECT_EQ(out.weights.shape(), (Shape{1, 1}));
  EXPECT_EQ(out.weights[0], 1.0);
  EXPECT_EQ(out.descriptor.shape(), (Shape{9}));
}

TEST(FusionTest, JointViewPermutationInvariance) {
  ParameterStore<double> store(7);
  FeatureFusion<double> fusion(store, "fusion", 8, 6, 5, false);
  Rng rng(8);
  auto fv = random_tensor({3, 8}, rng), fp = random_tensor({6}, rng), vp = random_tensor({3, 3}, rng);
  const std::vector<std::size_t> perm{2, 0, 1};
  auto a = fusion(fv, fp, vp).descriptor;
  auto b = fusion(gather_rows(fv, perm), fp, gather_rows(vp, perm)).descriptor;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  const auto w = fusion(fv, fp, vp).weights;
  for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(w[3 * r] + w[3 * r + 1] + w[3 * r + 2], 1.0, 1e-6);
}

TEST(FusionTest, MismatchedPositionsThrow) {
  ParameterStore<double> store(9);
  FeatureFusion<double> fusion(store, "fusion", 4, 4, 4, false);
  Rng rng(10);
  EXPECT_ANY_THROW(fusion(random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({2, 3}, rng)));
}

TEST(CoarseDecoderTest, ShapeAndDescriptorDependence) {
  const ModelConfig cfg;
  ParameterStore<double> store(11);
  CoarseDecoder<double> dec(store, cfg);
  Rng rng(12);
  auto a = dec(random_tensor({cfg.descriptor_dim()}, rng));
  auto b = dec(random_tensor({cfg.descriptor_dim()}, rng));
  ASSERT_EQ(a.shape(), (Shape{cfg.coarse_points, 3}));
  double diff = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(MergeResample, IdenticalInputsStaySubset) {
  Rng rng(13);
  auto pts = random_points(40, rng);
  Tensor<double> cloud({40, 3}, pts);
  auto out = merge_resample(cloud, cloud, 25);
  ASSERT_EQ(out.shape(), (Shape{25, 3}));
  for (std::size_t r = 0; r < 25; ++r) {
    bool found = false;
    for (std::size_t j = 0; j < 40 && !found; ++j) {
      found = out[3 * r] == pts[3 * j] && out[3 * r + 1] == pts[3 * j + 1] && out[3 * r + 2] == pts[3 * j + 2];
    }
    EXPECT_TRUE(found);
  }
  EXPECT_THROW(merge_resample(cloud, cloud, 81), std::invalid_argument);
}

TEST(FitToSize, ResizesBothWays) {
  Rng rng(14);
  std::vector<float> v(3 * 30);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  PointCloud c(v);
  EXPECT_EQ(fit_to_size(c, 10).size(), 10u);
  auto up = fit_to_size(c, 50, 3);
  EXPECT_EQ(up.size(), 50u);
  EXPECT_EQ(up, fit_to_size(c, 50, 3));
  EXPECT_THROW(fit_to_size(PointCloud(), 5), DataError);
}

TEST(ModelForward, DeskStageShapes) {
  ModelConfig cfg;
  SvdFormer<float> model(cfg);
  Rng rng(15);
  std::vector<float> v(3 * cfg.input_points);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-0.4, 0.4));
  const auto s = model.forward(PointCloud(v));
  EXPECT_EQ(s.coarse.shape(), (Shape{128, 3}));
  EXPECT_EQ(s.seed.shape(), (Shape{128, 3}));
  EXPECT_EQ(s.partial_features.dim(0), 128u);
  EXPECT_EQ(s.refine1.points.shape(), (Shape{256, 3}));
  EXPECT_EQ(s.output().shape(), (Shape{512, 3}));
  EXPECT_EQ(s.view_features.shape(), (Shape{3, cfg.view_feature()}));
  EXPECT_THROW(model.forward(PointCloud(std::vector<float>(30, 0.0f))), DataError);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "svdformer/pointops.hpp"
#include "svdformer/rng.hpp"

using namespace svdf;

namespace {

std::vector<float> random_cloud(std::size_t n, Rng& rng, double lo = -0.5, double hi = 0.5) {
  std::vector<float> v(3 * n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

float sq(const float* a, const float* b) {
  float s = (a[0] - b[0]) * (a[0] - b[0]);
  s += (a[1] - b[1]) * (a[1] - b[1]);
  s += (a[2] - b[2]) * (a[2] - b[2]);
  return s;
}

// Step-by-step greedy farthest point rule, recomputed from scratch each step.
bool greedy_consistent(const std::vector<float>& xyz, const std::vector<std::size_t>& picks) {
  const std::size_t n = xyz.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    const float* a = &xyz[3 * i];
    const float* b = &xyz[3 * picks[0]];
    if (std::lexicographical_compare(a, a + 3, b, b + 3)) return false;
  }
  for (std::size_t s = 1; s < picks.size(); ++s) {
    float best = -1;
    std::size_t arg = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::find(picks.begin(), picks.begin() + static_cast<long>(s), j) != picks.begin() + static_cast<long>(s)) continue;
      float d = sq(&xyz[3 * j], &xyz[3 * picks[0]]);
      for (std::size_t t = 1; t < s; ++t) d = std::min(d, sq(&xyz[3 * j], &xyz[3 * picks[t]]));
      if (d > best) {
        best = d;
        arg = j;
      }
    }
    if (arg != picks[s]) return false;
  }
  return true;
}

// Full sort of (d^2, index) pairs.
std::vector<std::size_t> scan_knn_row(const float* q, const std::vector<float>& ref, std::size_t k) {
  std::vector<std::pair<float, std::size_t>> all;
  for (std::size_t j = 0; j < ref.size() / 3; ++j) all.emplace_back(sq(q, &ref[3 * j]), j);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < k; ++j) out.push_back(all[j < all.size() ? j : 0].second);
  return out;
}

}  // namespace

TEST(Fps, SquareCornersPickFarthestCorner) {
  std::vector<float> xyz{0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0};
  EXPECT_EQ(fps<float>(xyz, 2), (std::vector<std::size_t>{0, 3}));
}

TEST(Fps, FullSampleIsPermutation) {
  Rng rng(5);
  auto xyz = random_cloud(40, rng);
  auto idx = fps<float>(xyz, 40);
  std::sort(idx.begin(), idx.end());
  std::vector<std::size_t> all(40);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(idx, all);
}

TEST(Fps, RejectsBadCounts) {
  std::vector<float> xyz{0, 0, 0, 1, 1, 1};
  EXPECT_THROW(fps<float>(xyz, 0), std::invalid_argument);
  EXPECT_THROW(fps<float>(xyz, 3), std::invalid_argument);
}

TEST(Fps, MatchesGreedyResimulation) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto xyz = random_cloud(64, rng);
    EXPECT_TRUE(greedy_consistent(xyz, fps<float>(xyz, 16))) << "trial " << trial;
  }
}

TEST(Fps, StartsAtLexicographicMinimumUnderPermutation) {
  Rng rng(8);
  auto xyz = random_cloud(50, rng);
  std::vector<float> rev;
  for (std::size_t i = 50; i-- > 0;) rev.insert(rev.end(), xyz.begin() + 3 * i, xyz.begin() + 3 * i + 3);
  const auto a = fps<float>(xyz, 10), b = fps<float>(rev, 10);
  for (std::size_t s = 0; s < 10; ++s) EXPECT_EQ(a[s], 49 - b[s]);
}

TEST(Knn, SelfQueryMatchesItself) {
  Rng rng(9);
  auto xyz = random_cloud(30, rng);
  auto nn = knn<float>(xyz, xyz, 1);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(nn.index(i, 0), i);
    EXPECT_EQ(nn.distance(i, 0), 0.0f);
  }
}

TEST(Knn, CollinearExample) {
  std::vector<float> ref{0, 0, 0, 1, 0, 0, 3, 0, 0};
  std::vector<float> q{0, 0, 0};
  auto nn = knn<float>(q, ref, 2);
  EXPECT_EQ(nn.index(0, 0), 0u);
  EXPECT_EQ(nn.index(0, 1), 1u);
  EXPECT_EQ(nn.distance(0, 1), 1.0f);
}

TEST(Knn, MatchesQuadraticScan) {
  Rng rng(10);
  auto ref = random_cloud(256, rng);
  auto q = random_cloud(64, rng);
  auto nn = knn<float>(q, ref, 8);
  for (std::size_t i = 0; i < 64; ++i) {
    const auto expect = scan_knn_row(&q[3 * i], ref, 8);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(nn.index(i, j), expect[j]);
  }
}

TEST(Knn, GridAgreesWithBruteForce) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    auto ref = random_cloud(300, rng);
    auto q = random_cloud(100, rng, -0.8, 0.8);
    auto a = knn<float>(q, ref, 7, 3, SearchMode::BruteForce);
    auto b = knn<float>(q, ref, 7, 3, SearchMode::Grid);
    EXPECT_EQ(a.indices, b.indices);
    EXPECT_EQ(a.distances, b.distances);
  }
}

TEST(Knn, TiesPreferSmallerIndex) {
  std::vector<float> ref{1, 0, 0, -1, 0, 0, 0, 1, 0};
  std::vector<float> q{0, 0, 0};
  auto nn = knn<float>(q, ref, 3);
  EXPECT_EQ(nn.indices, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Knn, PadsWithNearestWhenKExceedsReference) {
  std::vector<float> ref{2, 0, 0, 1, 0, 0};
  std::vector<float> q{0, 0, 0};
  auto nn = knn<float>(q, ref, 4);
  EXPECT_EQ(nn.indices, (std::vector<std::size_t>{1, 0, 1, 1}));
}

TEST(Knn, Errors) {
  std::vector<float> q{0, 0, 0}, empty;
  EXPECT_THROW(knn<float>(q, empty, 1), std::invalid_argument);
  EXPECT_THROW(knn<float>(q, q, 0), std::invalid_argument);
}

TEST(MinDist, SubsetIsZero) {
  Rng rng(12);
  auto y = random_cloud(20, rng);
  std::vector<float> x(y.begin(), y.begin() + 15);
  for (float d : min_dist_to_set<float>(x, y)) EXPECT_EQ(d, 0.0f);
}

TEST(MinDist, UnitExample) {
  std::vector<float> x{1, 0, 0}, y{0, 0, 0};
  EXPECT_EQ(min_dist_to_set<float>(x, y), std::vector<float>{1.0f});
}

TEST(MinDist, MatchesBruteForce) {
  Rng rng(13);
  auto x = random_cloud(100, rng), y = random_cloud(80, rng);
  auto d = min_dist_to_set<float>(x, y, SearchMode::Grid);
  for (std::size_t i = 0; i < 100; ++i) {
    float best = sq(&x[3 * i], &y[0]);
    for (std::size_t j = 1; j < 80; ++j) best = std::min(best, sq(&x[3 * i], &y[3 * j]));
    EXPECT_NEAR(d[i], std::sqrt(best), 1e-7);
  }
  std::vector<float> empty;
  EXPECT_THROW(min_dist_to_set<float>(x, empty), std::invalid_argument);
}

TEST(SetAbstraction, ShapeStack) {
  ParameterStore<float> store(1);
  SetAbstraction<float> sa1(store, "sa1", 3, {16, 32}, 64, 8);
  SetAbstraction<float> sa2(store, "sa2", 32, {32, 48}, 16, 8);
  SetAbstraction<float> sa3(store, "sa3", 48, {64, 24}, std::nullopt, 0);
  Rng rng(14);
  Tensor<float> xyz({256, 3}, random_cloud(256, rng));
  auto a = sa1(xyz, xyz);
  EXPECT_EQ(a.features.shape(), (Shape{64, 32}));
  auto b = sa2(a.xyz, a.features);
  EXPECT_EQ(b.features.shape(), (Shape{16, 48}));
  auto c = sa3(b.xyz, b.features);
  EXPECT_EQ(c.features.shape(), (Shape{1, 24}));
}

TEST(SetAbstraction, SinglePointGlobal) {
  ParameterStore<double> store(2);
  SetAbstraction<double> sa(store, "sa", 2, {4, 3}, std::nullopt, 0);
  Tensor<double> xyz({1, 3}, {0.3, -0.2, 0.1});
  Tensor<double> f({1, 2}, {0.5, -1.5});
  auto out = sa(xyz, f);
  ParameterStore<double> replay(2);
  Mlp<double> mlp(replay, "sa.mlp", {5, 4, 3}, true);
  auto expect = mlp(Tensor<double>({1, 5}, {0, 0, 0, 0.5, -1.5}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.features[i], expect[i]);
}

TEST(SetAbstraction, PermutationInvariantGlobalOutput) {
  ParameterStore<double> store(3);
  SetAbstraction<double> sa1(store, "sa1", 3, {8, 16}, 32, 8);
  SetAbstraction<double> sa2(store, "sa2", 16, {16}, std::nullopt, 0);
  Rng rng(15);
  std::vector<double> v(3 * 128);
  for (auto& x : v) x = rng.uniform(-0.5, 0.5);
  std::vector<std::size_t> perm(128);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<double> p;
  for (auto i : perm) p.insert(p.end(), v.begin() + 3 * i, v.begin() + 3 * i + 3);
  auto run = [&](const std::vector<double>& pts) {
    Tensor<double> xyz({128, 3}, pts);
    auto a = sa1(xyz, xyz);
    return sa2(a.xyz, a.features).features;
  };
  auto a = run(v), b = run(p);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(EdgeConv, IdenticalPointsGiveMlpOfZeroEdge) {
  ParameterStore<double> store(4);
  EdgeConv<double> ec(store, "ec", 3, {5, 4}, 4);
  Tensor<double> xyz({6, 3}, std::vector<double>(18, 0.25));
  auto out = ec(xyz, &xyz);
  ParameterStore<double> replay(4);
  Mlp<double> mlp(replay, "ec.mlp", {6, 5, 4}, true);
  auto expect = mlp(Tensor<double>({1, 6}, {0.25, 0.25, 0.25, 0, 0, 0}));
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out[r * 4 + c], expect[c]);
  }
}

TEST(EdgeConv, SelfNeighbourEqualsPointwiseMlp) {
  ParameterStore<double> store(5);
  EdgeConv<double> ec(store, "ec", 3, {4}, 1);
  Rng rng(16);
  std::vector<double> v(3 * 10);
  for (auto& x : v) x = rng.uniform(-1, 1);
  Tensor<double> xyz({10, 3}, v);
  auto out = ec(xyz);
  std::vector<double> padded;
  for (std::size_t i = 0; i < 10; ++i) {
    padded.insert(padded.end(), v.begin() + 3 * i, v.begin() + 3 * i + 3);
    padded.insert(padded.end(), {0.0, 0.0, 0.0});
  }
  ParameterStore<double> replay(5);
  Mlp<double> mlp(replay, "ec.mlp", {6, 4}, true);
  auto expect = mlp(Tensor<double>({10, 6}, padded));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out[i], expect[i]);
}

TEST(EdgeConv, ShapeContract) {
  ParameterStore<float> store(6);
  EdgeConv<float> e1(store, "e1", 3, {16}, 8);
  EdgeConv<float> e2(store, "e2", 16, {24}, 4);
  Rng rng(17);
  Tensor<float> xyz({128, 3}, random_cloud(128, rng));
  auto f1 = e1(xyz, &xyz);
  auto f2 = e2(gather_rows(f1, fps(xyz.data(), 32)));
  EXPECT_EQ(f2.shape(), (Shape{32, 24}));
}

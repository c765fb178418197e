#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "svdformer/training.hpp"
#include "test_util.hpp"

using namespace svdf;

namespace {

RunConfig desk(std::size_t steps) {
  RunConfig c = profile_config("desk");
  c.train.steps = steps;
  return c;
}

bool contains_point(const PointCloud& cloud, const std::array<float, 3>& p) {
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.point(i) == p) return true;
  }
  return false;
}

double eval_loss(const SvdFormer<float>& model, const SamplePair& pair, const TrainConfig& tc) {
  NoGradGuard guard;
  return sample_loss(model, pair, StageTargets::build(pair.complete, model.config()), tc).item();
}

}  // namespace

TEST(DownsampleGt, IdentitySubsetAndErrors) {
  Rng rng(1);
  std::vector<float> v(3 * 64);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  PointCloud gt(v);
  EXPECT_EQ(downsample_gt(gt, 64), gt);
  const auto sub = downsample_gt(gt, 20);
  ASSERT_EQ(sub.size(), 20u);
  for (std::size_t i = 0; i < sub.size(); ++i) EXPECT_TRUE(contains_point(gt, sub.point(i)));
  EXPECT_EQ(sub, gt.select(fps(gt.xyz(), 20)));
  EXPECT_THROW(downsample_gt(gt, 65), DataError);
}

TEST(TotalLoss, ZeroAtTargets) {
  ModelConfig cfg;
  const auto data = synth_dataset(1, 3, cfg);
  const auto t = StageTargets::build(data[0].complete, cfg);
  const auto loss = total_loss(t.coarse.to_tensor<double>(), t.refine1.to_tensor<double>(), t.refine2.to_tensor<double>(),
                               t, ChamferVariant::L1);
  EXPECT_EQ(loss.item(), 0.0);
}

TEST(TotalLoss, MatchesMetricSum) {
  ModelConfig cfg;
  const auto data = synth_dataset(2, 4, cfg);
  const auto t = StageTargets::build(data[0].complete, cfg);
  Rng rng(5);
  auto noisy = [&](std::size_t n) {
    std::vector<float> v(3 * n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-0.5, 0.5));
    return PointCloud(v);
  };
  const auto c = noisy(128), p1 = noisy(256), p2 = noisy(512);
  for (auto variant : {ChamferVariant::L1, ChamferVariant::L2}) {
    const double expect = chamfer(c, t.coarse, variant) + chamfer(p1, t.refine1, variant) + chamfer(p2, t.refine2, variant);
    const double got = total_loss(c.to_tensor<double>(), p1.to_tensor<double>(), p2.to_tensor<double>(), t, variant).item();
    EXPECT_NEAR(got, expect, 1e-6);
    EXPECT_GE(got, 0.0);
  }
}

TEST(PartialMatching, Examples) {
  Tensor<double> pred({3, 3}, {0, 0, 0, 1, 1, 1, 2, 2, 2});
  Tensor<double> partial({2, 3}, {1, 1, 1, 0, 0, 0});
  EXPECT_EQ(partial_matching_loss(pred, partial).item(), 0.0);
  Tensor<double> single({1, 3}, {0, 0, 0});
  Tensor<double> far({1, 3}, {0, 1, 0});
  EXPECT_DOUBLE_EQ(partial_matching_loss(single, far).item(), 1.0);
}

TEST(Schedule, ClosedForm) {
  TrainConfig t;
  t.lr = 1e-4;
  t.decay = 0.7;
  t.decay_every = 40;
  for (std::size_t e : {0u, 39u, 40u, 79u, 80u, 399u}) {
    EXPECT_DOUBLE_EQ(scheduled_lr(t, e), 1e-4 * std::pow(0.7, static_cast<double>(e / 40)));
  }
  EXPECT_DOUBLE_EQ(scheduled_lr(t, 120), 1e-4 * 0.7 * 0.7 * 0.7);
}

TEST(Synth, DeterministicPerSeed) {
  ModelConfig cfg;
  const auto a = synth_dataset(6, 11, cfg), b = synth_dataset(6, 11, cfg), c = synth_dataset(6, 12, cfg);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(a[i].partial, b[i].partial);
    EXPECT_EQ(a[i].complete, b[i].complete);
  }
  EXPECT_NE(a[0].complete, c[0].complete);
  EXPECT_THROW(synth_dataset(0, 1, cfg), std::invalid_argument);
}

TEST(Synth, PartialsComeFromCompleteSurface) {
  ModelConfig cfg;
  for (const auto& p : synth_dataset(8, 13, cfg)) {
    EXPECT_EQ(p.partial.size(), cfg.input_points);
    EXPECT_EQ(p.complete.size(), cfg.gt_points);
    for (std::size_t i = 0; i < p.partial.size(); ++i) EXPECT_TRUE(contains_point(p.complete, p.partial.point(i)));
    for (float v : p.complete.xyz()) EXPECT_LE(std::abs(v), cfg.half_extent);
  }
}

TEST(Synth, OcclusionFractionInRange) {
  ModelConfig cfg;
  const auto data = synth_dataset(1000, 14, cfg);
  std::set<std::string> categories;
  for (const auto& p : data) {
    EXPECT_GE(p.kept_fraction, 0.25);
    EXPECT_LE(p.kept_fraction, 0.75);
    categories.insert(p.category);
  }
  EXPECT_EQ(categories.size(), synth_categories().size());
}

TEST(Synth, DatasetRoundTrip) {
  test_util::TempDir dir;
  ModelConfig cfg;
  const auto data = synth_dataset(3, 15, cfg);
  write_dataset(dir.path(), data, 15);
  const auto back = read_dataset(dir.path());
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].id, data[i].id);
    EXPECT_EQ(back[i].category, data[i].category);
    EXPECT_EQ(back[i].partial.size(), data[i].partial.size());
    EXPECT_NEAR(chamfer(back[i].complete, data[i].complete, ChamferVariant::L1), 0.0, 1e-6);
  }
  EXPECT_THROW(read_dataset(dir.path() / "missing"), DataError);
}

TEST(Train, OneStepChangesEveryLayer) {
  const RunConfig cfg = desk(1);
  const auto data = synth_dataset(2, 16, cfg.model);
  SvdFormer<float> model(cfg.model);
  std::vector<std::vector<float>> before;
  for (const auto& p : model.parameters()) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  train(model, cfg, data);
  for (std::size_t k = 0; k < before.size(); ++k) {
    const auto now = model.parameters()[k].tensor.data();
    EXPECT_FALSE(std::equal(now.begin(), now.end(), before[k].begin())) << model.parameters()[k].name;
  }
}

TEST(Train, DeterministicTrace) {
  const RunConfig cfg = desk(3);
  const auto data = synth_dataset(4, 17, cfg.model);
  SvdFormer<float> a(cfg.model), b(cfg.model);
  const auto ta = train(a, cfg, data), tb = train(b, cfg, data);
  ASSERT_EQ(ta.trace.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ta.trace[i].loss, tb.trace[i].loss);
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  test_util::TempDir dir;
  RunConfig cfg = desk(4);
  cfg.train.batch_size = 2;
  const auto data = synth_dataset(4, 18, cfg.model);
  SvdFormer<float> full(cfg.model);
  const auto ref = train(full, cfg, data);

  SvdFormer<float> first(cfg.model);
  TrainOptions o1;
  o1.checkpoint_dir = dir.path() / "ckpt";
  o1.trace_path = dir.path() / "trace.csv";
  o1.max_steps = 2;
  train(first, cfg, data, o1);

  SvdFormer<float> second(cfg.model);
  TrainOptions o2;
  o2.resume = dir.path() / "ckpt";
  o2.trace_path = dir.path() / "trace.csv";
  const auto rest = train(second, cfg, data, o2);
  ASSERT_EQ(rest.trace.size(), 2u);
  EXPECT_EQ(rest.trace[0].step, 2u);
  EXPECT_EQ(rest.trace[0].loss, ref.trace[2].loss);
  EXPECT_EQ(rest.trace[1].loss, ref.trace[3].loss);
  for (std::size_t k = 0; k < full.parameters().size(); ++k) {
    const auto a = full.parameters()[k].tensor.data(), b = second.parameters()[k].tensor.data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << full.parameters()[k].name;
  }
  std::ifstream trace(dir.path() / "trace.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(trace, line)) ++lines;
  EXPECT_EQ(lines, 5u);
}

TEST(Train, NonFiniteLossAbortsNamingStep) {
  const RunConfig cfg = desk(2);
  const auto data = synth_dataset(1, 19, cfg.model);
  SvdFormer<float> model(cfg.model);
  for (auto& v : model.parameters().back().tensor.mutable_data()) v = std::numeric_limits<float>::quiet_NaN();
  try {
    train(model, cfg, data);
    FAIL() << "expected a numerical abort";
  } catch (const NumericalAbort& e) {
    EXPECT_EQ(e.step(), 0u);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Train, SingleStepDecreasesLoss) {
  const auto data = synth_dataset(1, 20, ModelConfig{});
  for (double lr : {1e-4, 1e-5}) {
    RunConfig cfg = desk(1);
    cfg.train.lr = lr;
    SvdFormer<float> model(cfg.model);
    const double before = eval_loss(model, data[0], cfg.train);
    train(model, cfg, data);
    EXPECT_LT(eval_loss(model, data[0], cfg.train), before) << "lr " << lr;
  }
}

TEST(Train, RejectsWrongInputSize) {
  const RunConfig cfg = desk(1);
  auto data = synth_dataset(1, 21, cfg.model);
  data[0].partial = data[0].complete.select({0, 1, 2});
  SvdFormer<float> model(cfg.model);
  EXPECT_THROW(train(model, cfg, data), DataError);
}

#pragma once

// The full completion network: P_in -> P_c -> P_0 -> P_1 -> P_2.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "svdformer/config.hpp"
#include "svdformer/nn.hpp"
#include "svdformer/pointcloud.hpp"
#include "svdformer/pointops.hpp"
#include "svdformer/rng.hpp"
#include "svdformer/sdg.hpp"
#include "svdformer/selfview.hpp"
#include "svdformer/svfnet.hpp"

namespace svdf {

template <typename T>
struct Stages {
  Tensor<T> partial;
  Tensor<T> point_feature;
  Tensor<T> view_features;
  Tensor<T> descriptor;
  Tensor<T> fusion_weights;
  Tensor<T> coarse;  // P_c
  Tensor<T> seed;    // P_0
  Tensor<T> partial_features;
  typename Sdg<T>::Output refine1;  // P_1
  typename Sdg<T>::Output refine2;  // P_2

  const Tensor<T>& output() const { return refine2.points; }
};

/// Resizes a cloud to exactly `n` points: FPS when too large, seeded
/// duplication of random points when too small.
inline PointCloud fit_to_size(const PointCloud& cloud, std::size_t n, std::uint64_t seed = 0) {
  if (cloud.empty()) throw DataError("cannot resize an empty point cloud");
  if (cloud.size() == n) return cloud;
  if (cloud.size() > n) return cloud.select(fps(cloud.xyz(), n));
  PointCloud out = cloud;
  Rng rng(seed);
  while (out.size() < n) out.push_back(cloud.point(rng.index(cloud.size())));
  return out;
}

template <typename T>
class SvdFormer {
 public:
  explicit SvdFormer(const ModelConfig& cfg) : cfg_(cfg), store_(cfg.seed) {
    cfg_.validate();
    point_encoder_ = PointEncoder<T>(store_, cfg_);
    view_encoder_ = ViewEncoder<T>(store_, cfg_);
    fusion_ = FeatureFusion<T>(store_, "fusion", cfg_.view_feature(), cfg_.point_feature(), cfg_.fusion_width,
                               cfg_.attention_scale);
    coarse_ = CoarseDecoder<T>(store_, cfg_);
    partial_ = PartialFeatureExtractor<T>(store_, cfg_);
    sdg1_ = Sdg<T>(store_, "sdg1", cfg_, cfg_.decoder1, cfg_.rate1);
    sdg2_ = Sdg<T>(store_, "sdg2", cfg_, cfg_.decoder2, cfg_.rate2);
  }

  SvdFormer(const SvdFormer&) = delete;
  SvdFormer& operator=(const SvdFormer&) = delete;

  ViewSet render_views(const PointCloud& partial, Rng* jitter = nullptr) const {
    auto views = orthogonal_viewpoints(cfg_.view_distance);
    views.resize(std::min(views.size(), cfg_.views));
    if (jitter) {
      for (auto& v : views) v = jitter_viewpoint(v, *jitter);
    }
    return project_all(partial, views, cfg_.resolution, cfg_.fov_deg());
  }

  /// Runs every stage on a partial cloud of exactly `input_points` rows.
  Stages<T> forward(const PointCloud& partial_cloud, Rng* jitter = nullptr) const {
    if (partial_cloud.size() != cfg_.input_points) {
      throw DataError("partial cloud has " + std::to_string(partial_cloud.size()) + " points, model expects " +
                      std::to_string(cfg_.input_points));
    }
    const ViewSet views = render_views(partial_cloud, jitter);
    Stages<T> s;
    s.partial = partial_cloud.template to_tensor<T>();
    s.point_feature = point_encoder_(s.partial);
    s.view_features = view_encoder_(views.depth_tensor<T>());
    auto fused = fusion_(s.view_features, s.point_feature, views.position_matrix<T>());
    s.descriptor = fused.descriptor;
    s.fusion_weights = fused.weights;
    s.coarse = coarse_(s.descriptor);
    s.seed = merge_resample(s.coarse, s.partial, cfg_.seed_points);
    s.partial_features = partial_(s.partial);
    s.refine1 = sdg1_(s.seed, s.partial, s.partial_features, s.descriptor);
    s.refine2 = sdg2_(s.refine1.points, s.partial, s.partial_features, s.descriptor);
    return s;
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  std::vector<NamedTensor<T>>& parameters() { return store_.params(); }

  const PointEncoder<T>& point_encoder() const { return point_encoder_; }
  const ViewEncoder<T>& view_encoder() const { return view_encoder_; }
  const FeatureFusion<T>& fusion() const { return fusion_; }
  const PartialFeatureExtractor<T>& partial_extractor() const { return partial_; }
  Sdg<T>& sdg1() { return sdg1_; }
  Sdg<T>& sdg2() { return sdg2_; }

 private:
  ModelConfig cfg_;
  ParameterStore<T> store_;
  PointEncoder<T> point_encoder_;
  ViewEncoder<T> view_encoder_;
  FeatureFusion<T> fusion_;
  CoarseDecoder<T> coarse_;
  PartialFeatureExtractor<T> partial_;
  Sdg<T> sdg1_, sdg2_;
};

}  // namespace svdf

#pragma once

// Global-shape stage: point and view encoders, cross-modal fusion into the
// shape descriptor, coarse decoding and merge/resample.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "svdformer/config.hpp"
#include "svdformer/nn.hpp"
#include "svdformer/ops.hpp"
#include "svdformer/pointops.hpp"

namespace svdf {

/// Hierarchical set-abstraction encoder: (n, 3) -> (point_feature).
template <typename T>
class PointEncoder {
 public:
  PointEncoder() = default;
  PointEncoder(ParameterStore<T>& store, const ModelConfig& cfg) {
    sa1_ = SetAbstraction<T>(store, "point_encoder.sa1", 3, cfg.sa1_channels, cfg.sa1_centroids, cfg.sa_neighbors);
    sa2_ = SetAbstraction<T>(store, "point_encoder.sa2", sa1_.out_features(), cfg.sa2_channels, cfg.sa2_centroids,
                             cfg.sa_neighbors);
    sa3_ = SetAbstraction<T>(store, "point_encoder.sa3", sa2_.out_features(), cfg.sa3_channels, std::nullopt, 1);
  }

  Tensor<T> operator()(const Tensor<T>& xyz) const {
    if (xyz.rank() != 2 || xyz.dim(0) == 0) throw_shape("encode_points", xyz.shape(), "expected a non-empty (n, 3) cloud");
    auto l1 = sa1_(xyz, xyz);
    auto l2 = sa2_(l1.xyz, l1.features);
    auto l3 = sa3_(l2.xyz, l2.features);
    return reshape(l3.features, {l3.features.numel()});
  }

 private:
  SetAbstraction<T> sa1_, sa2_, sa3_;
};

/// Shared-weight convolutional encoder: (views, 1, H, W) -> (views, C_v).
/// Depth is divided by the far plane before the first convolution.
template <typename T>
class ViewEncoder {
 public:
  ViewEncoder() = default;
  ViewEncoder(ParameterStore<T>& store, const ModelConfig& cfg)
      : depth_scale_(static_cast<T>(1.0 / (cfg.view_distance + cfg.half_extent * std::sqrt(3.0)))) {
    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg.cnn_channels.size(); ++i) {
      convs_.emplace_back(store, "view_encoder.conv" + std::to_string(i), in, cfg.cnn_channels[i], 3, 2, 1, Init::Kaiming);
      in = cfg.cnn_channels[i];
    }
  }

  Tensor<T> operator()(const Tensor<T>& depth) const {
    if (depth.rank() != 4 || depth.dim(1) != 1) throw_shape("encode_views", depth.shape(), "expected (views, 1, H, W)");
    const std::size_t views = depth.dim(0), h = depth.dim(2), w = depth.dim(3);
    std::vector<Tensor<T>> rows;
    rows.reserve(views);
    const Tensor<T> scaled = mul_scalar(depth, depth_scale_);
    for (std::size_t v = 0; v < views; ++v) {
      std::vector<std::size_t> one{v};
      Tensor<T> x = reshape(gather_rows(reshape(scaled, {views, h * w}), one), {1, h, w});
      for (const auto& conv : convs_) x = relu(conv(x));
      const std::size_t c = x.dim(0);
      rows.push_back(reshape(mean_reduce(reshape(x, {c, x.dim(1) * x.dim(2)}), 1), {1, c}));
    }
    return concat(rows, 0);
  }

 private:
  T depth_scale_{1};
  std::vector<Conv2d<T>> convs_;
};

/// Attention across view tokens guided by the global point feature.
/// Returns the descriptor concat(max_v F_V', f_p).
template <typename T>
class FeatureFusion {
 public:
  struct Output {
    Tensor<T> descriptor;
    Tensor<T> weights;  // (views, views)
  };

  FeatureFusion() = default;
  FeatureFusion(ParameterStore<T>& store, const std::string& name, std::size_t view_dim, std::size_t point_dim,
                std::size_t width, bool scale_logits)
      : scale_logits_(scale_logits) {
    q_ = Linear<T>(store, name + ".q", view_dim + point_dim, width);
    k_ = Linear<T>(store, name + ".k", view_dim + point_dim, width);
    v_ = Linear<T>(store, name + ".v", view_dim + point_dim, width);
    pos_ = Linear<T>(store, name + ".pos", 3, width);
  }

  Output operator()(const Tensor<T>& view_features, const Tensor<T>& point_feature, const Tensor<T>& positions) const {
    if (view_features.rank() != 2 || positions.rank() != 2 || positions.dim(0) != view_features.dim(0) ||
        positions.dim(1) != 3) {
      throw_shape("feature_fusion", view_features.shape(), positions.shape(), "one position row per view");
    }
    if (point_feature.rank() != 1) throw_shape("feature_fusion", point_feature.shape(), "expected a point feature vector");
    const std::size_t views = view_features.dim(0);
    const Tensor<T> fp_row = reshape(point_feature, {1, point_feature.numel()});
    const Tensor<T> tokens = concat<T>({view_features, gather_rows(fp_row, std::vector<std::size_t>(views, 0))}, 1);
    const Tensor<T> pos = pos_(positions);
    const Tensor<T> a = attention_weights(add(q_(tokens), pos), add(k_(tokens), pos), scale_logits_);
    const Tensor<T> fused = matmul(a, v_(tokens));
    return {concat<T>({max_reduce(fused, 0), point_feature}, 0), a};
  }

 private:
  bool scale_logits_ = false;
  Linear<T> q_, k_, v_, pos_;
};

/// Descriptor -> (N_c, 3): transposed convolution to per-point features,
/// then a self-attention layer and a coordinate regressor.
template <typename T>
class CoarseDecoder {
 public:
  CoarseDecoder() = default;
  CoarseDecoder(ParameterStore<T>& store, const ModelConfig& cfg) : points_(cfg.coarse_points) {
    expand_ = ConvTranspose1d<T>(store, "coarse.expand", cfg.descriptor_dim(), cfg.coarse_feature, cfg.coarse_points, 1,
                                   Init::Kaiming);
    attention_ = AttentionLayer<T>(store, "coarse.attention", cfg.coarse_feature, cfg.coarse_attention, cfg.attention_scale);
    head_ = Mlp<T>(store, "coarse.head", {cfg.coarse_attention, 64, 3}, false);
  }

  Tensor<T> operator()(const Tensor<T>& descriptor) const {
    Tensor<T> x = relu(expand_(reshape(descriptor, {descriptor.numel(), 1})));  // (D, N_c)
    return head_(attention_(transpose(x)).features);
  }

 private:
  std::size_t points_ = 0;
  ConvTranspose1d<T> expand_;
  AttentionLayer<T> attention_;
  Mlp<T> head_;
};

/// FPS of concat(P_c, P_in) down to `count` rows. Gradients flow to P_c rows.
template <typename T>
Tensor<T> merge_resample(const Tensor<T>& coarse, const Tensor<T>& partial, std::size_t count) {
  if (coarse.rank() != 2 || partial.rank() != 2 || coarse.dim(1) != 3 || partial.dim(1) != 3) {
    throw_shape("merge_resample", coarse.shape(), partial.shape(), "expected (n, 3) clouds");
  }
  if (count > coarse.dim(0) + partial.dim(0)) {
    throw std::invalid_argument("merge_resample: cannot resample " + std::to_string(count) + " of " +
                                std::to_string(coarse.dim(0) + partial.dim(0)) + " merged points");
  }
  const Tensor<T> merged = concat<T>({coarse, partial}, 0);
  return gather_rows(merged, fps(merged.data(), count));
}

}  // namespace svdf

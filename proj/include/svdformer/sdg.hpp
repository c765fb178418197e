#pragma once

// Refinement stage: incompleteness-aware structure analysis and similarity
// alignment against the partial input, joined by an offset head that
// upsamples the previous cloud by a fixed rate.

#include <cstddef>
#include <string>
#include <vector>

#include "svdformer/config.hpp"
#include "svdformer/nn.hpp"
#include "svdformer/ops.hpp"
#include "svdformer/pointops.hpp"

namespace svdf {

/// Distance from every row of `points` to its nearest partial-input point.
/// Differentiable in `points`; the nearest assignment is fixed per call.
template <typename T>
Tensor<T> nearest_distance(const Tensor<T>& points, const Tensor<T>& partial) {
  if (partial.numel() == 0) throw std::invalid_argument("nearest_distance: partial input is empty");
  const auto nn = knn(points.data(), partial.data(), 1);
  return row_norm(sub(points, gather_rows(partial.detach(), nn.indices)));
}

/// h_i = Sinusoidal(min_y |x_i - y| / gamma), width `channels`.
template <typename T>
Tensor<T> incompleteness_embedding(const Tensor<T>& points, const Tensor<T>& partial, double gamma,
                                   std::size_t channels) {
  if (!(gamma > 0)) throw std::invalid_argument("incompleteness_embedding: gamma must be positive");
  return sinusoidal(mul_scalar(nearest_distance(points, partial), static_cast<T>(1.0 / gamma)), channels);
}

/// softmax((f W_Q + h)(f W_K + h)^T) (f W_V). Without `h` this is plain
/// self-attention.
template <typename T>
typename AttentionLayer<T>::Output incompleteness_attention(const Tensor<T>& f, const Tensor<T>* h, const Tensor<T>& w_q,
                                                            const Tensor<T>& w_k, const Tensor<T>& w_v,
                                                            bool scale_logits) {
  Tensor<T> q = matmul(f, w_q);
  Tensor<T> k = matmul(f, w_k);
  if (h) {
    q = add(q, *h);
    k = add(k, *h);
  }
  Tensor<T> a = attention_weights(q, k, scale_logits);
  return {matmul(a, matmul(f, w_v)), a};
}

/// Shared partial-input encoder: EdgeConv in coordinate space, FPS to a
/// quarter of the points, EdgeConv in feature space.
template <typename T>
class PartialFeatureExtractor {
 public:
  PartialFeatureExtractor() = default;
  PartialFeatureExtractor(ParameterStore<T>& store, const ModelConfig& cfg) {
    edge1_ = EdgeConv<T>(store, "partial.edge1", 3, {cfg.edge1_channels}, cfg.edge1_neighbors);
    edge2_ = EdgeConv<T>(store, "partial.edge2", cfg.edge1_channels, {cfg.partial_channels}, cfg.edge2_neighbors);
  }

  Tensor<T> operator()(const Tensor<T>& partial) const {
    if (partial.rank() != 2 || partial.dim(0) == 0) throw_shape("partial_features", partial.shape(), "expected (n, 3)");
    const Tensor<T> f1 = edge1_(partial, &partial);
    const std::size_t keep = std::max<std::size_t>(1, partial.dim(0) / 4);
    return edge2_(gather_rows(f1, fps(partial.data(), keep)));
  }

 private:
  EdgeConv<T> edge1_, edge2_;
};

/// concat(F_Q', F_H') -> Linear -> reshape (rN, feat) -> MLP -> offsets.
template <typename T>
class OffsetHead {
 public:
  OffsetHead() = default;
  OffsetHead(ParameterStore<T>& store, const std::string& name, std::size_t in_per_path, std::size_t feature,
             std::size_t hidden, std::size_t rate)
      : rate_(rate), feature_(feature) {
    if (rate == 0) throw std::invalid_argument("offset head: rate must be positive");
    expand_ = Linear<T>(store, name + ".expand", 2 * in_per_path, feature * rate, true, Init::Kaiming);
    mlp_ = Mlp<T>(store, name + ".mlp", {feature, hidden, 3}, false);
  }

  Tensor<T> operator()(const Tensor<T>& structure, const Tensor<T>& similarity) const {
    if (structure.rank() != 2 || similarity.rank() != 2 || structure.dim(0) != similarity.dim(0)) {
      throw_shape("offset_head", structure.shape(), similarity.shape());
    }
    const std::size_t n = structure.dim(0);
    Tensor<T> x = relu(expand_(concat<T>({structure, similarity}, 1)));
    return mlp_(reshape(x, {n * rate_, feature_}));
  }

  Mlp<T>& mlp() { return mlp_; }
  std::size_t rate() const { return rate_; }

 private:
  std::size_t rate_ = 1, feature_ = 1;
  Linear<T> expand_;
  Mlp<T> mlp_;
};

/// Row i of the upsampled cloud descends from parent row i / rate.
inline std::vector<std::size_t> parent_map(std::size_t parents, std::size_t rate) {
  std::vector<std::size_t> idx(parents * rate);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i / rate;
  return idx;
}

template <typename T>
class Sdg {
 public:
  struct Output {
    Tensor<T> points;
    Tensor<T> structure_weights;   // (N, N)
    Tensor<T> similarity_weights;  // (N, |F_in|)
  };

  Sdg() = default;
  Sdg(ParameterStore<T>& store, const std::string& name, const ModelConfig& cfg, const std::vector<std::size_t>& decoder,
      std::size_t rate)
      : embed_dim_(cfg.embed_dim), gamma_(cfg.gamma), scale_(cfg.attention_scale), rate_(rate) {
    const std::size_t c = cfg.embed_dim;
    embed_ = Linear<T>(store, name + ".embed", 3 + cfg.descriptor_dim(), c);
    w_q_ = store.uniform(name + ".structure.w_q", {c, c}, fan_in_bound(c));
    w_k_ = store.uniform(name + ".structure.w_k", {c, c}, fan_in_bound(c));
    w_v_ = store.uniform(name + ".structure.w_v", {c, c}, fan_in_bound(c));
    structure_decoder_ = AttentionDecoder<T>(store, name + ".structure.decoder", c, decoder, scale_);
    align_ = AttentionLayer<T>(store, name + ".similarity.cross", c, c, scale_, cfg.partial_channels);
    similarity_decoder_ = AttentionDecoder<T>(store, name + ".similarity.decoder", c, decoder, scale_);
    head_ = OffsetHead<T>(store, name + ".offset", decoder.back(), cfg.offset_feature, cfg.offset_hidden, rate);
  }

  /// Structure analysis: per-point embedding of concat(point, F_g), then
  /// incompleteness-aware self-attention. Returns F_Q and its weights.
  typename AttentionLayer<T>::Output structure_query(const Tensor<T>& points, const Tensor<T>& descriptor,
                                                     const Tensor<T>* embedding) const {
    const std::size_t n = points.dim(0);
    const Tensor<T> g = gather_rows(reshape(descriptor, {1, descriptor.numel()}), std::vector<std::size_t>(n, 0));
    return incompleteness_attention(embed_(concat<T>({points, g}, 1)), embedding, w_q_, w_k_, w_v_, scale_);
  }

  Output operator()(const Tensor<T>& prev, const Tensor<T>& partial, const Tensor<T>& partial_features,
                    const Tensor<T>& descriptor) const {
    if (prev.rank() != 2 || prev.dim(1) != 3) throw_shape("sdg", prev.shape(), "expected (n, 3)");
    const Tensor<T> h = incompleteness_embedding(prev, partial, gamma_, embed_dim_);
    auto query = structure_query(prev, descriptor, &h);
    const Tensor<T> structure = structure_decoder_(query.features);
    auto aligned = align_.cross(query.features, partial_features);
    const Tensor<T> similarity = similarity_decoder_(aligned.features);
    const Tensor<T> offsets = head_(structure, similarity);
    return {add(gather_rows(prev, parent_map(prev.dim(0), rate_)), offsets), query.weights, aligned.weights};
  }

  const Tensor<T>& structure_w_q() const { return w_q_; }
  const Tensor<T>& structure_w_k() const { return w_k_; }
  const Tensor<T>& structure_w_v() const { return w_v_; }
  const AttentionLayer<T>& alignment() const { return align_; }
  const AttentionDecoder<T>& structure_decoder() const { return structure_decoder_; }
  const AttentionDecoder<T>& similarity_decoder() const { return similarity_decoder_; }
  OffsetHead<T>& offset_head() { return head_; }
  const OffsetHead<T>& offset_head() const { return head_; }
  std::size_t rate() const { return rate_; }

 private:
  std::size_t embed_dim_ = 2;
  double gamma_ = 0.2;
  bool scale_ = false;
  std::size_t rate_ = 1;
  Linear<T> embed_;
  Tensor<T> w_q_, w_k_, w_v_;
  AttentionDecoder<T> structure_decoder_;
  AttentionLayer<T> align_;
  AttentionDecoder<T> similarity_decoder_;
  OffsetHead<T> head_;
};

}  // namespace svdf

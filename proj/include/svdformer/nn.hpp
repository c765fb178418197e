#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "svdformer/ops.hpp"
#include "svdformer/rng.hpp"
#include "svdformer/tensor.hpp"

namespace svdf {

/// Ordered registry of trainable tensors. Registration order is the
/// checkpoint order.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// Uniform(-bound, bound) initialized parameter.
  Tensor<T> uniform(const std::string& name, Shape shape, double bound) {
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(rng_.uniform(-bound, bound));
    return add(name, Tensor<T>(std::move(shape), std::move(values), true));
  }

  Tensor<T> add(const std::string& name, Tensor<T> tensor) {
    for (const auto& p : params_) {
      if (p.name == name) throw std::logic_error("duplicate parameter name '" + name + "'");
    }
    tensor.set_requires_grad(true);
    params_.push_back({name, tensor});
    return tensor;
  }

  std::vector<NamedTensor<T>>& params() { return params_; }
  const std::vector<NamedTensor<T>>& params() const { return params_; }

  std::optional<Tensor<T>> find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return p.tensor;
    }
    return std::nullopt;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  Rng rng_;
  std::vector<NamedTensor<T>> params_;
};

// Fan-in scaled uniform bound, as used by common frameworks for dense layers.
inline double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

/// Weight initialisation: fan-in default, or Kaiming-uniform for layers feeding a ReLU.
enum class Init { Default, Kaiming };

inline double weight_bound(std::size_t fan_in, Init init) {
  return init == Init::Kaiming ? std::sqrt(6.0 / static_cast<double>(fan_in)) : fan_in_bound(fan_in);
}

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, bool bias = true,
         Init init = Init::Default)
      : in_(in), out_(out) {
    weight_ = store.uniform(name + ".weight", {in, out}, weight_bound(in, init));
    if (bias) {
      bias_ = store.uniform(name + ".bias", {out}, fan_in_bound(in));
    } else {
      bias_ = Tensor<T>::zeros({out});
    }
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight_, bias_); }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> weight_, bias_;
};

/// Shared per-point MLP. `channels` lists the input width followed by each
/// layer's output width; ReLU follows every layer except optionally the last.
/// Layers followed by a ReLU use Kaiming initialisation.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore<T>& store, const std::string& name, const std::vector<std::size_t>& channels, bool relu_last)
      : relu_last_(relu_last) {
    if (channels.size() < 2) throw std::invalid_argument("mlp '" + name + "' needs at least two channel entries");
    for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
      const Init init = relu_last || i + 2 < channels.size() ? Init::Kaiming : Init::Default;
      layers_.emplace_back(store, name + "." + std::to_string(i), channels[i], channels[i + 1], true, init);
    }
  }

  Tensor<T> operator()(Tensor<T> x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](x);
      if (relu_last_ || i + 1 < layers_.size()) x = relu(x);
    }
    return x;
  }

  std::vector<Linear<T>>& layers() { return layers_; }
  std::size_t out_features() const { return layers_.back().out_features(); }

 private:
  std::vector<Linear<T>> layers_;
  bool relu_last_ = false;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride, std::size_t pad, Init init = Init::Default)
      : stride_(stride), pad_(pad) {
    const std::size_t fan_in = in * kernel * kernel;
    weight_ = store.uniform(name + ".weight", {out, in, kernel, kernel}, weight_bound(fan_in, init));
    bias_ = store.uniform(name + ".bias", {out}, fan_in_bound(fan_in));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight_, bias_, stride_, pad_); }

 private:
  std::size_t stride_ = 1, pad_ = 0;
  Tensor<T> weight_, bias_;
};

template <typename T>
class ConvTranspose1d {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  std::size_t kernel, std::size_t stride = 1, Init init = Init::Default)
      : stride_(stride) {
    weight_ = store.uniform(name + ".weight", {in, out, kernel}, weight_bound(in, init));
    bias_ = store.uniform(name + ".bias", {out}, fan_in_bound(in));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose_1d(x, weight_, bias_, stride_); }

 private:
  std::size_t stride_ = 1;
  Tensor<T> weight_, bias_;
};

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

/// Row-stochastic attention weights softmax(q k^T [/ sqrt(d)]) over the key axis.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, bool scale_logits) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) throw_shape("attention", q.shape(), k.shape());
  Tensor<T> logits = matmul(q, transpose(k));
  if (scale_logits) logits = mul_scalar(logits, static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(1)))));
  return softmax(logits, 1);
}

/// Attention block used by every decoder and by the cross-modal paths:
///   a = softmax((f W_Q)(g W_K)^T),  b_i = sum_j a_ij (g_j W_V),
///   h = b + f,  z = h + Linear(h).
/// Self-attention uses g = f. When the input width differs from the model
/// width, a pointwise input projection maps queries (and keys) first.
template <typename T>
class AttentionLayer {
 public:
  struct Output {
    Tensor<T> features;
    Tensor<T> weights;
  };

  AttentionLayer() = default;
  /// `memory_in` is the key/value width for cross-attention; zero means self-attention.
  AttentionLayer(ParameterStore<T>& store, const std::string& name, std::size_t query_in, std::size_t width,
                 bool scale_logits, std::size_t memory_in = 0)
      : width_(width), scale_logits_(scale_logits) {
    if (query_in != width) query_proj_ = Linear<T>(store, name + ".query_proj", query_in, width);
    const std::size_t key_in = memory_in ? memory_in : width;
    w_q_ = store.uniform(name + ".w_q", {width, width}, fan_in_bound(width));
    w_k_ = store.uniform(name + ".w_k", {key_in, width}, fan_in_bound(key_in));
    w_v_ = store.uniform(name + ".w_v", {key_in, width}, fan_in_bound(key_in));
    out_ = Linear<T>(store, name + ".out", width, width);
  }

  /// Self-attention over the rows of x.
  Output operator()(const Tensor<T>& x) const { return run(project(x), std::nullopt); }

  /// Cross-attention: queries from x, keys and values from `memory`.
  Output cross(const Tensor<T>& x, const Tensor<T>& memory) const { return run(project(x), memory); }

  std::size_t width() const { return width_; }

 private:
  Tensor<T> project(const Tensor<T>& x) const {
    return query_proj_.out_features() ? query_proj_(x) : x;
  }

  Output run(const Tensor<T>& f, const std::optional<Tensor<T>>& memory) const {
    const Tensor<T>& g = memory ? *memory : f;
    if (g.rank() != 2 || g.dim(1) != w_k_.dim(0)) throw_shape("attention", g.shape(), w_k_.shape(), "key width");
    Tensor<T> a = attention_weights(matmul(f, w_q_), matmul(g, w_k_), scale_logits_);
    Tensor<T> b = matmul(a, matmul(g, w_v_));
    Tensor<T> h = add(b, f);
    return {add(h, out_(h)), a};
  }

  std::size_t width_ = 0;
  bool scale_logits_ = false;
  Linear<T> query_proj_;
  Tensor<T> w_q_, w_k_, w_v_;
  Linear<T> out_;
};

/// Stack of self-attention layers whose widths follow `widths`.
template <typename T>
class AttentionDecoder {
 public:
  AttentionDecoder() = default;
  AttentionDecoder(ParameterStore<T>& store, const std::string& name, std::size_t in,
                   const std::vector<std::size_t>& widths, bool scale_logits) {
    std::size_t prev = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      layers_.emplace_back(store, name + "." + std::to_string(i), prev, widths[i], scale_logits);
      prev = widths[i];
    }
    out_ = prev;
  }

  Tensor<T> operator()(Tensor<T> x) const {
    for (const auto& layer : layers_) x = layer(x).features;
    return x;
  }

  std::size_t out_features() const { return out_; }

 private:
  std::vector<AttentionLayer<T>> layers_;
  std::size_t out_ = 0;
};

}  // namespace svdf

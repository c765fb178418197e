#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "svdformer/tensor.hpp"

namespace svdf {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of named parameters.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedTensor<T>> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    if (!(options_.lr > 0)) throw std::invalid_argument("adam: learning rate must be positive");
    for (const auto& p : params_) {
      first_.emplace_back(p.tensor.numel(), T{0});
      second_.emplace_back(p.tensor.numel(), T{0});
    }
  }

  void step() {
    for (const auto& p : params_) {
      if (!p.tensor.has_grad()) throw std::runtime_error("adam: parameter '" + p.name + "' has no gradient");
    }
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T> param = params_[k].tensor;
      auto w = param.mutable_data();
      auto g = param.grad();
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T{1} - b1) * g[i];
        v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
        const double m_hat = static_cast<double>(m[i]) / c1;
        const double v_hat = static_cast<double>(v[i]) / c2;
        w[i] -= static_cast<T>(options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  const AdamOptions& options() const { return options_; }

  std::size_t step_count() const { return step_count_; }
  void set_step_count(std::size_t t) { step_count_ = t; }

  const std::vector<NamedTensor<T>>& params() const { return params_; }
  std::vector<T>& first_moment(std::size_t k) { return first_[k]; }
  std::vector<T>& second_moment(std::size_t k) { return second_[k]; }
  const std::vector<T>& first_moment(std::size_t k) const { return first_[k]; }
  const std::vector<T>& second_moment(std::size_t k) const { return second_[k]; }

 private:
  std::vector<NamedTensor<T>> params_;
  AdamOptions options_;
  std::vector<std::vector<T>> first_, second_;
  std::size_t step_count_ = 0;
};

}  // namespace svdf

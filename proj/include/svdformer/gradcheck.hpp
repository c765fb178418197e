#pragma once

// Central-difference gradient verification.
//
// Inputs are drawn on a dyadic grid (multiples of 2^-10) and the step is
// 2^-17, so x +/- h is exact and linear ops reproduce their analytic
// gradient bit-for-bit.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "svdformer/ops.hpp"
#include "svdformer/rng.hpp"
#include "svdformer/tensor.hpp"

namespace svdf {

inline constexpr double kGradCheckStep = 0x1.0p-17;
inline constexpr double kGradCheckFloor = 1e-4;

/// max |analytic - numeric| / max(|numeric|, floor) over all elements of all
/// inputs. `loss_fn` must rebuild the graph from the current input values.
inline double max_gradient_error(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> inputs,
                                 double step = kGradCheckStep, double floor = kGradCheckFloor) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  backward(loss_fn());
  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = loss_fn().item();
      values[i] = saved - step;
      const double minus = loss_fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), floor);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

/// Random tensor on the dyadic grid in [-1, 1], avoiding exact zero.
inline Tensor<double> dyadic_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    do {
      x = std::round(rng.uniform(lo, hi) * 1024.0) / 1024.0;
    } while (x == 0.0 || x < lo || x > hi);
  }
  return Tensor<double>(std::move(shape), std::move(v));
}

/// Tensor whose entries are distinct multiples of 2^-6, shuffled. Keeps
/// max-style reductions away from ties.
inline Tensor<double> distinct_tensor(Shape shape, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = (static_cast<double>(i) - static_cast<double>(n) / 2.0) / 64.0 + 1.0 / 128.0;
  rng.shuffle(v);
  return Tensor<double>(std::move(shape), std::move(v));
}

struct GradCheckCase {
  std::vector<Tensor<double>> inputs;
  std::function<Tensor<double>(const std::vector<Tensor<double>>&)> op;
};

struct CatalogueEntry {
  std::vector<Shape> default_shapes;
  std::function<std::vector<Shape>(Rng&)> random_shapes;
  std::function<GradCheckCase(const std::vector<Shape>&, Rng&)> build;
};

namespace detail {

inline void expect_arity(const std::string& op, const std::vector<Shape>& shapes, std::size_t n) {
  if (shapes.size() != n) {
    throw std::invalid_argument("grad_check: op '" + op + "' takes " + std::to_string(n) + " input shape(s), got " +
                                std::to_string(shapes.size()));
  }
}

inline std::size_t rand_dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

inline std::vector<Tensor<double>> dyadic_inputs(const std::vector<Shape>& shapes, Rng& rng) {
  std::vector<Tensor<double>> out;
  for (const auto& s : shapes) out.push_back(dyadic_tensor(s, rng));
  return out;
}

// Identity whose backward scales the gradient by 1.5; used to prove the checker fails loudly.
inline Tensor<double> faulty_identity(const Tensor<double>& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result<double>("faulty_identity", x.shape(), std::move(out), {x}, [](Node<double>& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += 1.5 * self.grad[i];
    }
  });
}

}  // namespace detail

/// Every op in the differentiable catalogue with its shape conventions.
inline const std::map<std::string, CatalogueEntry>& op_catalogue() {
  using detail::expect_arity;
  using detail::rand_dim;
  using V = std::vector<Tensor<double>>;
  static const std::map<std::string, CatalogueEntry> catalogue = [] {
    std::map<std::string, CatalogueEntry> c;
    auto binary = [](const char* name, Tensor<double> (*fn)(const Tensor<double>&, const Tensor<double>&)) {
      return CatalogueEntry{
          {{3, 4}, {3, 4}},
          [](Rng& r) {
            Shape s{rand_dim(r, 1, 5), rand_dim(r, 1, 5)};
            return std::vector<Shape>{s, r.uniform() < 0.5 ? s : Shape{s[1]}};
          },
          [name, fn](const std::vector<Shape>& s, Rng& r) {
            expect_arity(name, s, 2);
            return GradCheckCase{detail::dyadic_inputs(s, r), [fn](const V& in) { return fn(in[0], in[1]); }};
          }};
    };
    c["add"] = binary("add", &add<double>);
    c["sub"] = binary("sub", &sub<double>);
    c["mul"] = binary("mul", &mul<double>);
    c["add_scalar"] = {{{2, 3}},
                       [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 6), rand_dim(r, 1, 6)}}; },
                       [](const std::vector<Shape>& s, Rng& r) {
                         expect_arity("add_scalar", s, 1);
                         return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return add_scalar(in[0], 0.625); }};
                       }};
    c["mul_scalar"] = {{{2, 3}},
                       [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 6), rand_dim(r, 1, 6)}}; },
                       [](const std::vector<Shape>& s, Rng& r) {
                         expect_arity("mul_scalar", s, 1);
                         return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return mul_scalar(in[0], -1.375); }};
                       }};
    c["matmul"] = {{{3, 4}, {4, 2}},
                   [](Rng& r) {
                     const auto n = rand_dim(r, 1, 5), k = rand_dim(r, 1, 5), m = rand_dim(r, 1, 5);
                     return std::vector<Shape>{{n, k}, {k, m}};
                   },
                   [](const std::vector<Shape>& s, Rng& r) {
                     expect_arity("matmul", s, 2);
                     return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return matmul(in[0], in[1]); }};
                   }};
    c["linear"] = {{{4, 3}, {3, 5}, {5}},
                   [](Rng& r) {
                     const auto n = rand_dim(r, 1, 5), i = rand_dim(r, 1, 5), o = rand_dim(r, 1, 5);
                     return std::vector<Shape>{{n, i}, {i, o}, {o}};
                   },
                   [](const std::vector<Shape>& s, Rng& r) {
                     expect_arity("linear", s, 3);
                     return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return linear(in[0], in[1], in[2]); }};
                   }};
    c["transpose"] = {{{3, 4}},
                      [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 6), rand_dim(r, 1, 6)}}; },
                      [](const std::vector<Shape>& s, Rng& r) {
                        expect_arity("transpose", s, 1);
                        return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return transpose(in[0]); }};
                      }};
    c["reshape"] = {{{3, 4}},
                    [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 6), rand_dim(r, 1, 6)}}; },
                    [](const std::vector<Shape>& s, Rng& r) {
                      expect_arity("reshape", s, 1);
                      return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return reshape(in[0], {in[0].numel()}); }};
                    }};
    c["concat"] = {{{2, 3}, {4, 3}},
                   [](Rng& r) {
                     const auto c2 = rand_dim(r, 1, 4);
                     return std::vector<Shape>{{rand_dim(r, 1, 4), c2}, {rand_dim(r, 1, 4), c2}};
                   },
                   [](const std::vector<Shape>& s, Rng& r) {
                     expect_arity("concat", s, 2);
                     // exercises both axis 0 and axis 1
                     return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) {
                                            Tensor<double> rows = concat<double>({in[0], in[1]}, 0);
                                            return concat<double>({rows, mul(rows, rows)}, 1);
                                          }};
                   }};
    c["gather_rows"] = {{{5, 3}},
                        [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 6), rand_dim(r, 1, 4)}}; },
                        [](const std::vector<Shape>& s, Rng& r) {
                          expect_arity("gather_rows", s, 1);
                          std::vector<std::size_t> idx(2 * s[0][0] + 1);
                          for (auto& i : idx) i = r.index(s[0][0]);
                          return GradCheckCase{detail::dyadic_inputs(s, r), [idx](const V& in) { return gather_rows(in[0], idx); }};
                        }};
    c["relu"] = {{{3, 4}},
                 [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 6), rand_dim(r, 1, 6)}}; },
                 [](const std::vector<Shape>& s, Rng& r) {
                   expect_arity("relu", s, 1);
                   return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return relu(in[0]); }};
                 }};
    c["softmax"] = {{{5}},
                    [](Rng& r) {
                      if (r.uniform() < 0.5) return std::vector<Shape>{{rand_dim(r, 2, 7)}};
                      return std::vector<Shape>{{rand_dim(r, 1, 4), rand_dim(r, 2, 6)}};
                    },
                    [](const std::vector<Shape>& s, Rng& r) {
                      expect_arity("softmax", s, 1);
                      return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return softmax(in[0], in[0].rank() - 1); }};
                    }};
    c["max_reduce"] = {{{4, 3}},
                       [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 4), rand_dim(r, 1, 5), rand_dim(r, 1, 3)}}; },
                       [](const std::vector<Shape>& s, Rng& r) {
                         expect_arity("max_reduce", s, 1);
                         std::vector<Tensor<double>> in{distinct_tensor(s[0], r)};
                         const std::size_t axis = s[0].size() > 1 ? 1 : 0;
                         return GradCheckCase{in, [axis](const V& v) { return max_reduce(v[0], axis); }};
                       }};
    c["mean_reduce"] = {{{4, 3}},
                        [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 4), rand_dim(r, 1, 5), rand_dim(r, 1, 3)}}; },
                        [](const std::vector<Shape>& s, Rng& r) {
                          expect_arity("mean_reduce", s, 1);
                          const std::size_t axis = s[0].size() > 1 ? 1 : 0;
                          return GradCheckCase{detail::dyadic_inputs(s, r), [axis](const V& in) { return mean_reduce(in[0], axis); }};
                        }};
    c["sum"] = {{{4}},
                [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 8)}}; },
                [](const std::vector<Shape>& s, Rng& r) {
                  expect_arity("sum", s, 1);
                  return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return sum(in[0]); }};
                }};
    c["row_norm"] = {{{4, 3}},
                     [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 6), rand_dim(r, 1, 4)}}; },
                     [](const std::vector<Shape>& s, Rng& r) {
                       expect_arity("row_norm", s, 1);
                       return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return row_norm(in[0]); }};
                     }};
    c["row_sqnorm"] = {{{4, 3}},
                       [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 6), rand_dim(r, 1, 4)}}; },
                       [](const std::vector<Shape>& s, Rng& r) {
                         expect_arity("row_sqnorm", s, 1);
                         return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return row_sqnorm(in[0]); }};
                       }};
    c["conv_transpose_1d"] = {{{3, 2}, {3, 2, 4}, {2}},
                              [](Rng& r) {
                                const auto ci = rand_dim(r, 1, 3), co = rand_dim(r, 1, 3);
                                return std::vector<Shape>{{ci, rand_dim(r, 1, 3)}, {ci, co, rand_dim(r, 1, 4)}, {co}};
                              },
                              [](const std::vector<Shape>& s, Rng& r) {
                                expect_arity("conv_transpose_1d", s, 3);
                                return GradCheckCase{detail::dyadic_inputs(s, r),
                                                     [](const V& in) { return conv_transpose_1d(in[0], in[1], in[2], 2); }};
                              }};
    c["conv2d"] = {{{2, 5, 5}, {3, 2, 3, 3}, {3}},
                   [](Rng& r) {
                     const auto ci = rand_dim(r, 1, 2), co = rand_dim(r, 1, 3);
                     return std::vector<Shape>{{ci, rand_dim(r, 2, 6), rand_dim(r, 2, 6)}, {co, ci, 3, 3}, {co}};
                   },
                   [](const std::vector<Shape>& s, Rng& r) {
                     expect_arity("conv2d", s, 3);
                     return GradCheckCase{detail::dyadic_inputs(s, r), [](const V& in) { return conv2d(in[0], in[1], in[2], 2, 1); }};
                   }};
    c["sinusoidal"] = {{{5}},
                       [](Rng& r) { return std::vector<Shape>{{rand_dim(r, 1, 6)}}; },
                       [](const std::vector<Shape>& s, Rng& r) {
                         expect_arity("sinusoidal", s, 1);
                         // positions in [0, 8]: the range of scaled incompleteness distances
                         std::vector<Tensor<double>> in{dyadic_tensor(s[0], r, 0.0, 8.0)};
                         return GradCheckCase{in, [](const V& v) { return sinusoidal(v[0], 8); }};
                       }};
    return c;
  }();
  return catalogue;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Checks one catalogue op on the given input shapes (defaults when empty).
/// The op output is contracted against a fixed random dyadic weighting so
/// that every output element contributes to the scalar loss.
inline GradCheckResult grad_check(const std::string& op_name, std::vector<Shape> input_shapes, double tolerance,
                                  std::uint64_t seed = 0, bool inject_fault = false) {
  if (!(tolerance > 0)) throw std::invalid_argument("grad_check: tolerance must be positive");
  const auto& cat = op_catalogue();
  auto it = cat.find(op_name);
  if (it == cat.end()) throw std::invalid_argument("grad_check: unknown op '" + op_name + "'");
  if (input_shapes.empty()) input_shapes = it->second.default_shapes;
  Rng rng(seed);
  GradCheckCase gc = it->second.build(input_shapes, rng);
  Tensor<double> probe_out;
  {
    NoGradGuard ng;
    probe_out = gc.op(gc.inputs);
  }
  std::vector<double> weights(probe_out.numel());
  for (auto& w : weights) w = std::round(rng.uniform(-1.0, 1.0) * 16.0) / 16.0;
  const Tensor<double> weighting(probe_out.shape(), weights);
  auto loss = [&]() {
    Tensor<double> out = gc.op(gc.inputs);
    if (inject_fault) out = detail::faulty_identity(out);
    return sum(mul(out, weighting));
  };
  GradCheckResult result;
  result.max_relative_error = max_gradient_error(loss, gc.inputs);
  result.passed = result.max_relative_error < tolerance;
  return result;
}

inline std::vector<std::string> catalogue_op_names() {
  std::vector<std::string> names;
  for (const auto& [name, entry] : op_catalogue()) names.push_back(name);
  return names;
}

}  // namespace svdf

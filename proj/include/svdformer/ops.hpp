#pragma once

// Differentiable operation catalogue. Every op validates shapes, computes its
// forward value eagerly and, when recording, attaches a closure that
// accumulates into the parents' gradients in a fixed loop order.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "svdformer/tensor.hpp"

namespace svdf {
namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Gradient buffer of parent `i`, or nullptr when it takes no gradient.
template <typename T>
T* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

template <typename T>
const T* parent_data(Node<T>& self, std::size_t i) {
  return self.parents[i]->data.data();
}

// Outer/axis/inner extents for reductions along `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// `b` broadcasts over `a` when equal in shape, a scalar, or a trailing suffix of `a`.
inline bool broadcastable(const Shape& a, const Shape& b) {
  if (a == b) return true;
  if (shape_numel(b) == 1) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

namespace detail {

enum class Arith { Add, Sub, Mul };

template <typename T>
Tensor<T> arith(const char* name, Arith kind, const Tensor<T>& a, const Tensor<T>& b) {
  if (!broadcastable(a.shape(), b.shape())) throw_shape(name, a.shape(), b.shape());
  const std::size_t n = a.numel();
  const std::size_t nb = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T y = bd[i % nb];
    switch (kind) {
      case Arith::Add: out[i] = ad[i] + y; break;
      case Arith::Sub: out[i] = ad[i] - y; break;
      case Arith::Mul: out[i] = ad[i] * y; break;
    }
  }
  return make_result<T>(name, a.shape(), std::move(out), {a, b}, [kind, n, nb](Node<T>& self) {
    const T* g = self.grad.data();
    const T* ad = parent_data(self, 0);
    const T* bd = parent_data(self, 1);
    if (T* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += kind == Arith::Mul ? g[i] * bd[i % nb] : g[i];
    }
    if (T* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        switch (kind) {
          case Arith::Add: gb[i % nb] += g[i]; break;
          case Arith::Sub: gb[i % nb] -= g[i]; break;
          case Arith::Mul: gb[i % nb] += g[i] * ad[i]; break;
        }
      }
    }
  });
}

}  // namespace detail

/// a + b, where b matches a or broadcasts as a scalar / trailing suffix.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::arith("add", detail::Arith::Add, a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::arith("sub", detail::Arith::Sub, a, b);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::arith("mul", detail::Arith::Mul, a, b);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += s;
  return make_result<T>("add_scalar", a.shape(), std::move(out), {a}, [](detail::Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result<T>("mul_scalar", a.shape(), std::move(out), {a}, [s](detail::Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * s;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// (n,k) x (k,m) -> (n,m)
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw_shape("matmul", a.shape(), b.shape());
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<T> out(n * m);
  detail::MapMat<T>(out.data(), n, m).noalias() =
      detail::ConstMapMat<T>(a.data().data(), n, k) * detail::ConstMapMat<T>(b.data().data(), k, m);
  return make_result<T>("matmul", {n, m}, std::move(out), {a, b}, [n, k, m](detail::Node<T>& self) {
    detail::ConstMapMat<T> g(self.grad.data(), n, m);
    if (T* ga = detail::parent_grad(self, 0)) {
      detail::MapMat<T>(ga, n, k).noalias() += g * detail::ConstMapMat<T>(detail::parent_data(self, 1), k, m).transpose();
    }
    if (T* gb = detail::parent_grad(self, 1)) {
      detail::MapMat<T>(gb, k, m).noalias() += detail::ConstMapMat<T>(detail::parent_data(self, 0), n, k).transpose() * g;
    }
  });
}

/// Pointwise linear layer x W + b for x (n,in), W (in,out), b (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) throw_shape("linear", x.shape(), w.shape());
  if (b.rank() != 1 || b.dim(0) != w.dim(1)) throw_shape("linear", w.shape(), b.shape(), "bias");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  std::vector<T> out(n * out_dim);
  detail::MapMat<T> y(out.data(), n, out_dim);
  y.noalias() = detail::ConstMapMat<T>(x.data().data(), n, in) * detail::ConstMapMat<T>(w.data().data(), in, out_dim);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), out_dim);
  return make_result<T>("linear", {n, out_dim}, std::move(out), {x, w, b}, [n, in, out_dim](detail::Node<T>& self) {
    detail::ConstMapMat<T> g(self.grad.data(), n, out_dim);
    if (T* gx = detail::parent_grad(self, 0)) {
      detail::MapMat<T>(gx, n, in).noalias() +=
          g * detail::ConstMapMat<T>(detail::parent_data(self, 1), in, out_dim).transpose();
    }
    if (T* gw = detail::parent_grad(self, 1)) {
      detail::MapMat<T>(gw, in, out_dim).noalias() +=
          detail::ConstMapMat<T>(detail::parent_data(self, 0), n, in).transpose() * g;
    }
    if (T* gb = detail::parent_grad(self, 2)) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < out_dim; ++c) gb[c] += self.grad[r * out_dim + c];
      }
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw_shape("transpose", x.shape(), "expected rank 2");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xd[i * c + j];
  }
  return make_result<T>("transpose", {c, r}, std::move(out), {x}, [r, c](detail::Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw_shape("reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [](detail::Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

/// Concatenates along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw_shape("concat", first, "axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw_shape("concat", first, s);
    out_shape[axis] += s[axis];
  }
  const auto split = detail::split_axis(out_shape, axis);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * split.inner);
  const std::size_t row = out_shape[axis] * split.inner;
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pd = parts[k].data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pd.data() + o * widths[k], widths[k], out.data() + o * row + offset);
    }
    offset += widths[k];
  }
  const std::size_t outer = split.outer;
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                        [widths, row, outer](detail::Node<T>& self) {
                          std::size_t offset = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            if (T* gp = detail::parent_grad(self, k)) {
                              for (std::size_t o = 0; o < outer; ++o) {
                                for (std::size_t i = 0; i < widths[k]; ++i) {
                                  gp[o * widths[k] + i] += self.grad[o * row + offset + i];
                                }
                              }
                            }
                            offset += widths[k];
                          }
                        });
}

/// Selects rows of a (n, c) matrix: out[i] = x[idx[i]].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& idx) {
  if (x.rank() != 2) throw_shape("gather_rows", x.shape(), "expected rank 2");
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<T> out(idx.size() * c);
  auto xd = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw_shape("gather_rows", x.shape(), "row index " + std::to_string(idx[i]) + " out of range");
    std::copy_n(xd.data() + idx[i] * c, c, out.data() + i * c);
  }
  return make_result<T>("gather_rows", {idx.size(), c}, std::move(out), {x}, [idx, c](detail::Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[idx[i] * c + j] += self.grad[i * c + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities and reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T{0} ? v : T{0};
  return make_result<T>("relu", x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0)) {
      const T* xd = detail::parent_data(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xd[i] > T{0}) gx[i] += self.grad[i];
      }
    }
  });
}

/// Softmax along `axis` with the running max subtracted before exponentiation.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw_shape("softmax", x.shape(), "axis " + std::to_string(axis) + " out of range");
  const auto s = detail::split_axis(x.shape(), axis);
  auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, xd[base + e * s.inner]);
      T total{0};
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(xd[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [s](detail::Node<T>& self) {
    T* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    const T* y = self.data.data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T dot{0};
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t i = base + e * s.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

namespace detail {
inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}
}  // namespace detail

/// Max along `axis` (axis removed). Gradient flows to the first maximal entry.
template <typename T>
Tensor<T> max_reduce(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw_shape("max_reduce", x.shape(), "axis " + std::to_string(axis) + " out of range");
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.extent == 0) throw_shape("max_reduce", x.shape(), "empty reduction axis");
  auto xd = x.data();
  std::vector<T> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      std::size_t best = base;
      for (std::size_t e = 1; e < s.extent; ++e) {
        const std::size_t i = base + e * s.inner;
        if (xd[i] > xd[best]) best = i;
      }
      out[o * s.inner + in] = xd[best];
      arg[o * s.inner + in] = best;
    }
  }
  return make_result<T>("max_reduce", detail::drop_axis(x.shape(), axis), std::move(out), {x},
                        [arg = std::move(arg)](detail::Node<T>& self) {
                          if (T* gx = detail::parent_grad(self, 0)) {
                            for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> mean_reduce(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw_shape("mean_reduce", x.shape(), "axis " + std::to_string(axis) + " out of range");
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.extent == 0) throw_shape("mean_reduce", x.shape(), "empty reduction axis");
  auto xd = x.data();
  std::vector<T> out(s.outer * s.inner, T{0});
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += xd[(o * s.extent + e) * s.inner + in];
    }
  }
  const T scale = T{1} / static_cast<T>(s.extent);
  for (auto& v : out) v *= scale;
  return make_result<T>("mean_reduce", detail::drop_axis(x.shape(), axis), std::move(out), {x},
                        [s, scale](detail::Node<T>& self) {
                          if (T* gx = detail::parent_grad(self, 0)) {
                            for (std::size_t o = 0; o < s.outer; ++o) {
                              for (std::size_t e = 0; e < s.extent; ++e) {
                                for (std::size_t in = 0; in < s.inner; ++in) {
                                  gx[(o * s.extent + e) * s.inner + in] += self.grad[o * s.inner + in] * scale;
                                }
                              }
                            }
                          }
                        });
}

/// Sum of all elements, as a (1,) tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  return make_result<T>("sum", {1}, {total}, {x}, [](detail::Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
    }
  });
}

/// Mean of all elements, as a (1,) tensor.
template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw_shape("mean", x.shape(), "empty tensor");
  return mul_scalar(sum(x), T{1} / static_cast<T>(x.numel()));
}

/// Euclidean norm of each row of a (n, c) matrix. The gradient at a zero row is zero.
template <typename T>
Tensor<T> row_norm(const Tensor<T>& x) {
  if (x.rank() != 2) throw_shape("row_norm", x.shape(), "expected rank 2");
  const std::size_t n = x.dim(0), c = x.dim(1);
  auto xd = x.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < c; ++j) acc += xd[i * c + j] * xd[i * c + j];
    out[i] = std::sqrt(acc);
  }
  return make_result<T>("row_norm", {n}, std::move(out), {x}, [n, c](detail::Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0)) {
      const T* xd = detail::parent_data(self, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const T norm = self.data[i];
        if (norm == T{0}) continue;
        const T f = self.grad[i] / norm;
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += f * xd[i * c + j];
      }
    }
  });
}

/// Squared Euclidean norm of each row of a (n, c) matrix.
template <typename T>
Tensor<T> row_sqnorm(const Tensor<T>& x) {
  if (x.rank() != 2) throw_shape("row_sqnorm", x.shape(), "expected rank 2");
  const std::size_t n = x.dim(0), c = x.dim(1);
  auto xd = x.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < c; ++j) acc += xd[i * c + j] * xd[i * c + j];
    out[i] = acc;
  }
  return make_result<T>("row_sqnorm", {n}, std::move(out), {x}, [n, c](detail::Node<T>& self) {
    if (T* gx = detail::parent_grad(self, 0)) {
      const T* xd = detail::parent_data(self, 0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += T{2} * self.grad[i] * xd[i * c + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// 1-D transposed convolution.
/// x: (c_in, L), w: (c_in, c_out, k), b: (c_out) -> (c_out, (L-1)*stride + k).
/// y[o, l*stride + t] += sum_c x[c, l] * w[c, o, t].
template <typename T>
Tensor<T> conv_transpose_1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride) {
  if (x.rank() != 2 || w.rank() != 3 || x.dim(0) != w.dim(0)) throw_shape("conv_transpose_1d", x.shape(), w.shape());
  if (b.rank() != 1 || b.dim(0) != w.dim(1)) throw_shape("conv_transpose_1d", w.shape(), b.shape(), "bias");
  if (stride == 0) throw_shape("conv_transpose_1d", x.shape(), "stride must be positive");
  const std::size_t cin = x.dim(0), len = x.dim(1), cout = w.dim(1), k = w.dim(2);
  const std::size_t out_len = (len - 1) * stride + k;
  // patches (len, cout*k) = x^T (len, cin) * w (cin, cout*k)
  detail::RowMat<T> patches = detail::ConstMapMat<T>(x.data().data(), cin, len).transpose() *
                              detail::ConstMapMat<T>(w.data().data(), cin, cout * k);
  std::vector<T> out(cout * out_len, T{0});
  auto bd = b.data();
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t t = 0; t < out_len; ++t) out[o * out_len + t] = bd[o];
  }
  for (std::size_t l = 0; l < len; ++l) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t t = 0; t < k; ++t) out[o * out_len + l * stride + t] += patches(l, o * k + t);
    }
  }
  return make_result<T>(
      "conv_transpose_1d", {cout, out_len}, std::move(out), {x, w, b},
      [cin, len, cout, k, stride, out_len](detail::Node<T>& self) {
        const T* g = self.grad.data();
        detail::RowMat<T> dpatches(len, cout * k);
        for (std::size_t l = 0; l < len; ++l) {
          for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t t = 0; t < k; ++t) dpatches(l, o * k + t) = g[o * out_len + l * stride + t];
          }
        }
        if (T* gx = detail::parent_grad(self, 0)) {
          detail::MapMat<T>(gx, cin, len).noalias() +=
              (dpatches * detail::ConstMapMat<T>(detail::parent_data(self, 1), cin, cout * k).transpose()).transpose();
        }
        if (T* gw = detail::parent_grad(self, 1)) {
          detail::MapMat<T>(gw, cin, cout * k).noalias() +=
              detail::ConstMapMat<T>(detail::parent_data(self, 0), cin, len) * dpatches;
        }
        if (T* gb = detail::parent_grad(self, 2)) {
          for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t t = 0; t < out_len; ++t) gb[o] += g[o * out_len + t];
          }
        }
      });
}

/// 2-D convolution via im2col.
/// x: (c_in, H, W), w: (c_out, c_in, kh, kw), b: (c_out) -> (c_out, H', W').
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride, std::size_t pad) {
  if (x.rank() != 3 || w.rank() != 4 || x.dim(0) != w.dim(1)) throw_shape("conv2d", x.shape(), w.shape());
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) throw_shape("conv2d", w.shape(), b.shape(), "bias");
  if (stride == 0) throw_shape("conv2d", x.shape(), "stride must be positive");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (h + 2 * pad < kh || wd + 2 * pad < kw) throw_shape("conv2d", x.shape(), w.shape(), "kernel larger than input");
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t rows = cin * kh * kw, cols_n = oh * ow;

  // cols[(c, i, j), (y, x)] = x[c, y*stride + i - pad, x*stride + j - pad]
  std::vector<std::ptrdiff_t> src(rows * cols_n, -1);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const std::size_t r = (c * kh + i) * kw + j;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            src[r * cols_n + oy * ow + ox] = (static_cast<std::ptrdiff_t>(c) * h + iy) * wd + ix;
          }
        }
      }
    }
  }
  detail::RowMat<T> cols(rows, cols_n);
  auto xd = x.data();
  for (std::size_t i = 0; i < rows * cols_n; ++i) cols.data()[i] = src[i] < 0 ? T{0} : xd[src[i]];

  std::vector<T> out(cout * cols_n);
  detail::MapMat<T> y(out.data(), cout, cols_n);
  y.noalias() = detail::ConstMapMat<T>(w.data().data(), cout, rows) * cols;
  auto bd = b.data();
  for (std::size_t o = 0; o < cout; ++o) y.row(o).array() += bd[o];

  return make_result<T>("conv2d", {cout, oh, ow}, std::move(out), {x, w, b},
                        [src = std::move(src), cols = std::move(cols), rows, cols_n, cout](detail::Node<T>& self) {
                          detail::ConstMapMat<T> g(self.grad.data(), cout, cols_n);
                          if (T* gw = detail::parent_grad(self, 1)) {
                            detail::MapMat<T>(gw, cout, rows).noalias() += g * cols.transpose();
                          }
                          if (T* gx = detail::parent_grad(self, 0)) {
                            detail::RowMat<T> dcols =
                                detail::ConstMapMat<T>(detail::parent_data(self, 1), cout, rows).transpose() * g;
                            for (std::size_t i = 0; i < rows * cols_n; ++i) {
                              if (src[i] >= 0) gx[src[i]] += dcols.data()[i];
                            }
                          }
                          if (T* gb = detail::parent_grad(self, 2)) {
                            for (std::size_t o = 0; o < cout; ++o) {
                              for (std::size_t i = 0; i < cols_n; ++i) gb[o] += g(o, i);
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

/// Transformer-style sinusoidal encoding of scalar positions.
/// p: (n) or (n, 1) -> (n, channels); channel 2k = sin(p / base^(2k/C)), 2k+1 = cos(.).
template <typename T>
Tensor<T> sinusoidal(const Tensor<T>& p, std::size_t channels, T base = T{10000}) {
  if (!(p.rank() == 1 || (p.rank() == 2 && p.dim(1) == 1))) throw_shape("sinusoidal", p.shape(), "expected (n) or (n, 1)");
  if (channels == 0 || channels % 2 != 0) {
    throw_shape("sinusoidal", p.shape(), "channel count " + std::to_string(channels) + " must be even and positive");
  }
  const std::size_t n = p.dim(0);
  std::vector<T> inv_freq(channels / 2);
  for (std::size_t k = 0; k < channels / 2; ++k) {
    inv_freq[k] = T{1} / std::pow(base, static_cast<T>(2 * k) / static_cast<T>(channels));
  }
  auto pd = p.data();
  std::vector<T> out(n * channels);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < channels / 2; ++k) {
      const T arg = pd[i] * inv_freq[k];
      out[i * channels + 2 * k] = std::sin(arg);
      out[i * channels + 2 * k + 1] = std::cos(arg);
    }
  }
  return make_result<T>("sinusoidal", {n, channels}, std::move(out), {p},
                        [inv_freq = std::move(inv_freq), n, channels](detail::Node<T>& self) {
                          T* gp = detail::parent_grad(self, 0);
                          if (!gp) return;
                          const T* pd = detail::parent_data(self, 0);
                          for (std::size_t i = 0; i < n; ++i) {
                            T acc{0};
                            for (std::size_t k = 0; k < inv_freq.size(); ++k) {
                              const T arg = pd[i] * inv_freq[k];
                              acc += (self.grad[i * channels + 2 * k] * std::cos(arg) -
                                      self.grad[i * channels + 2 * k + 1] * std::sin(arg)) *
                                     inv_freq[k];
                            }
                            gp[i] += acc;
                          }
                        });
}

}  // namespace svdf

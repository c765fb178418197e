#pragma once

// Geometric kernels over point sets and the two point encoders built on them.
//
// All squared distances are accumulated as ((d0^2 + d1^2) + d2^2) in the
// storage type, so every search path (brute force, grid, test oracles)
// produces identical values and identical tie-breaks (smaller index wins).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svdformer/errors.hpp"
#include "svdformer/nn.hpp"
#include "svdformer/ops.hpp"
#include "svdformer/pointcloud.hpp"

namespace svdf {

enum class SearchMode { BruteForce, Grid };

/// Row-major K-nearest-neighbour table.
template <typename T>
struct NeighborIndex {
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // rows x k
  std::vector<T> distances;          // Euclidean, non-decreasing per row

  std::size_t rows() const { return k ? indices.size() / k : 0; }
  std::size_t index(std::size_t row, std::size_t j) const { return indices[row * k + j]; }
  T distance(std::size_t row, std::size_t j) const { return distances[row * k + j]; }
};

template <typename T>
inline T squared_distance(const T* a, const T* b, std::size_t dim) {
  T acc = (a[0] - b[0]) * (a[0] - b[0]);
  for (std::size_t d = 1; d < dim; ++d) acc += (a[d] - b[d]) * (a[d] - b[d]);
  return acc;
}

// ---------------------------------------------------------------------------
// Farthest point sampling
// ---------------------------------------------------------------------------

/// Greedy farthest point sampling of `m` indices from an (n, 3) buffer.
/// Starts at the lexicographically smallest (x, y, z); each later pick
/// maximizes the distance to the already selected set.
template <typename T>
std::vector<std::size_t> fps(std::span<const T> xyz, std::size_t m) {
  const std::size_t n = xyz.size() / 3;
  if (m == 0) throw std::invalid_argument("fps: sample count must be positive");
  if (m > n) throw std::invalid_argument("fps: cannot sample " + std::to_string(m) + " of " + std::to_string(n) + " points");
  std::size_t start = 0;
  for (std::size_t i = 1; i < n; ++i) {
    const T* a = xyz.data() + 3 * i;
    const T* b = xyz.data() + 3 * start;
    if (std::lexicographical_compare(a, a + 3, b, b + 3)) start = i;
  }
  std::vector<T> nearest(n, std::numeric_limits<T>::infinity());
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> out;
  out.reserve(m);
  std::size_t cur = start;
  for (std::size_t s = 0; s < m; ++s) {
    out.push_back(cur);
    taken[cur] = 1;
    if (s + 1 == m) break;
    const T* c = xyz.data() + 3 * cur;
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (taken[j]) continue;
      const T d = squared_distance(xyz.data() + 3 * j, c, 3);
      if (d < nearest[j]) nearest[j] = d;
      if (best == n || nearest[j] > nearest[best]) best = j;
    }
    cur = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// K nearest neighbours
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void finish_row(std::vector<std::pair<T, std::size_t>>& cand, std::size_t k, NeighborIndex<T>& out) {
  const std::size_t take = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
  for (std::size_t j = 0; j < k; ++j) {
    // fewer candidates than k: repeat the nearest one
    const auto& c = cand[j < take ? j : 0];
    out.indices.push_back(c.second);
    out.distances.push_back(std::sqrt(c.first));
  }
}

/// Uniform grid over a 3-D reference set, cells stored in CSR form.
template <typename T>
class UniformGrid {
 public:
  explicit UniformGrid(std::span<const T> ref) : ref_(ref) {
    const std::size_t n = ref.size() / 3;
    lo_ = {ref[0], ref[1], ref[2]};
    std::array<T, 3> hi = lo_;
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 3; ++d) {
        lo_[d] = std::min(lo_[d], ref[3 * i + d]);
        hi[d] = std::max(hi[d], ref[3 * i + d]);
      }
    }
    double extent = 0;
    for (int d = 0; d < 3; ++d) extent = std::max(extent, static_cast<double>(hi[d] - lo_[d]));
    if (extent <= 0) extent = 1;
    // about two points per occupied cell for surface-like sets
    cell_ = extent / std::max(1.0, std::cbrt(static_cast<double>(n) / 2.0) * 2.0);
    for (int d = 0; d < 3; ++d) {
      dims_[d] = static_cast<long>(std::floor(static_cast<double>(hi[d] - lo_[d]) / cell_)) + 1;
    }
    const std::size_t cells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
    start_.assign(cells + 1, 0);
    std::vector<std::size_t> cell_of(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = cell_coord(ref.data() + 3 * i);
      cell_of[i] = flat(c);
      ++start_[cell_of[i] + 1];
    }
    for (std::size_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
    items_.resize(n);
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < n; ++i) items_[fill[cell_of[i]]++] = i;
  }

  void query(const T* q, std::size_t k, NeighborIndex<T>& out, std::vector<std::pair<T, std::size_t>>& cand) const {
    cand.clear();
    const auto qc = cell_coord_unclamped(q);
    const long max_ring = std::max({dims_[0], dims_[1], dims_[2]}) +
                          std::max({std::abs(qc[0]), std::abs(qc[1]), std::abs(qc[2])}) + 1;
    const std::size_t total = ref_.size() / 3;
    const std::size_t want = std::min(k, total);
    for (long r = 0; r <= max_ring; ++r) {
      visit_ring(qc, r, [&](std::size_t cell) {
        for (std::size_t s = start_[cell]; s < start_[cell + 1]; ++s) {
          const std::size_t i = items_[s];
          cand.emplace_back(squared_distance(q, ref_.data() + 3 * i, 3), i);
        }
      });
      if (cand.size() >= want) {
        // Everything outside ring r is at least r * cell away from q.
        std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(want - 1), cand.end());
        const double kth = static_cast<double>(cand[want - 1].first);
        const double bound = static_cast<double>(r) * cell_;
        if (cand.size() == total || kth < bound * bound * (1.0 - 1e-4)) break;
      }
    }
    finish_row(cand, k, out);
  }

 private:
  std::array<long, 3> cell_coord_unclamped(const T* p) const {
    std::array<long, 3> c{};
    for (int d = 0; d < 3; ++d) c[d] = static_cast<long>(std::floor(static_cast<double>(p[d] - lo_[d]) / cell_));
    return c;
  }
  std::array<long, 3> cell_coord(const T* p) const {
    auto c = cell_coord_unclamped(p);
    for (int d = 0; d < 3; ++d) c[d] = std::clamp(c[d], 0L, dims_[d] - 1);
    return c;
  }
  std::size_t flat(const std::array<long, 3>& c) const {
    return static_cast<std::size_t>((c[0] * dims_[1] + c[1]) * dims_[2] + c[2]);
  }

  // Visits every in-grid cell at Chebyshev distance exactly r from `c`.
  template <typename F>
  void visit_ring(const std::array<long, 3>& c, long r, F&& fn) const {
    for (long x = c[0] - r; x <= c[0] + r; ++x) {
      if (x < 0 || x >= dims_[0]) continue;
      for (long y = c[1] - r; y <= c[1] + r; ++y) {
        if (y < 0 || y >= dims_[1]) continue;
        const bool edge_xy = std::abs(x - c[0]) == r || std::abs(y - c[1]) == r;
        for (long z = c[2] - r; z <= c[2] + r; z += (edge_xy || r == 0) ? 1 : 2 * r) {
          if (z >= 0 && z < dims_[2]) fn(flat({x, y, z}));
        }
      }
    }
  }

  std::span<const T> ref_;
  std::array<T, 3> lo_{};
  double cell_ = 1;
  std::array<long, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_, items_;
};

}  // namespace detail

/// Exact K nearest neighbours of each query row among the reference rows,
/// in `dim`-dimensional space. Ties are broken by smaller reference index.
/// When K exceeds the reference size the nearest neighbour is repeated.
template <typename T>
NeighborIndex<T> knn(std::span<const T> query, std::span<const T> reference, std::size_t k, std::size_t dim = 3,
                     SearchMode mode = SearchMode::BruteForce) {
  if (k == 0) throw std::invalid_argument("knn: K must be positive");
  if (dim == 0 || query.size() % dim != 0 || reference.size() % dim != 0) throw std::invalid_argument("knn: bad dimension");
  if (reference.empty()) throw std::invalid_argument("knn: reference set is empty");
  const std::size_t nq = query.size() / dim, nr = reference.size() / dim;
  NeighborIndex<T> out;
  out.k = k;
  out.indices.reserve(nq * k);
  out.distances.reserve(nq * k);
  std::vector<std::pair<T, std::size_t>> cand;
  if (mode == SearchMode::Grid) {
    if (dim != 3) throw std::invalid_argument("knn: grid search supports 3-D points only");
    detail::UniformGrid<T> grid(reference);
    for (std::size_t i = 0; i < nq; ++i) grid.query(query.data() + 3 * i, k, out, cand);
    return out;
  }
  cand.resize(nr);
  for (std::size_t i = 0; i < nq; ++i) {
    const T* q = query.data() + i * dim;
    cand.resize(nr);
    for (std::size_t j = 0; j < nr; ++j) cand[j] = {squared_distance(q, reference.data() + j * dim, dim), j};
    detail::finish_row(cand, k, out);
  }
  return out;
}

/// Distance from every point of X to its nearest point of Y.
template <typename T>
std::vector<T> min_dist_to_set(std::span<const T> x, std::span<const T> y, SearchMode mode = SearchMode::BruteForce) {
  if (y.empty()) throw std::invalid_argument("min_dist_to_set: target set is empty");
  return knn(x, y, 1, 3, mode).distances;
}

// ---------------------------------------------------------------------------
// Point encoders
// ---------------------------------------------------------------------------

namespace detail {
inline std::vector<std::size_t> repeat_each(std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n * k);
  for (std::size_t i = 0; i < n * k; ++i) idx[i] = i / k;
  return idx;
}
}  // namespace detail

/// Set abstraction: FPS centroids, K-neighbour grouping, shared MLP on
/// (neighbour_xyz - centroid_xyz, neighbour_feature), max pool per group.
/// With no centroid count the layer pools every point into one vector,
/// centred on the mean position.
template <typename T>
class SetAbstraction {
 public:
  struct Output {
    Tensor<T> xyz;
    Tensor<T> features;
  };

  SetAbstraction() = default;
  SetAbstraction(ParameterStore<T>& store, const std::string& name, std::size_t in_features,
                 const std::vector<std::size_t>& mlp_out, std::optional<std::size_t> centroids, std::size_t k)
      : centroids_(centroids), k_(k) {
    std::vector<std::size_t> channels{in_features + 3};
    channels.insert(channels.end(), mlp_out.begin(), mlp_out.end());
    mlp_ = Mlp<T>(store, name + ".mlp", channels, true);
  }

  Output operator()(const Tensor<T>& xyz, const Tensor<T>& features) const {
    if (xyz.rank() != 2 || xyz.dim(1) != 3) throw_shape("set_abstraction", xyz.shape(), "expected (n, 3) coordinates");
    if (features.rank() != 2 || features.dim(0) != xyz.dim(0)) throw_shape("set_abstraction", xyz.shape(), features.shape());
    const std::size_t n = xyz.dim(0);
    if (!centroids_) {
      std::vector<T> centre(3, T{0});
      auto pd = xyz.data();
      for (std::size_t i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) centre[d] += pd[3 * i + d];
      }
      for (auto& c : centre) c /= static_cast<T>(n);
      Tensor<T> centre_t({3}, centre);
      Tensor<T> local = sub(xyz, centre_t);
      Tensor<T> pooled = max_reduce(mlp_(concat<T>({local, features}, 1)), 0);
      return {Tensor<T>({1, 3}, centre), reshape(pooled, {1, pooled.numel()})};
    }
    const std::size_t m = *centroids_;
    const auto centre_idx = fps(xyz.data(), m);
    Tensor<T> centres = gather_rows(xyz, centre_idx);
    const auto nbr = knn(centres.data(), xyz.data(), k_, 3);
    Tensor<T> local = sub(gather_rows(xyz, nbr.indices), gather_rows(centres, detail::repeat_each(m, k_)));
    Tensor<T> grouped = concat<T>({local, gather_rows(features, nbr.indices)}, 1);
    Tensor<T> h = mlp_(grouped);
    return {centres.detach(), max_reduce(reshape(h, {m, k_, h.dim(1)}), 1)};
  }

  std::size_t out_features() const { return mlp_.out_features(); }

 private:
  std::optional<std::size_t> centroids_;
  std::size_t k_ = 1;
  Mlp<T> mlp_;
};

/// Edge convolution: per point, max over K neighbours j of
/// mlp(f_i, f_j - f_i). Neighbours are searched in `space` (coordinates for
/// a first layer) or in feature space when no space is given.
template <typename T>
class EdgeConv {
 public:
  EdgeConv() = default;
  EdgeConv(ParameterStore<T>& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& mlp_out,
           std::size_t k)
      : k_(k) {
    if (k == 0) throw std::invalid_argument("edgeconv: K must be positive");
    std::vector<std::size_t> channels{2 * in};
    channels.insert(channels.end(), mlp_out.begin(), mlp_out.end());
    mlp_ = Mlp<T>(store, name + ".mlp", channels, true);
  }

  Tensor<T> operator()(const Tensor<T>& features, const Tensor<T>* space = nullptr) const {
    if (features.rank() != 2) throw_shape("edgeconv", features.shape(), "expected (n, c)");
    const Tensor<T>& s = space ? *space : features;
    if (s.rank() != 2 || s.dim(0) != features.dim(0)) throw_shape("edgeconv", s.shape(), features.shape());
    const std::size_t n = features.dim(0);
    const auto nbr = knn(s.data(), s.data(), k_, s.dim(1));
    Tensor<T> centre = gather_rows(features, detail::repeat_each(n, k_));
    Tensor<T> edge = concat<T>({centre, sub(gather_rows(features, nbr.indices), centre)}, 1);
    Tensor<T> h = mlp_(edge);
    return max_reduce(reshape(h, {n, k_, h.dim(1)}), 1);
  }

  std::size_t out_features() const { return mlp_.out_features(); }
  Mlp<T>& mlp() { return mlp_; }

 private:
  std::size_t k_ = 1;
  Mlp<T> mlp_;
};

}  // namespace svdf

#pragma once

// Completion metrics: Chamfer (L1 / L2), density-aware Chamfer, F-Score@tau
// and minimal matching distance. All results are accumulated in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "svdformer/pointcloud.hpp"
#include "svdformer/pointops.hpp"

namespace svdf {

enum class ChamferVariant { L1, L2 };

inline constexpr double kDefaultDcdAlpha = 1000.0;
inline constexpr double kDefaultFscoreTau = 0.01;

namespace detail {
template <typename T>
void require_points(std::span<const T> xyz, const char* op) {
  if (xyz.empty()) throw std::invalid_argument(std::string(op) + ": point cloud is empty");
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}
}  // namespace detail

/// L1: (mean_x d(x,Y) + mean_y d(y,X)) / 2.  L2: mean_x d^2 + mean_y d^2.
template <typename T>
double chamfer(std::span<const T> x, std::span<const T> y, ChamferVariant variant,
               SearchMode mode = SearchMode::BruteForce) {
  detail::require_points(x, "chamfer");
  detail::require_points(y, "chamfer");
  const auto dx = min_dist_to_set(x, y, mode);
  const auto dy = min_dist_to_set(y, x, mode);
  auto side = [&](const std::vector<T>& d) {
    std::vector<double> v(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double di = static_cast<double>(d[i]);
      v[i] = variant == ChamferVariant::L1 ? di : di * di;
    }
    return detail::mean_of(v);
  };
  const double total = side(dx) + side(dy);
  return variant == ChamferVariant::L1 ? 0.5 * total : total;
}

inline double chamfer(const PointCloud& x, const PointCloud& y, ChamferVariant variant) {
  return chamfer<float>(x.xyz(), y.xyz(), variant);
}

/// Density-aware Chamfer distance:
///   1/2 [ mean_x (1 - e^{-a |x - y^|^2} / n_y^) + mean_y (1 - e^{-a |y - x^|^2} / n_x^) ]
/// where y^ is the nearest neighbour of x and n_y^ counts the queries that chose y^.
template <typename T>
double dcd(std::span<const T> x, std::span<const T> y, double alpha = kDefaultDcdAlpha) {
  detail::require_points(x, "dcd");
  detail::require_points(y, "dcd");
  if (!(alpha > 0)) throw std::invalid_argument("dcd: alpha must be positive");
  auto side = [alpha](std::span<const T> a, std::span<const T> b) {
    const auto nn = knn(a, b, 1);
    std::vector<std::size_t> hits(b.size() / 3, 0);
    for (auto j : nn.indices) ++hits[j];
    std::vector<double> terms(nn.indices.size());
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const double d = static_cast<double>(nn.distances[i]);
      terms[i] = 1.0 - std::exp(-alpha * d * d) / static_cast<double>(hits[nn.indices[i]]);
    }
    return detail::mean_of(terms);
  };
  return 0.5 * (side(x, y) + side(y, x));
}

inline double dcd(const PointCloud& x, const PointCloud& y, double alpha = kDefaultDcdAlpha) {
  return dcd<float>(x.xyz(), y.xyz(), alpha);
}

struct FScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

/// Precision/recall of points lying strictly closer than tau to the other set.
template <typename T>
FScore fscore_detail(std::span<const T> pred, std::span<const T> gt, double tau = kDefaultFscoreTau) {
  detail::require_points(pred, "fscore");
  detail::require_points(gt, "fscore");
  if (!(tau > 0)) throw std::invalid_argument("fscore: tau must be positive");
  auto fraction_within = [tau](const std::vector<T>& d) {
    std::size_t n = 0;
    for (T v : d) n += static_cast<double>(v) < tau ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(d.size());
  };
  FScore s;
  s.precision = fraction_within(min_dist_to_set(pred, gt));
  s.recall = fraction_within(min_dist_to_set(gt, pred));
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

template <typename T>
double fscore(std::span<const T> pred, std::span<const T> gt, double tau = kDefaultFscoreTau) {
  return fscore_detail(pred, gt, tau).f1;
}

inline double fscore(const PointCloud& pred, const PointCloud& gt, double tau = kDefaultFscoreTau) {
  return fscore<float>(pred.xyz(), gt.xyz(), tau);
}

/// Mean over outputs of the smallest Chamfer distance to any reference.
inline double mmd(const std::vector<PointCloud>& outputs, const std::vector<PointCloud>& references,
                  ChamferVariant variant = ChamferVariant::L2) {
  if (outputs.empty() || references.empty()) throw std::invalid_argument("mmd: empty cloud list");
  std::vector<double> best(outputs.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    for (const auto& ref : references) best[i] = std::min(best[i], chamfer(outputs[i], ref, variant));
  }
  return detail::mean_of(best);
}

/// Per-pair metric row plus category means.
struct MetricReport {
  struct Row {
    std::string id;
    std::string category;
    double cd_l1 = 0, cd_l2 = 0, dcd = 0, f1 = 0;
  };
  std::vector<Row> rows;

  Row mean() const {
    Row m{"MEAN", "", 0, 0, 0, 0};
    if (rows.empty()) return m;
    for (const auto& r : rows) {
      m.cd_l1 += r.cd_l1;
      m.cd_l2 += r.cd_l2;
      m.dcd += r.dcd;
      m.f1 += r.f1;
    }
    const double n = static_cast<double>(rows.size());
    m.cd_l1 /= n;
    m.cd_l2 /= n;
    m.dcd /= n;
    m.f1 /= n;
    return m;
  }

  std::map<std::string, Row> per_category() const {
    std::map<std::string, Row> sums;
    std::map<std::string, std::size_t> counts;
    for (const auto& r : rows) {
      auto& s = sums[r.category];
      s.id = s.category = r.category;
      s.cd_l1 += r.cd_l1;
      s.cd_l2 += r.cd_l2;
      s.dcd += r.dcd;
      s.f1 += r.f1;
      ++counts[r.category];
    }
    for (auto& [cat, s] : sums) {
      const double n = static_cast<double>(counts[cat]);
      s.cd_l1 /= n;
      s.cd_l2 /= n;
      s.dcd /= n;
      s.f1 /= n;
    }
    return sums;
  }
};

inline MetricReport::Row evaluate_pair(const std::string& id, const PointCloud& pred, const PointCloud& gt,
                                       double alpha = kDefaultDcdAlpha, double tau = kDefaultFscoreTau) {
  return {id, "", chamfer(pred, gt, ChamferVariant::L1), chamfer(pred, gt, ChamferVariant::L2), dcd(pred, gt, alpha),
          fscore(pred, gt, tau)};
}

}  // namespace svdf

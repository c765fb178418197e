#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "svdformer/errors.hpp"
#include "svdformer/tensor.hpp"

namespace svdf {

/// N x 3 coordinates stored row-major.
template <typename T>
class BasicPointCloud {
 public:
  using value_type = T;

  BasicPointCloud() = default;
  explicit BasicPointCloud(std::vector<T> xyz) : xyz_(std::move(xyz)) {
    if (xyz_.size() % 3 != 0) throw DataError("point cloud buffer length " + std::to_string(xyz_.size()) + " is not a multiple of 3");
  }

  static BasicPointCloud from_points(const std::vector<std::array<T, 3>>& pts) {
    std::vector<T> xyz;
    xyz.reserve(pts.size() * 3);
    for (const auto& p : pts) xyz.insert(xyz.end(), p.begin(), p.end());
    return BasicPointCloud(std::move(xyz));
  }

  template <typename U>
  static BasicPointCloud from_tensor(const Tensor<U>& t) {
    if (t.rank() != 2 || t.dim(1) != 3) throw_shape("point cloud", t.shape(), "expected (n, 3)");
    return BasicPointCloud(std::vector<T>(t.data().begin(), t.data().end()));
  }

  template <typename U = T>
  Tensor<U> to_tensor() const {
    return Tensor<U>({size(), 3}, std::vector<U>(xyz_.begin(), xyz_.end()));
  }

  std::size_t size() const { return xyz_.size() / 3; }
  bool empty() const { return xyz_.empty(); }
  std::array<T, 3> point(std::size_t i) const { return {xyz_[3 * i], xyz_[3 * i + 1], xyz_[3 * i + 2]}; }
  void push_back(const std::array<T, 3>& p) { xyz_.insert(xyz_.end(), p.begin(), p.end()); }

  std::span<const T> xyz() const { return xyz_; }
  std::span<T> mutable_xyz() { return xyz_; }

  BasicPointCloud select(const std::vector<std::size_t>& idx) const {
    std::vector<T> out;
    out.reserve(idx.size() * 3);
    for (auto i : idx) out.insert(out.end(), xyz_.begin() + 3 * i, xyz_.begin() + 3 * i + 3);
    return BasicPointCloud(std::move(out));
  }

  bool all_finite() const {
    for (T v : xyz_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const BasicPointCloud&, const BasicPointCloud&) = default;

 private:
  std::vector<T> xyz_;
};

using PointCloud = BasicPointCloud<float>;

/// Rejects empty clouds and non-finite coordinates.
template <typename T>
void validate_cloud(std::span<const T> xyz, std::string_view what) {
  if (xyz.empty()) throw DataError(std::string(what) + ": point cloud is empty");
  if (xyz.size() % 3 != 0) throw DataError(std::string(what) + ": buffer length is not a multiple of 3");
  for (T v : xyz) {
    if (!std::isfinite(v)) throw DataError(std::string(what) + ": non-finite coordinate");
  }
}

// ---------------------------------------------------------------------------
// ASCII .xyz: one "x y z" triple per line, '#' starts a comment.
// ---------------------------------------------------------------------------

inline PointCloud parse_xyz(std::string_view text, std::string_view source = "<memory>") {
  std::vector<float> xyz;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    float vals[3];
    int count = 0;
    std::size_t i = 0;
    auto skip_ws = [&] {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == ',')) ++i;
    };
    skip_ws();
    if (i == line.size()) {
      if (end == text.size()) break;
      continue;
    }
    while (i < line.size()) {
      if (count == 3) throw DataError(std::string(source) + ": line " + std::to_string(line_no) + ": expected 3 values, found more");
      const char* first = line.data() + i;
      const char* last = line.data() + line.size();
      if (*first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, vals[count]);
      if (ec != std::errc() || (ptr != last && *ptr != ' ' && *ptr != '\t' && *ptr != '\r' && *ptr != ',')) {
        throw DataError(std::string(source) + ": line " + std::to_string(line_no) + ": malformed number");
      }
      if (!std::isfinite(vals[count])) throw DataError(std::string(source) + ": line " + std::to_string(line_no) + ": non-finite value");
      ++count;
      i = static_cast<std::size_t>(ptr - line.data());
      skip_ws();
    }
    if (count != 3) {
      throw DataError(std::string(source) + ": line " + std::to_string(line_no) + ": expected 3 values, found " + std::to_string(count));
    }
    xyz.insert(xyz.end(), vals, vals + 3);
    if (end == text.size()) break;
  }
  return PointCloud(std::move(xyz));
}

inline PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_xyz(ss.str(), path.string());
}

/// Shortest round-trip decimal form of each coordinate.
inline std::string format_xyz(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 36);
  char buf[32];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    for (int d = 0; d < 3; ++d) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), p[d]);
      out.append(buf, ptr);
      out.push_back(d == 2 ? '\n' : ' ');
    }
  }
  return out;
}

inline void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string text = format_xyz(cloud);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("short write to " + path.string());
}

}  // namespace svdf

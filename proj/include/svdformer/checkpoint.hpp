#pragma once

// Checkpoint layout: a directory holding
//   manifest.json  [{"name", "shape", "dtype": "f32le", "offset", "len_bytes"}, ...]
//   weights.bin    raw little-endian float32 blobs at the declared offsets

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "svdformer/errors.hpp"
#include "svdformer/tensor.hpp"

namespace svdf {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

inline void append_f32le(std::vector<char>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

inline float read_f32le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

}  // namespace detail

/// Encodes floats as raw little-endian f32.
inline std::vector<char> encode_f32le(std::span<const float> values) {
  std::vector<char> out;
  out.reserve(values.size() * 4);
  for (float v : values) detail::append_f32le(out, v);
  return out;
}

inline std::vector<float> decode_f32le(std::span<const char> bytes) {
  if (bytes.size() % 4 != 0) throw DataError("f32le blob length " + std::to_string(bytes.size()) + " not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::read_f32le(p + 4 * i);
  return out;
}

inline void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedArray>& arrays) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<char> blob;
  for (const auto& a : arrays) {
    if (shape_numel(a.shape) != a.values.size()) throw DataError("checkpoint: '" + a.name + "' shape/size mismatch");
    const std::size_t offset = blob.size();
    for (float v : a.values) detail::append_f32le(blob, v);
    manifest.push_back({{"name", a.name},
                        {"shape", a.shape},
                        {"dtype", "f32le"},
                        {"offset", offset},
                        {"len_bytes", blob.size() - offset}});
  }
  const std::string text = manifest.dump(2) + "\n";
  detail::write_file_bytes(dir / "manifest.json", std::vector<char>(text.begin(), text.end()));
  detail::write_file_bytes(dir / "weights.bin", blob);
}

inline std::vector<NamedArray> load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_bytes = detail::read_file_bytes(dir / "manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!manifest.is_array()) throw DataError("checkpoint manifest must be a JSON array");
  const auto blob = detail::read_file_bytes(dir / "weights.bin");
  std::vector<NamedArray> arrays;
  for (const auto& entry : manifest) {
    try {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<Shape>();
      if (entry.at("dtype").get<std::string>() != "f32le") throw DataError("checkpoint: '" + a.name + "' has unsupported dtype");
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto len = entry.at("len_bytes").get<std::size_t>();
      if (len != shape_numel(a.shape) * 4) throw DataError("checkpoint: '" + a.name + "' len_bytes does not match shape");
      if (offset > blob.size() || len > blob.size() - offset) throw DataError("checkpoint: '" + a.name + "' exceeds weights.bin");
      a.values = decode_f32le(std::span<const char>(blob.data() + offset, len));
      arrays.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("checkpoint manifest entry malformed: " + std::string(e.what()));
    }
  }
  return arrays;
}

/// Snapshot of named parameters as float arrays.
template <typename T>
std::vector<NamedArray> to_arrays(const std::vector<NamedTensor<T>>& params) {
  std::vector<NamedArray> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return out;
}

/// Copies stored values into the given parameters; names and shapes must all match.
template <typename T>
void assign_arrays(const std::vector<NamedArray>& arrays, std::vector<NamedTensor<T>>& params) {
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint is missing parameter '" + p.name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw DataError("checkpoint parameter '" + p.name + "' has shape " + shape_str(it->second->shape) +
                      ", model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
  }
}

}  // namespace svdf

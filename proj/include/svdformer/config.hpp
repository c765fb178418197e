#pragma once

// Model and training configuration with named profiles.
//
// Config files are JSON:
//   {"profile": "desk", "model": {"seed_points": 128, ...}, "train": {"lr": 1e-4, ...}}
// Profile defaults are applied first; listed keys override them. Unknown
// keys are rejected.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "svdformer/checkpoint.hpp"
#include "svdformer/errors.hpp"
#include "svdformer/metrics.hpp"

namespace svdf {

struct ModelConfig {
  std::string profile = "desk";

  // point counts and upsampling
  std::size_t input_points = 512;
  std::size_t coarse_points = 128;
  std::size_t seed_points = 128;
  std::size_t rate1 = 2;
  std::size_t rate2 = 2;
  std::size_t gt_points = 512;

  // self-view projection
  std::size_t views = 3;
  std::size_t resolution = 64;
  double view_distance = 0.7;
  double half_extent = 0.5;
  bool jitter_views = false;

  // point encoder (set abstraction)
  std::size_t sa1_centroids = 128;
  std::size_t sa2_centroids = 32;
  std::size_t sa_neighbors = 16;
  std::vector<std::size_t> sa1_channels{64, 128};
  std::vector<std::size_t> sa2_channels{128, 256};
  std::vector<std::size_t> sa3_channels{512, 256};

  // view encoder and fusion
  std::vector<std::size_t> cnn_channels{32, 64, 128, 256};
  std::size_t fusion_width = 256;

  // coarse decoder
  std::size_t coarse_feature = 32;
  std::size_t coarse_attention = 64;

  // refinement
  std::size_t embed_dim = 64;
  double gamma = 0.2;
  std::vector<std::size_t> decoder1{128, 64};
  std::vector<std::size_t> decoder2{128, 64};
  std::size_t offset_feature = 32;
  std::size_t offset_hidden = 32;
  std::size_t edge1_channels = 32;
  std::size_t edge1_neighbors = 16;
  std::size_t partial_channels = 64;
  std::size_t edge2_neighbors = 8;

  bool attention_scale = false;
  std::uint64_t seed = 0;

  std::size_t view_feature() const { return cnn_channels.back(); }
  std::size_t point_feature() const { return sa3_channels.back(); }
  std::size_t descriptor_dim() const { return fusion_width + point_feature(); }
  std::size_t output_points() const { return seed_points * rate1 * rate2; }
  double fov_deg() const { return 2.0 * std::atan(1.1 * half_extent / view_distance) * 180.0 / 3.14159265358979323846; }

  void validate() const;
};

struct TrainConfig {
  double lr = 1e-4;
  double decay = 1.0;
  std::size_t decay_every = 1;  // epochs
  std::size_t batch_size = 4;
  std::size_t epochs = 0;
  std::size_t steps = 1000;  // overrides epochs when nonzero
  std::string chamfer = "l1";
  bool partial_matching = false;
  std::uint64_t seed = 0;
  std::size_t log_every = 0;  // 0 = silent

  ChamferVariant chamfer_variant() const { return chamfer == "l2" ? ChamferVariant::L2 : ChamferVariant::L1; }
  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

template <typename F>
void visit_fields(ModelConfig& m, F&& f) {
  f("input_points", m.input_points);
  f("coarse_points", m.coarse_points);
  f("seed_points", m.seed_points);
  f("rate1", m.rate1);
  f("rate2", m.rate2);
  f("gt_points", m.gt_points);
  f("views", m.views);
  f("resolution", m.resolution);
  f("view_distance", m.view_distance);
  f("half_extent", m.half_extent);
  f("jitter_views", m.jitter_views);
  f("sa1_centroids", m.sa1_centroids);
  f("sa2_centroids", m.sa2_centroids);
  f("sa_neighbors", m.sa_neighbors);
  f("sa1_channels", m.sa1_channels);
  f("sa2_channels", m.sa2_channels);
  f("sa3_channels", m.sa3_channels);
  f("cnn_channels", m.cnn_channels);
  f("fusion_width", m.fusion_width);
  f("coarse_feature", m.coarse_feature);
  f("coarse_attention", m.coarse_attention);
  f("embed_dim", m.embed_dim);
  f("gamma", m.gamma);
  f("decoder1", m.decoder1);
  f("decoder2", m.decoder2);
  f("offset_feature", m.offset_feature);
  f("offset_hidden", m.offset_hidden);
  f("edge1_channels", m.edge1_channels);
  f("edge1_neighbors", m.edge1_neighbors);
  f("partial_channels", m.partial_channels);
  f("edge2_neighbors", m.edge2_neighbors);
  f("attention_scale", m.attention_scale);
  f("seed", m.seed);
}

template <typename F>
void visit_fields(TrainConfig& t, F&& f) {
  f("lr", t.lr);
  f("decay", t.decay);
  f("decay_every", t.decay_every);
  f("batch_size", t.batch_size);
  f("epochs", t.epochs);
  f("steps", t.steps);
  f("chamfer", t.chamfer);
  f("partial_matching", t.partial_matching);
  f("seed", t.seed);
  f("log_every", t.log_every);
}

template <typename C>
void apply_overrides(C& cfg, const nlohmann::json& obj, const std::string& section) {
  if (!obj.is_object()) throw DataError("config: '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool found = false;
    visit_fields(cfg, [&](const char* name, auto& field) {
      if (key != name) return;
      found = true;
      try {
        using Field = std::remove_reference_t<decltype(field)>;
        field = value.template get<Field>();
      } catch (const nlohmann::json::exception&) {
        throw DataError("config: " + section + "." + key + " has the wrong type");
      }
    });
    if (!found) throw DataError("config: unknown key " + section + "." + key);
  }
}

template <typename C>
nlohmann::json fields_to_json(const C& cfg) {
  nlohmann::json out = nlohmann::json::object();
  visit_fields(const_cast<C&>(cfg), [&](const char* name, auto& field) { out[name] = field; });
  return out;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DataError("config: " + what);
}

}  // namespace detail

inline void ModelConfig::validate() const {
  using detail::require;
  require(input_points >= 1, "input_points must be positive");
  require(coarse_points >= 1, "coarse_points must be positive");
  require(seed_points >= 1 && seed_points <= coarse_points + input_points,
          "seed_points must lie in [1, coarse_points + input_points]");
  require(rate1 >= 1 && rate2 >= 1, "upsampling rates must be at least 1");
  require(views >= 1, "views must be positive");
  require(resolution >= 8, "resolution must be at least 8");
  require(view_distance > 0 && half_extent > 0, "view_distance and half_extent must be positive");
  require(sa1_centroids >= 1 && sa1_centroids <= input_points, "sa1_centroids must lie in [1, input_points]");
  require(sa2_centroids >= 1 && sa2_centroids <= sa1_centroids, "sa2_centroids must lie in [1, sa1_centroids]");
  require(sa_neighbors >= 1 && edge1_neighbors >= 1 && edge2_neighbors >= 1, "neighbour counts must be positive");
  require(!sa1_channels.empty() && !sa2_channels.empty() && !sa3_channels.empty(), "set abstraction channels are empty");
  require(!cnn_channels.empty(), "cnn_channels is empty");
  require(embed_dim >= 2 && embed_dim % 2 == 0, "embed_dim must be even");
  require(gamma > 0, "gamma must be positive");
  require(!decoder1.empty() && !decoder2.empty(), "decoder widths are empty");
  require(decoder1.back() == offset_feature * rate1, "decoder1 must end at offset_feature * rate1");
  require(decoder2.back() == offset_feature * rate2, "decoder2 must end at offset_feature * rate2");
  require(input_points / 4 >= 1, "input_points too small for the partial feature extractor");
}

inline void TrainConfig::validate() const {
  using detail::require;
  require(lr > 0, "lr must be positive");
  require(decay > 0 && decay <= 1, "decay must lie in (0, 1]");
  require(decay_every >= 1, "decay_every must be positive");
  require(batch_size >= 1, "batch_size must be positive");
  require(steps > 0 || epochs > 0, "either steps or epochs must be positive");
  require(chamfer == "l1" || chamfer == "l2", "chamfer must be \"l1\" or \"l2\"");
}

/// Named profiles: "pcn" and "shapenet55" carry the published network
/// settings; "desk" is a small configuration for single-core training.
inline RunConfig profile_config(const std::string& name) {
  RunConfig c;
  c.model.profile = name;
  if (name == "desk") return c;
  ModelConfig& m = c.model;
  m.sa1_centroids = 512;
  m.sa2_centroids = 128;
  m.coarse_feature = 64;
  m.coarse_attention = 128;
  m.embed_dim = 256;
  m.offset_feature = 128;
  m.offset_hidden = 64;
  m.edge1_channels = 64;
  m.partial_channels = 256;
  m.input_points = 2048;
  m.resolution = 224;
  if (name == "pcn") {
    m.seed_points = m.coarse_points = 512;
    m.rate1 = 4;
    m.rate2 = 8;
    m.gt_points = 16384;
    m.view_distance = 0.7;
    m.half_extent = 0.5;
    m.decoder1 = {768, 128 * m.rate1};
    m.decoder2 = {512, 128 * m.rate2};
    c.train.lr = 1e-4;
    c.train.decay = 0.7;
    c.train.decay_every = 40;
    c.train.chamfer = "l1";
  } else if (name == "shapenet55") {
    m.seed_points = m.coarse_points = 1024;
    m.rate1 = 2;
    m.rate2 = 4;
    m.gt_points = 8192;
    m.view_distance = 1.5;
    m.half_extent = 1.0;
    m.decoder1 = {128 * m.rate1};
    m.decoder2 = {128 * m.rate2};
    c.train.lr = 1e-4;
    c.train.decay = 0.98;
    c.train.decay_every = 2;
    c.train.chamfer = "l2";
  } else {
    throw DataError("unknown profile '" + name + "' (expected pcn, shapenet55 or desk)");
  }
  c.train.steps = 0;
  c.train.epochs = 400;
  c.train.batch_size = 8;
  return c;
}

inline RunConfig parse_run_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw DataError("config: top level must be an object");
  for (const auto& [key, _] : doc.items()) {
    if (key != "profile" && key != "model" && key != "train") throw DataError("config: unknown key " + key);
  }
  RunConfig c = profile_config(doc.value("profile", std::string("desk")));
  if (doc.contains("model")) detail::apply_overrides(c.model, doc.at("model"), "model");
  if (doc.contains("train")) detail::apply_overrides(c.train, doc.at("train"), "train");
  c.model.validate();
  c.train.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"profile", c.model.profile}, {"model", detail::fields_to_json(c.model)}, {"train", detail::fields_to_json(c.train)}};
}

}  // namespace svdf

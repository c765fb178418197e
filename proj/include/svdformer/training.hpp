#pragma once

// Losses, synthetic data, and the training loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "svdformer/adam.hpp"
#include "svdformer/checkpoint.hpp"
#include "svdformer/config.hpp"
#include "svdformer/errors.hpp"
#include "svdformer/metrics.hpp"
#include "svdformer/model.hpp"
#include "svdformer/pointcloud.hpp"
#include "svdformer/pointops.hpp"
#include "svdformer/rng.hpp"

namespace svdf {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean distance (L1) or squared distance (L2) from each row of `from` to its
/// nearest row of `to`. Nearest assignments are fixed for the backward pass.
template <typename T>
Tensor<T> directed_chamfer(const Tensor<T>& from, const Tensor<T>& to, ChamferVariant variant) {
  if (from.numel() == 0 || to.numel() == 0) throw std::invalid_argument("chamfer loss: point cloud is empty");
  const auto nn = knn(from.data(), to.data(), 1);
  const Tensor<T> diff = sub(from, gather_rows(to, nn.indices));
  return mean(variant == ChamferVariant::L1 ? row_norm(diff) : row_sqnorm(diff));
}

/// Differentiable Chamfer distance with the metric-module conventions.
template <typename T>
Tensor<T> chamfer_loss(const Tensor<T>& pred, const Tensor<T>& gt, ChamferVariant variant) {
  Tensor<T> total = add(directed_chamfer(pred, gt, variant), directed_chamfer(gt, pred, variant));
  return variant == ChamferVariant::L1 ? mul_scalar(total, T{0.5}) : total;
}

/// One-sided Chamfer: every partial-input point should be covered by the prediction.
template <typename T>
Tensor<T> partial_matching_loss(const Tensor<T>& pred, const Tensor<T>& partial) {
  return directed_chamfer(partial, pred, ChamferVariant::L1);
}

/// FPS subset of the ground truth with `n` points.
inline PointCloud downsample_gt(const PointCloud& gt, std::size_t n) {
  if (n > gt.size()) {
    throw DataError("cannot downsample " + std::to_string(gt.size()) + " ground-truth points to " + std::to_string(n));
  }
  if (n == gt.size()) return gt;
  return gt.select(fps(gt.xyz(), n));
}

/// Ground truth at the density of each supervised stage.
struct StageTargets {
  PointCloud coarse, refine1, refine2;

  static StageTargets build(const PointCloud& gt, const ModelConfig& cfg) {
    return {downsample_gt(gt, cfg.coarse_points), downsample_gt(gt, cfg.seed_points * cfg.rate1),
            downsample_gt(gt, cfg.output_points())};
  }
};

/// CD(P_c, gt) + CD(P_1, gt) + CD(P_2, gt), each against its own target.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& coarse, const Tensor<T>& refine1, const Tensor<T>& refine2,
                     const StageTargets& targets, ChamferVariant variant) {
  Tensor<T> loss = chamfer_loss(coarse, targets.coarse.to_tensor<T>(), variant);
  loss = add(loss, chamfer_loss(refine1, targets.refine1.to_tensor<T>(), variant));
  return add(loss, chamfer_loss(refine2, targets.refine2.to_tensor<T>(), variant));
}

/// lr0 * decay^floor(epoch / period)
inline double scheduled_lr(const TrainConfig& t, std::size_t epoch) {
  return t.lr * std::pow(t.decay, static_cast<double>(epoch / t.decay_every));
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SamplePair {
  std::string id;
  std::string category;
  std::uint64_t seed = 0;
  PointCloud partial;
  PointCloud complete;
  double kept_fraction = 0;  // before resampling to the input size
};

namespace detail {

using P3 = std::array<float, 3>;

inline P3 make_p3(double x, double y, double z) {
  return {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
}

inline PointCloud sample_sphere(Rng& rng, std::size_t n, double extent) {
  const double r = extent * rng.uniform(0.5, 0.9);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    double x = rng.normal(), y = rng.normal(), z = rng.normal();
    const double len = std::sqrt(x * x + y * y + z * z);
    c.push_back(make_p3(r * x / len, r * y / len, r * z / len));
  }
  return c;
}

inline PointCloud sample_cylinder(Rng& rng, std::size_t n, double extent) {
  const double r = extent * rng.uniform(0.3, 0.6);
  const double h = extent * rng.uniform(0.5, 0.9);
  const double side = 2 * std::numbers::pi * r * 2 * h, cap = std::numbers::pi * r * r;
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.uniform(0, 2 * std::numbers::pi);
    const double pick = rng.uniform(0, side + 2 * cap);
    if (pick < side) {
      c.push_back(make_p3(r * std::cos(a), r * std::sin(a), rng.uniform(-h, h)));
    } else {
      const double rr = r * std::sqrt(rng.uniform());
      c.push_back(make_p3(rr * std::cos(a), rr * std::sin(a), pick < side + cap ? -h : h));
    }
  }
  return c;
}

inline PointCloud sample_box_frame(Rng& rng, std::size_t n, double extent) {
  const double hx = extent * rng.uniform(0.4, 0.9), hy = extent * rng.uniform(0.4, 0.9), hz = extent * rng.uniform(0.4, 0.9);
  const double lens[3] = {2 * hx, 2 * hy, 2 * hz};
  const double total = 4 * (lens[0] + lens[1] + lens[2]);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    double pick = rng.uniform(0, total);
    int axis = 0;
    while (axis < 2 && pick >= 4 * lens[axis]) pick -= 4 * lens[axis++];
    const int edge = std::min(3, static_cast<int>(pick / lens[axis]));
    const double t = rng.uniform(-1, 1);
    const double s1 = (edge & 1) ? 1 : -1, s2 = (edge & 2) ? 1 : -1;
    if (axis == 0) c.push_back(make_p3(t * hx, s1 * hy, s2 * hz));
    if (axis == 1) c.push_back(make_p3(s1 * hx, t * hy, s2 * hz));
    if (axis == 2) c.push_back(make_p3(s1 * hx, s2 * hy, t * hz));
  }
  return c;
}

// Seat (horizontal square) plus backrest (vertical square) sampled by area.
inline PointCloud sample_chair(Rng& rng, std::size_t n, double extent) {
  const double w = extent * rng.uniform(0.6, 0.9);
  const double back = extent * rng.uniform(0.6, 0.9);
  const double seat_z = -extent * rng.uniform(0.1, 0.5);
  const double seat_area = 4 * w * w, back_area = 2 * w * back;
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.uniform(0, seat_area + back_area) < seat_area) {
      c.push_back(make_p3(rng.uniform(-w, w), rng.uniform(-w, w), seat_z));
    } else {
      c.push_back(make_p3(-w, rng.uniform(-w, w), seat_z + rng.uniform(0, back)));
    }
  }
  return c;
}

}  // namespace detail

inline const std::vector<std::string>& synth_categories() {
  static const std::vector<std::string> names{"box_frame", "cylinder", "sphere", "chair"};
  return names;
}

/// Keeps the points lying lowest along a random direction until a random
/// fraction in [0.25, 0.75] of the cloud remains. Ties go to smaller indices.
inline PointCloud occlude(const PointCloud& complete, Rng& rng, double* kept_fraction = nullptr) {
  double u[3] = {rng.normal(), rng.normal(), rng.normal()};
  const double len = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  for (auto& v : u) v /= len;
  const std::size_t n = complete.size();
  const auto lo = static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(n)));
  const auto hi = static_cast<std::size_t>(std::floor(0.75 * static_cast<double>(n)));
  const auto want = static_cast<std::size_t>(std::llround(rng.uniform(0.25, 0.75) * static_cast<double>(n)));
  const std::size_t keep = std::clamp(want, std::max<std::size_t>(lo, 1), std::max(hi, lo));
  std::vector<std::pair<double, std::size_t>> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = complete.point(i);
    order[i] = {u[0] * p[0] + u[1] * p[1] + u[2] * p[2], i};
  }
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> idx(keep);
  for (std::size_t i = 0; i < keep; ++i) idx[i] = order[i].second;
  std::sort(idx.begin(), idx.end());
  if (kept_fraction) *kept_fraction = static_cast<double>(keep) / static_cast<double>(n);
  return complete.select(idx);
}

/// Deterministic synthetic pairs; pair i uses seed derive(seed, i) and
/// category i mod 4.
inline std::vector<SamplePair> synth_dataset(std::size_t count, std::uint64_t seed, const ModelConfig& cfg) {
  if (count == 0) throw std::invalid_argument("synth_dataset: count must be positive");
  const double extent = 0.9 * cfg.half_extent;
  std::vector<SamplePair> out;
  for (std::size_t i = 0; i < count; ++i) {
    SamplePair s;
    s.seed = Rng::derive(seed, i);
    Rng rng(s.seed);
    const std::size_t kind = i % synth_categories().size();
    s.category = synth_categories()[kind];
    std::ostringstream id;
    id << std::setw(4) << std::setfill('0') << i;
    s.id = id.str();
    switch (kind) {
      case 0: s.complete = detail::sample_box_frame(rng, cfg.gt_points, extent); break;
      case 1: s.complete = detail::sample_cylinder(rng, cfg.gt_points, extent); break;
      case 2: s.complete = detail::sample_sphere(rng, cfg.gt_points, extent); break;
      default: s.complete = detail::sample_chair(rng, cfg.gt_points, extent); break;
    }
    s.partial = fit_to_size(occlude(s.complete, rng, &s.kept_fraction), cfg.input_points, rng.next_u64());
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& dir, const std::vector<SamplePair>& pairs, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "pairs", ec);
  if (ec) throw DataError("cannot create " + (dir / "pairs").string() + ": " + ec.message());
  nlohmann::json index = {{"seed", seed}, {"count", pairs.size()}, {"pairs", nlohmann::json::array()}};
  for (const auto& p : pairs) {
    write_xyz(dir / "pairs" / (p.id + ".partial.xyz"), p.partial);
    write_xyz(dir / "pairs" / (p.id + ".complete.xyz"), p.complete);
    index["pairs"].push_back({{"id", p.id}, {"category", p.category}, {"seed", p.seed}});
  }
  const std::string text = index.dump(2) + "\n";
  detail::write_file_bytes(dir / "index.json", std::vector<char>(text.begin(), text.end()));
}

inline std::vector<SamplePair> read_dataset(const std::filesystem::path& dir) {
  const auto bytes = detail::read_file_bytes(dir / "index.json");
  std::vector<SamplePair> out;
  try {
    const auto index = nlohmann::json::parse(bytes.begin(), bytes.end());
    for (const auto& entry : index.at("pairs")) {
      SamplePair s;
      s.id = entry.at("id").get<std::string>();
      s.category = entry.value("category", std::string());
      s.seed = entry.value("seed", std::uint64_t{0});
      s.partial = read_xyz(dir / "pairs" / (s.id + ".partial.xyz"));
      s.complete = read_xyz(dir / "pairs" / (s.id + ".complete.xyz"));
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "index.json").string() + ": " + e.what());
  }
  if (out.empty()) throw DataError(dir.string() + ": dataset has no pairs");
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TraceRow {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
};

struct TrainOptions {
  std::filesystem::path checkpoint_dir;           // final checkpoint; empty = none
  std::filesystem::path trace_path;               // CSV step,loss,lr; empty = none
  std::optional<std::filesystem::path> resume;    // checkpoint to continue from
  std::optional<std::size_t> max_steps;           // stop after this many total steps
  std::function<void(const TraceRow&)> on_step;   // progress hook
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::size_t steps_done = 0;  // total optimizer steps including resumed ones
};

inline std::size_t total_steps(const TrainConfig& t, std::size_t dataset_size) {
  const std::size_t per_epoch = (dataset_size + t.batch_size - 1) / t.batch_size;
  return t.steps ? t.steps : t.epochs * per_epoch;
}

/// Saves weights, Adam moments, the step counter and the run config.
template <typename T>
void save_training_checkpoint(const std::filesystem::path& dir, const RunConfig& cfg, const std::vector<NamedTensor<T>>& params,
                              const Adam<T>* adam, std::size_t step) {
  auto arrays = to_arrays(params);
  if (adam) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& m = adam->first_moment(k);
      const auto& v = adam->second_moment(k);
      arrays.push_back({"adam.m." + params[k].name, params[k].tensor.shape(), std::vector<float>(m.begin(), m.end())});
      arrays.push_back({"adam.v." + params[k].name, params[k].tensor.shape(), std::vector<float>(v.begin(), v.end())});
    }
  }
  save_checkpoint(dir, arrays);
  const nlohmann::json state = {{"step", step}, {"adam_step", adam ? adam->step_count() : 0}};
  const std::string state_text = state.dump(2) + "\n";
  detail::write_file_bytes(dir / "train_state.json", std::vector<char>(state_text.begin(), state_text.end()));
  const std::string cfg_text = to_json(cfg).dump(2) + "\n";
  detail::write_file_bytes(dir / "config.json", std::vector<char>(cfg_text.begin(), cfg_text.end()));
}

/// Run config stored alongside a checkpoint.
inline RunConfig checkpoint_config(const std::filesystem::path& dir) { return load_run_config(dir / "config.json"); }

/// Loads model weights (and optionally Adam state) from a checkpoint.
/// Returns the stored step counter.
template <typename T>
std::size_t load_training_checkpoint(const std::filesystem::path& dir, std::vector<NamedTensor<T>>& params, Adam<T>* adam) {
  const auto arrays = load_checkpoint(dir);
  assign_arrays(arrays, params);
  std::size_t step = 0;
  if (std::filesystem::exists(dir / "train_state.json")) {
    const auto bytes = detail::read_file_bytes(dir / "train_state.json");
    try {
      const auto state = nlohmann::json::parse(bytes.begin(), bytes.end());
      step = state.at("step").get<std::size_t>();
      if (adam) adam->set_step_count(state.at("adam_step").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError((dir / "train_state.json").string() + ": " + e.what());
    }
  }
  if (adam) {
    std::unordered_map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (const auto& [prefix, moment] : {std::pair{"adam.m.", &adam->first_moment(k)}, std::pair{"adam.v.", &adam->second_moment(k)}}) {
        auto it = by_name.find(prefix + params[k].name);
        if (it == by_name.end()) throw DataError("checkpoint lacks optimizer state for '" + params[k].name + "'");
        if (it->second->values.size() != moment->size()) throw DataError("optimizer state size mismatch for '" + params[k].name + "'");
        std::copy(it->second->values.begin(), it->second->values.end(), moment->begin());
      }
    }
  }
  return step;
}

/// Loss of one sample under the run config, as a differentiable scalar.
template <typename T>
Tensor<T> sample_loss(const SvdFormer<T>& model, const SamplePair& pair, const StageTargets& targets,
                      const TrainConfig& train) {
  const Stages<T> s = model.forward(pair.partial);
  Tensor<T> loss = total_loss(s.coarse, s.refine1.points, s.refine2.points, targets, train.chamfer_variant());
  if (train.partial_matching) loss = add(loss, partial_matching_loss(s.refine2.points, s.partial));
  return loss;
}

/// Mini-batch Adam on `data`. Batches are drawn from a per-epoch shuffle
/// seeded by (train.seed, epoch), so a resumed run continues the exact
/// sequence of an uninterrupted one.
template <typename T>
TrainResult train(SvdFormer<T>& model, const RunConfig& cfg, const std::vector<SamplePair>& data,
                  const TrainOptions& opts = {}) {
  if (data.empty()) throw DataError("training set is empty");
  const TrainConfig& tc = cfg.train;
  std::vector<StageTargets> targets;
  for (const auto& p : data) {
    if (p.partial.size() != cfg.model.input_points) {
      throw DataError("pair " + p.id + ": partial has " + std::to_string(p.partial.size()) + " points, expected " +
                      std::to_string(cfg.model.input_points));
    }
    targets.push_back(StageTargets::build(p.complete, cfg.model));
  }

  Adam<T> adam(model.parameters(), AdamOptions{tc.lr, 0.9, 0.999, 1e-8});
  std::size_t step = 0;
  if (opts.resume) step = load_training_checkpoint(*opts.resume, model.parameters(), &adam);

  std::ofstream trace;
  if (!opts.trace_path.empty()) {
    const bool append = opts.resume.has_value() && std::filesystem::exists(opts.trace_path);
    trace.open(opts.trace_path, append ? std::ios::app : std::ios::trunc);
    if (!trace) throw DataError("cannot write " + opts.trace_path.string());
    if (!append) trace << "step,loss,lr\n";
  }

  const std::size_t per_epoch = (data.size() + tc.batch_size - 1) / tc.batch_size;
  const std::size_t end = std::min(total_steps(tc, data.size()), opts.max_steps.value_or(SIZE_MAX));
  TrainResult result;
  std::vector<std::size_t> order;
  std::size_t order_epoch = SIZE_MAX;
  for (; step < end; ++step) {
    const std::size_t epoch = step / per_epoch;
    if (epoch != order_epoch) {
      order.resize(data.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng shuffle_rng(Rng::derive(tc.seed, epoch));
      shuffle_rng.shuffle(order);
      order_epoch = epoch;
    }
    const std::size_t first = (step % per_epoch) * tc.batch_size;
    const std::size_t last = std::min(first + tc.batch_size, data.size());
    const double lr = scheduled_lr(tc, epoch);
    adam.set_lr(lr);
    adam.zero_grad();
    double batch_loss = 0;
    for (std::size_t b = first; b < last; ++b) {
      const std::size_t i = order[b];
      Tensor<T> loss = mul_scalar(sample_loss(model, data[i], targets[i], tc), static_cast<T>(1.0 / (last - first)));
      batch_loss += static_cast<double>(loss.item());
      if (!std::isfinite(batch_loss)) throw NumericalAbort(step, "loss is not finite (pair " + data[i].id + ")");
      backward(loss);
    }
    adam.step();
    const TraceRow row{step, batch_loss, lr};
    result.trace.push_back(row);
    if (trace) {
      trace << row.step << ',' << std::setprecision(9) << row.loss << ',' << row.lr << '\n';
      trace.flush();
    }
    if (opts.on_step) opts.on_step(row);
  }
  result.steps_done = step;
  if (!opts.checkpoint_dir.empty()) save_training_checkpoint(opts.checkpoint_dir, cfg, model.parameters(), &adam, step);
  return result;
}

}  // namespace svdf

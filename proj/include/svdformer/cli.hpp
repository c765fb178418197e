#pragma once

// Command implementations behind the svdformer executable. Each command
// writes human-readable output to `out` and returns a process exit code:
//   0 success, 1 usage, 2 data error, 3 numerical failure.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "svdformer/blockcheck.hpp"
#include "svdformer/checkpoint.hpp"
#include "svdformer/config.hpp"
#include "svdformer/errors.hpp"
#include "svdformer/gradcheck.hpp"
#include "svdformer/metrics.hpp"
#include "svdformer/model.hpp"
#include "svdformer/selfview.hpp"
#include "svdformer/training.hpp"

namespace svdf::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace fs = std::filesystem;

/// Profile defaults, optionally replaced by a config file.
inline RunConfig resolve_config(const std::string& profile, const std::optional<fs::path>& config_path) {
  if (config_path) return load_run_config(*config_path);
  try {
    return profile_config(profile);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string profile = "desk";
  std::optional<fs::path> config;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.count == 0) throw UsageError("synth: --count must be at least 1");
  const RunConfig cfg = resolve_config(a.profile, a.config);
  const auto pairs = synth_dataset(a.count, a.seed, cfg.model);
  write_dataset(a.out, pairs, a.seed);
  out << "wrote " << pairs.size() << " pairs to " << a.out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct ProjectArgs {
  fs::path input;
  fs::path out;
  std::string profile = "desk";
  std::optional<std::size_t> views, resolution;
  std::optional<double> distance;
  std::optional<std::uint64_t> jitter_seed;
};

inline int cmd_project(const ProjectArgs& a, std::ostream& out) {
  ModelConfig m = resolve_config(a.profile, std::nullopt).model;
  if (a.views) m.views = *a.views;
  if (a.resolution) m.resolution = *a.resolution;
  if (a.distance) m.view_distance = *a.distance;
  if (m.views < 1 || m.views > 3) throw UsageError("project: --views must be 1, 2 or 3");
  if (m.resolution < 8) throw UsageError("project: --res must be at least 8");
  if (!(m.view_distance > 0)) throw UsageError("project: --dist must be positive");
  const PointCloud cloud = read_xyz(a.input);
  validate_cloud(cloud.xyz(), a.input.string());
  auto views = orthogonal_viewpoints(m.view_distance);
  views.resize(m.views);
  if (a.jitter_seed) {
    Rng rng(*a.jitter_seed);
    for (auto& v : views) v = jitter_viewpoint(v, rng);
  }
  const ViewSet set = project_all(cloud, views, m.resolution, m.fov_deg());
  fs::create_directories(a.out);
  const std::string stem = a.input.stem().string();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const fs::path path = a.out / (stem + ".view" + std::to_string(i));
    write_depth(path, set.maps[i], set.views[i], set.fov_deg);
    out << path.string() << ".depth " << set.maps[i].width << "x" << set.maps[i].height << " occupied "
        << set.maps[i].occupied() << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  fs::path data;
  fs::path out;
  std::optional<fs::path> resume;
  std::optional<std::size_t> steps;
  std::optional<fs::path> trace;
  bool verbose = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  if (a.steps) {
    if (*a.steps == 0) throw UsageError("train: --steps must be positive");
    cfg.train.steps = *a.steps;
  }
  const auto raw = read_dataset(a.data);
  std::vector<SamplePair> data;
  for (const auto& p : raw) {
    SamplePair s = p;
    s.partial = fit_to_size(p.partial, cfg.model.input_points, p.seed);
    data.push_back(std::move(s));
  }
  SvdFormer<float> model(cfg.model);
  TrainOptions opts;
  opts.checkpoint_dir = a.out;
  opts.trace_path = a.trace.value_or(a.out / "trace.csv");
  opts.resume = a.resume;
  fs::create_directories(a.out);
  const std::size_t log_every = cfg.train.log_every;
  if (log_every || a.verbose) {
    opts.on_step = [&out, log_every](const TraceRow& r) {
      if (log_every == 0 || r.step % log_every == 0) out << "step " << r.step << " loss " << r.loss << " lr " << r.lr << "\n";
    };
  }
  const TrainResult res = train(model, cfg, data, opts);
  out << "trained " << res.trace.size() << " steps (total " << res.steps_done << ")";
  if (!res.trace.empty()) out << ", final loss " << res.trace.back().loss;
  out << "\ncheckpoint " << a.out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct InitArgs {
  fs::path out;
  std::string profile = "desk";
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
};

/// Writes a checkpoint holding freshly initialised weights.
inline int cmd_init(const InitArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(a.profile, a.config);
  if (a.seed) cfg.model.seed = *a.seed;
  SvdFormer<float> model(cfg.model);
  save_training_checkpoint<float>(a.out, cfg, model.parameters(), nullptr, 0);
  out << "initialised " << cfg.model.profile << " model (" << model.store().scalar_count() << " parameters) at "
      << a.out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct CompleteArgs {
  fs::path checkpoint;
  fs::path input;
  fs::path output;
  bool dump_stages = false;
  std::optional<fs::path> dump_attn;
  std::uint64_t seed = 0;
};

namespace detail {
inline fs::path sibling(const fs::path& p, const std::string& tag) {
  return p.parent_path() / (p.stem().string() + "." + tag + p.extension().string());
}

template <typename T>
void dump_weights(const fs::path& stem, const std::string& tag, const Tensor<T>& w) {
  DepthMap map{w.dim(1), w.dim(0), std::vector<float>(w.data().begin(), w.data().end())};
  write_depth(stem.string() + "." + tag, map, Viewpoint{{0, 0, 0}, {0, 0, 0}, {0, 0, 1}}, 0.0);
}
}  // namespace detail

inline int cmd_complete(const CompleteArgs& a, std::ostream& out) {
  const RunConfig cfg = checkpoint_config(a.checkpoint);
  SvdFormer<float> model(cfg.model);
  load_training_checkpoint<float>(a.checkpoint, model.parameters(), nullptr);
  const PointCloud raw = read_xyz(a.input);
  validate_cloud(raw.xyz(), a.input.string());
  const PointCloud partial = fit_to_size(raw, cfg.model.input_points, a.seed);
  NoGradGuard no_grad;
  const Stages<float> s = model.forward(partial);
  for (const auto& [name, t] : {std::pair{"coarse", &s.coarse}, std::pair{"p0", &s.seed},
                                std::pair{"p1", &s.refine1.points}, std::pair{"p2", &s.refine2.points}}) {
    if (!PointCloud::from_tensor(*t).all_finite()) throw NumericalAbort(0, std::string("stage ") + name + " is not finite");
  }
  write_xyz(a.output, PointCloud::from_tensor(s.output()));
  if (a.dump_stages) {
    write_xyz(detail::sibling(a.output, "coarse"), PointCloud::from_tensor(s.coarse));
    write_xyz(detail::sibling(a.output, "p0"), PointCloud::from_tensor(s.seed));
    write_xyz(detail::sibling(a.output, "p1"), PointCloud::from_tensor(s.refine1.points));
  }
  if (a.dump_attn) {
    detail::dump_weights(*a.dump_attn, "sdg1.structure", s.refine1.structure_weights);
    detail::dump_weights(*a.dump_attn, "sdg1.similarity", s.refine1.similarity_weights);
    detail::dump_weights(*a.dump_attn, "sdg2.structure", s.refine2.structure_weights);
    detail::dump_weights(*a.dump_attn, "sdg2.similarity", s.refine2.similarity_weights);
  }
  out << "P_c " << s.coarse.dim(0) << "  P_0 " << s.seed.dim(0) << "  P_1 " << s.refine1.points.dim(0) << "  P_2 "
      << s.refine2.points.dim(0) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path pred;
  fs::path gt;
  std::vector<std::string> metrics{"cd_l1", "cd_l2", "dcd", "f1"};
  std::optional<fs::path> refs;
  double alpha = kDefaultDcdAlpha;
  double tau = kDefaultFscoreTau;
};

namespace detail {
inline std::vector<fs::path> xyz_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".xyz") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline void print_fixed(std::ostream& out, double v) { out << ' ' << std::fixed << std::setprecision(6) << v; }
}  // namespace detail

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const bool mmd_mode = std::find(a.metrics.begin(), a.metrics.end(), "mmd") != a.metrics.end();
  if (mmd_mode) {
    if (a.metrics.size() != 1) throw UsageError("eval: mmd cannot be combined with other metrics");
    if (!a.refs) throw UsageError("eval: --metrics mmd requires --refs");
    std::vector<PointCloud> refs;
    for (const auto& f : detail::xyz_files(*a.refs)) refs.push_back(read_xyz(f));
    if (refs.empty()) throw DataError(a.refs->string() + ": no reference clouds");
    std::vector<PointCloud> outputs;
    for (const auto& f : detail::xyz_files(a.pred)) {
      outputs.push_back(read_xyz(f));
      out << f.stem().string();
      detail::print_fixed(out, mmd({outputs.back()}, refs));
      out << "\n";
    }
    if (outputs.empty()) throw DataError(a.pred.string() + ": no predicted clouds");
    out << "MMD";
    detail::print_fixed(out, mmd(outputs, refs));
    out << "\n";
    return kOk;
  }
  static const std::vector<std::string> known{"cd_l1", "cd_l2", "dcd", "f1"};
  for (const auto& m : a.metrics) {
    if (std::find(known.begin(), known.end(), m) == known.end()) throw UsageError("eval: unknown metric '" + m + "'");
  }
  MetricReport report;
  for (const auto& pred_path : detail::xyz_files(a.pred)) {
    const fs::path gt_path = a.gt / pred_path.filename();
    if (!fs::exists(gt_path)) throw DataError("no ground truth for " + pred_path.filename().string());
    report.rows.push_back(evaluate_pair(pred_path.stem().string(), read_xyz(pred_path), read_xyz(gt_path), a.alpha, a.tau));
  }
  if (report.rows.empty()) throw DataError(a.pred.string() + ": no .xyz files");
  auto print_row = [&](const MetricReport::Row& r) {
    out << r.id;
    for (const auto& m : a.metrics) {
      detail::print_fixed(out, m == "cd_l1" ? r.cd_l1 : m == "cd_l2" ? r.cd_l2 : m == "dcd" ? r.dcd : r.f1);
    }
    out << "\n";
  };
  for (const auto& r : report.rows) print_row(r);
  print_row(report.mean());
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  double tolerance = 1e-4;
  std::size_t instances = 5;
  std::optional<std::string> inject_fault;
  std::uint64_t seed = 0;
};

struct GradcheckRow {
  std::string name;
  double max_error = 0;
  bool passed = false;
};

/// Every catalogue op on its default shapes plus `instances` random shapes,
/// then every composite block on `instances` random builds.
inline std::vector<GradcheckRow> run_gradcheck_suite(const GradcheckArgs& a) {
  std::vector<GradcheckRow> rows;
  const auto names = catalogue_op_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string& name = names[k];
    const bool fault = a.inject_fault && *a.inject_fault == name;
    double worst = grad_check(name, {}, a.tolerance, a.seed, fault).max_relative_error;
    Rng shapes_rng(Rng::derive(a.seed, 1000 + k));
    for (std::size_t i = 0; i < a.instances; ++i) {
      const auto shapes = op_catalogue().at(name).random_shapes(shapes_rng);
      worst = std::max(worst, grad_check(name, shapes, a.tolerance, Rng::derive(a.seed, i + 1), fault).max_relative_error);
    }
    rows.push_back({name, worst, worst < a.tolerance});
  }
  for (const auto& name : block_names()) {
    const double worst = block_grad_error(name, a.instances, a.seed);
    rows.push_back({name, worst, worst < a.tolerance});
  }
  return rows;
}

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (!(a.tolerance > 0)) throw UsageError("gradcheck: --tol must be positive");
  if (a.instances == 0) throw UsageError("gradcheck: --instances must be positive");
  if (a.inject_fault) {
    const auto names = catalogue_op_names();
    if (std::find(names.begin(), names.end(), *a.inject_fault) == names.end()) {
      throw UsageError("gradcheck: unknown op '" + *a.inject_fault + "' for --inject-fault");
    }
  }
  const auto start = std::chrono::steady_clock::now();
  const auto rows = run_gradcheck_suite(a);
  std::vector<std::string> failed;
  for (const auto& r : rows) {
    out << std::left << std::setw(22) << r.name << std::scientific << std::setprecision(3) << r.max_error << "  "
        << (r.passed ? "ok" : "FAIL") << "\n";
    if (!r.passed) failed.push_back(r.name);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << std::defaultfloat << rows.size() << " checks, " << failed.size() << " failed, " << std::fixed
      << std::setprecision(1) << secs << " s\n";
  if (!failed.empty()) {
    out << "failed:";
    for (const auto& f : failed) out << ' ' << f;
    out << "\n";
    return kNumerical;
  }
  return kOk;
}

/// Maps exceptions from a command body to exit codes.
template <typename F>
int run_guarded(F&& body, std::ostream& err) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalAbort& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace svdf::cli

#pragma once

// Gradient checks for the composite network blocks. Each block is built at
// 64-bit with small widths; inputs and every block parameter are perturbed.

#include <map>
#include <string>
#include <vector>

#include "svdformer/config.hpp"
#include "svdformer/gradcheck.hpp"
#include "svdformer/nn.hpp"
#include "svdformer/sdg.hpp"
#include "svdformer/svfnet.hpp"
#include "svdformer/training.hpp"

namespace svdf {

namespace detail {

inline ModelConfig small_block_config() {
  ModelConfig m;
  m.sa3_channels = {4, 2};
  m.fusion_width = 4;
  m.embed_dim = 8;
  m.partial_channels = 6;
  m.decoder1 = {6, 4};
  m.offset_feature = 2;
  m.offset_hidden = 5;
  m.rate1 = 2;
  return m;
}

inline std::vector<Tensor<double>> with_params(std::vector<Tensor<double>> inputs, const ParameterStore<double>& store) {
  for (const auto& p : store.params()) inputs.push_back(p.tensor);
  return inputs;
}

}  // namespace detail

/// A block instance: inputs to perturb and a scalar loss rebuilding the graph.
struct BlockCase {
  std::vector<Tensor<double>> inputs;
  std::function<Tensor<double>()> loss;
};

inline const std::map<std::string, std::function<BlockCase(Rng&)>>& block_catalogue() {
  static const std::map<std::string, std::function<BlockCase(Rng&)>> catalogue = [] {
    std::map<std::string, std::function<BlockCase(Rng&)>> c;
    // Weighted sum so every output element matters.
    auto contract = [](const Tensor<double>& out, const Tensor<double>& w) { return sum(mul(out, w)); };

    c["feature_fusion"] = [contract](Rng& rng) {
      auto store = std::make_shared<ParameterStore<double>>(rng.next_u64());
      auto fusion = std::make_shared<FeatureFusion<double>>(*store, "fusion", 4, 4, 6, false);
      Tensor<double> fv = dyadic_tensor({3, 4}, rng), fp = dyadic_tensor({4}, rng), vp = dyadic_tensor({3, 3}, rng);
      Tensor<double> w = dyadic_tensor({10}, rng);
      return BlockCase{detail::with_params({fv, fp, vp}, *store), [=] {
                         (void)store;
                         return contract((*fusion)(fv, fp, vp).descriptor, w);
                       }};
    };

    c["structure_analysis"] = [contract](Rng& rng) {
      const ModelConfig cfg = detail::small_block_config();
      auto store = std::make_shared<ParameterStore<double>>(rng.next_u64());
      auto sdg = std::make_shared<Sdg<double>>(*store, "sdg", cfg, cfg.decoder1, cfg.rate1);
      Tensor<double> points = dyadic_tensor({5, 3}, rng), partial = dyadic_tensor({4, 3}, rng);
      Tensor<double> descriptor = dyadic_tensor({cfg.descriptor_dim()}, rng);
      Tensor<double> w = dyadic_tensor({5, cfg.decoder1.back()}, rng);
      return BlockCase{detail::with_params({points, descriptor}, *store), [=] {
                         const Tensor<double> h = incompleteness_embedding(points, partial, cfg.gamma, cfg.embed_dim);
                         return contract(sdg->structure_decoder()(sdg->structure_query(points, descriptor, &h).features), w);
                       }};
    };

    c["similarity_alignment"] = [contract](Rng& rng) {
      const ModelConfig cfg = detail::small_block_config();
      auto store = std::make_shared<ParameterStore<double>>(rng.next_u64());
      auto sdg = std::make_shared<Sdg<double>>(*store, "sdg", cfg, cfg.decoder1, cfg.rate1);
      Tensor<double> queries = dyadic_tensor({5, cfg.embed_dim}, rng);
      Tensor<double> memory = dyadic_tensor({3, cfg.partial_channels}, rng);
      Tensor<double> w = dyadic_tensor({5, cfg.decoder1.back()}, rng);
      return BlockCase{detail::with_params({queries, memory}, *store), [=] {
                         return contract(sdg->similarity_decoder()(sdg->alignment().cross(queries, memory).features), w);
                       }};
    };

    c["offset_head"] = [contract](Rng& rng) {
      auto store = std::make_shared<ParameterStore<double>>(rng.next_u64());
      auto head = std::make_shared<OffsetHead<double>>(*store, "offset", 6, 3, 5, 2);
      Tensor<double> structure = dyadic_tensor({4, 6}, rng), similarity = dyadic_tensor({4, 6}, rng);
      Tensor<double> w = dyadic_tensor({8, 3}, rng);
      return BlockCase{detail::with_params({structure, similarity}, *store),
                       [=] { return contract((*head)(structure, similarity), w); }};
    };

    c["total_loss"] = [](Rng& rng) {
      ModelConfig cfg;
      cfg.coarse_points = 4;
      cfg.seed_points = 4;
      cfg.rate1 = 2;
      cfg.rate2 = 2;
      std::vector<float> gt_xyz(16 * 3);
      for (auto& v : gt_xyz) v = static_cast<float>(std::round(rng.uniform(-1, 1) * 1024) / 1024);
      const StageTargets targets = StageTargets::build(PointCloud(gt_xyz), cfg);
      Tensor<double> pc = dyadic_tensor({4, 3}, rng), p1 = dyadic_tensor({8, 3}, rng), p2 = dyadic_tensor({16, 3}, rng);
      const ChamferVariant variant = rng.uniform() < 0.5 ? ChamferVariant::L1 : ChamferVariant::L2;
      return BlockCase{{pc, p1, p2}, [=] { return total_loss(pc, p1, p2, targets, variant); }};
    };
    return c;
  }();
  return catalogue;
}

inline std::vector<std::string> block_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : block_catalogue()) names.push_back(name);
  return names;
}

/// Worst relative gradient error of one block over `instances` random builds.
inline double block_grad_error(const std::string& name, std::size_t instances, std::uint64_t seed = 0) {
  auto it = block_catalogue().find(name);
  if (it == block_catalogue().end()) throw std::invalid_argument("block check: unknown block '" + name + "'");
  double worst = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(Rng::derive(seed, i));
    BlockCase bc = it->second(rng);
    worst = std::max(worst, max_gradient_error(bc.loss, bc.inputs));
  }
  return worst;
}

}  // namespace svdf

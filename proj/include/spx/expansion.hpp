#pragma once

#include "spx/model.hpp"
#include "spx/parallel.hpp"
#include "spx/pruner.hpp"
#include "spx/router.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace spx {

struct ExpandOptions {
    std::size_t clusters = 16;
    std::size_t pca_components = 0;  // 0: default for the layer width
    double pool_alpha = 0.1;
    std::uint64_t seed = 0;
    KMeansOptions kmeans;
};

struct ExpertProvenance {
    PruneSpec spec;
    std::uint64_t seed = 0;
    std::vector<std::size_t> cluster_sizes;
    std::vector<bool> pooled;  // Hessian mixed with the global one
};

struct ExpertLayer {
    Router router;
    std::vector<Matrix> experts;
    std::vector<double> bias;
    ExpertProvenance provenance;

    std::size_t clusters() const noexcept { return experts.size(); }
    std::size_t in_dim() const noexcept { return experts.empty() ? 0 : experts.front().cols(); }
    std::size_t out_dim() const noexcept { return experts.empty() ? 0 : experts.front().rows(); }
};

struct ExpandedBlock {
    ExpertLayer up;
    ExpertLayer down;
};

struct ExpandedModel {
    std::vector<ExpandedBlock> blocks;
    bool residual = false;
    std::string propagation = "compressed";

    ExpertLayer & layer(std::size_t index) { return index % 2 == 0 ? blocks[index / 2].up : blocks[index / 2].down; }
    const ExpertLayer & layer(std::size_t index) const {
        return index % 2 == 0 ? blocks[index / 2].up : blocks[index / 2].down;
    }
};

// Prune with SparseGPT, then quantize when spec.bits is set.
// The quantization scales are stored in *scales when both are set.
Matrix compress_weights(const Matrix & w, const HessianState & h, const PruneSpec & spec, Parallelism par = {},
                        Matrix * scales = nullptr);

// Seed handed to the router of linear layer `index`.
std::uint64_t layer_seed(std::uint64_t seed, std::size_t index);

ExpertLayer expand_layer(const Linear & dense, const Matrix & x, const PruneSpec & spec, const ExpandOptions & opts,
                         Parallelism par = {});

// Routes each column and applies its expert. Identical to evaluating the columns one by one.
Matrix expert_layer_forward(const ExpertLayer & layer, const Matrix & x);
// Same, with the routing decisions also returned.
Matrix expert_layer_forward(const ExpertLayer & layer, const Matrix & x, std::vector<std::size_t> & routes);

ExpandedModel expand_model(const ToyModel & model, const Matrix & x0, const PruneSpec & spec,
                           const ExpandOptions & opts, Parallelism par = {});
Matrix expanded_forward(const ExpandedModel & model, const Matrix & x);

// Sequential layer-wise SparseGPT with compressed-activation propagation.
// scales, when given, receives one entry per linear layer (empty when unquantized).
ToyModel prune_model(const ToyModel & model, const Matrix & x0, const PruneSpec & spec, Parallelism par = {},
                     std::vector<Matrix> * scales = nullptr);

struct ParamCount {
    std::size_t nonzero_weights = 0;
    std::size_t router_params = 0;
    std::size_t total_effective = 0;
};

ParamCount count_params(const ExpandedModel & model);
ParamCount count_params(const ToyModel & model);

nlohmann::json prune_spec_to_json(const PruneSpec & spec);
PruneSpec prune_spec_from_json(const nlohmann::json & j);

void save_expanded_model(const ExpandedModel & model, const std::filesystem::path & dir);
ExpandedModel load_expanded_model(const std::filesystem::path & dir);

} // namespace spx

#pragma once

#include "spx/matrix.hpp"
#include "spx/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace spx {

enum class PlantedShape { kBimodal, kTrimodal, kHeavyTail };

PlantedShape parse_planted_shape(const std::string & name);
std::string planted_shape_name(PlantedShape shape);

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t d = 64;
    std::size_t d_ff = 256;
    std::size_t depth = 2;
    std::size_t n_clusters_true = 8;
    std::size_t planted_count = 8;
    PlantedShape planted_shape = PlantedShape::kBimodal;
    std::size_t samples = 8192;
    // Distance of every cluster mean from the origin.
    double separation = 8.0;
    // Per-cluster, per-dimension noise standard deviations are uniform in [noise_min, noise_max].
    double noise_min = 0.5;
    double noise_max = 1.0;
    // Log-normal spread of the row norms of the first layer.
    double row_scale_log_std = 0.5;
    double planted_min_wd = 0.3;

    void validate() const;
};

nlohmann::json synth_spec_to_json(const SynthSpec & spec);
SynthSpec synth_spec_from_json(const nlohmann::json & j, SynthSpec base = {});

// Unit cluster mean directions, one per row (n_clusters_true x d).
Matrix cluster_directions(const SynthSpec & spec);

// Gaussian mixture with equal cluster counts, columns shuffled by the seed,
// rounded to float32 (d x samples).
Matrix gen_calibration(const SynthSpec & spec);
// Cluster label of each generated column.
std::vector<std::size_t> gen_cluster_labels(const SynthSpec & spec);

struct PlantedModel {
    ToyModel model;
    std::vector<std::size_t> planted;  // ascending rows of block0.up
    std::vector<double> planted_wd;    // dense WD of each planted row on the generated data
};

// Planted rows of block0.up are signed combinations of the cluster directions,
// so their outputs are multimodal over the generated data. Every other weight is
// iid Gaussian.
PlantedModel gen_planted_model(const SynthSpec & spec);

// The last quarter of the columns is held out.
std::size_t heldout_start(std::size_t samples);

} // namespace spx

#pragma once

#include "spx/expansion.hpp"
#include "spx/metrics.hpp"
#include "spx/model.hpp"
#include "spx/parallel.hpp"
#include "spx/pruner.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spx {

// Calibration columns used for fitting and the held-out tail used for scoring.
struct EvalData {
    ToyModel model;
    Matrix calib;
    Matrix heldout;
};

EvalData split_eval_data(ToyModel model, const Matrix & x);

double per_neuron_rmse(std::span<const double> dense, std::span<const double> sparse);
double per_neuron_rmse(const NeuronOutputs & dense, const NeuronOutputs & sparse);

// rmse_sgpt / rmse_se; 1 when both are zero, +inf when only rmse_se is zero.
double relative_improvement(double rmse_sgpt, double rmse_se);

// Mean over all entries of (a - b)^2.
double output_mse(const Matrix & a, const Matrix & b);

struct NeuronEvalRecord {
    std::size_t neuron_index = 0;
    double dense_wd = 0.0;
    double md = 0.0;
    double rmse_sparsegpt = 0.0;
    double rmse_expansion = 0.0;
    double ri = 1.0;
    bool ri_infinite = false;
    double weighted_cluster_wd = 0.0;
    double weighted_cluster_md = 0.0;
    double mean_abs = 0.0;
    double variance = 0.0;
};

struct LayerEvalOptions {
    PruneSpec spec;
    ExpandOptions expand;
    std::size_t pair_budget = kDefaultPairBudget;
    std::uint64_t seed = 0;
    bool mapping_difficulty = true;
    Parallelism par;
};

struct LayerEval {
    std::vector<NeuronEvalRecord> records;
    Matrix dense_out;      // held-out outputs of the dense layer
    Matrix sparsegpt_out;  // single pruned copy
    Matrix expansion_out;  // routed experts
    std::vector<std::size_t> routes;
    std::vector<std::size_t> cluster_sizes;  // held-out columns per expert

    double median_ri() const;
    double fraction_ri_at_least_one() const;
};

// Layer-local comparison of one pruned copy against Sparse Expansion on the
// same calibration inputs, scored on held-out inputs.
LayerEval evaluate_layer(const Linear & layer, const Matrix & calib, const Matrix & heldout,
                         const LayerEvalOptions & opts);

std::string neuron_records_csv(const std::vector<NeuronEvalRecord> & records);

// Sequential pruning keeping the top keep_fraction of each layer's rows dense
// (ranked by WD on that layer's propagated calibration inputs).
ToyModel keep_dense_model(const ToyModel & model, const Matrix & x0, double keep_fraction, const PruneSpec & spec,
                          Parallelism par = {}, std::vector<Matrix> * scales = nullptr);

enum class SweepAxis { kSparsity, kClusters, kBits, kKeepDense };
SweepAxis parse_sweep_axis(const std::string & name);
std::string sweep_axis_name(SweepAxis axis);
std::vector<double> default_grid(SweepAxis axis);

struct SweepConfig {
    SweepAxis axis = SweepAxis::kSparsity;
    std::vector<double> grid;  // empty: default grid
    PruneSpec spec;
    ExpandOptions expand;
    std::size_t pair_budget = kDefaultPairBudget;
    std::uint64_t seed = 0;
    bool model_level = true;
    bool neuron_level = true;
    Parallelism par;
};

struct SweepRow {
    std::string axis;
    double value = 0.0;
    std::string status = "ok";
    double mse_sparsegpt = 0.0;
    double mse_expansion = 0.0;
    double median_ri = 0.0;
    double frac_ri_ge_1 = 0.0;
    ParamCount params;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    // Analysis-layer records of every grid point, in grid order.
    std::vector<std::vector<NeuronEvalRecord>> neuron_records;
};

SweepReport run_sweep(const EvalData & data, const SweepConfig & config);
std::string sweep_csv(const std::vector<SweepRow> & rows);

enum class Selector { kWd, kMean, kVariance, kWeightMagnitude, kRandom };
Selector parse_selector(const std::string & name);
std::string selector_name(Selector s);

// Rows of `layer` picked by the selector, ascending. Scores use dense outputs over x.
std::vector<std::size_t> select_neurons(Selector selector, const Linear & layer, const Matrix & x, double fraction,
                                        std::uint64_t seed);

struct AblationConfig {
    double fraction = 0.03;
    std::vector<Selector> selectors = {Selector::kWd, Selector::kRandom};
    std::vector<double> sparsities = {0.5, 0.7, 0.9};
    PruneSpec spec;
    std::uint64_t seed = 0;
    std::size_t layer_index = 0;
    Parallelism par;
};

struct AblationRow {
    std::string selector;
    double fraction = 0.0;
    double sparsity = 0.0;
    std::size_t selected = 0;
    std::string status = "ok";
    double model_mse = 0.0;
};

// Prunes only the selected rows of one layer (Hessian from dense calibration
// activations) and reports model output MSE against the dense model.
std::vector<AblationRow> targeted_ablation(const EvalData & data, const AblationConfig & config);
std::string ablation_csv(const std::vector<AblationRow> & rows);

struct HistBin {
    double left = 0.0;
    double right = 0.0;
    std::size_t count = 0;
};

std::vector<HistBin> histogram(std::span<const double> samples, std::size_t bin_count);
std::string histogram_csv(const std::vector<HistBin> & bins);

// 16 hex digits of the FNV-1a hash of the compact JSON dump.
std::string config_hash(const nlohmann::json & config);

void write_text_file(const std::filesystem::path & path, const std::string & text);
std::string read_text_file(const std::filesystem::path & path);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

} // namespace spx

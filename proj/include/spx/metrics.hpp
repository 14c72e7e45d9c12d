#pragma once

#include "spx/matrix.hpp"
#include "spx/rng.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace spx {

struct NeuronOutputs {
    std::size_t neuron_index = 0;
    std::vector<double> samples;
};

struct WdReport {
    std::string layer_id;
    std::vector<double> wd;  // one entry per neuron, >= 0
};

inline constexpr std::size_t kDefaultPairBudget = 200000;

// Output i, sample j = row_i(W) . col_j(X) (+ bias[i] when bias is non-empty).
std::vector<NeuronOutputs> collect_outputs(const Matrix & w, const Matrix & x, std::span<const double> bias = {});

// 1-Wasserstein distance between the standardized sample distribution and the
// standard normal. Both sides are discretized on the midpoint quantile grid
// (i - 0.5) / n and both are standardized to zero mean and unit variance, so a
// sample that equals the grid quantiles gives exactly zero.
double wd_to_gaussian(std::span<const double> samples);
inline double wd_to_gaussian(const NeuronOutputs & n) { return wd_to_gaussian(n.samples); }

WdReport wd_report(const std::string & layer_id, const std::vector<NeuronOutputs> & outputs);

// Raw (unstandardized) 1-Wasserstein distance between two empirical
// distributions, integrating |F^-1 - G^-1| over the merged quantile breakpoints.
double wd_empirical(std::span<const double> a, std::span<const double> b);

// Distinct input pairs (i < j) used by the pairwise metrics. Exhaustive when
// C(s, 2) <= budget, otherwise a uniform sample without replacement, sorted.
struct PairSet {
    std::vector<std::size_t> first;
    std::vector<std::size_t> second;
    std::vector<double> input_dist;  // ||x_i - x_j||
    double max_input_dist = 0.0;     // N_x

    std::size_t size() const noexcept { return first.size(); }
};

PairSet sample_pairs(const Matrix & x, std::size_t pair_budget, SeededRng & rng);

// Mapping difficulty: mean over pairs of (|y_i - y_j| / N_y) / (||x_i - x_j|| / N_x)
// with N_x the max pair input distance and N_y the median pair output distance.
// Pairs with identical inputs are excluded from the mean.
double mapping_difficulty(std::span<const double> w, const Matrix & x, std::size_t pair_budget, SeededRng & rng);
double mapping_difficulty(std::span<const double> outputs, const PairSet & pairs);

// Mapping difficulty for every row of W, sharing one pair sample.
std::vector<double> mapping_difficulty_layer(const Matrix & w, const Matrix & x, std::size_t pair_budget,
                                             SeededRng & rng);

struct IoPair {
    double cos_sim = 0.0;
    double l1_dist = 0.0;
};

struct IoPairsResult {
    std::vector<IoPair> pairs;
    std::size_t skipped_zero_norm = 0;
};

IoPairsResult io_pairs(std::span<const double> w, const Matrix & x, std::size_t pair_budget, SeededRng & rng);

// Indices of the top ceil(fraction * n) neurons by WD, ascending; ties go to the
// lower index.
std::vector<std::size_t> select_wasserstein_neurons(const WdReport & report, double fraction);
std::vector<std::size_t> select_top(std::span<const double> scores, std::size_t count);

double weighted_cluster_average(std::span<const double> values, std::span<const double> sizes);

struct ComponentCount {
    std::size_t count = 0;
    bool zero_variance = false;
};

// Smallest k whose leading covariance eigenvalues explain >= threshold of the
// total variance. X holds one sample per column.
ComponentCount min_components_for_variance(const Matrix & x, double threshold);

// Sample statistics helpers used throughout the reports.
double mean_of(std::span<const double> v);
double variance_of(std::span<const double> v);  // population variance
double median_of(std::vector<double> v);
double pearson(std::span<const double> a, std::span<const double> b);

std::string wd_report_csv(const WdReport & report);
std::string io_pairs_csv(const IoPairsResult & result);

} // namespace spx

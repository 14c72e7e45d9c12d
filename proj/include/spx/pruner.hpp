#pragma once

#include "spx/matrix.hpp"
#include "spx/metrics.hpp"
#include "spx/parallel.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spx {

// H = X X^T over calibration columns. The damping term is applied by damped().
struct HessianState {
    Matrix h;
    std::size_t sample_count = 0;
    double damping_fraction = 0.01;

    // lambda = damping_fraction * mean(diag H)
    double damping_lambda() const;
    // H + lambda I; zero-diagonal (dead) inputs are floored to lambda, or 1 when lambda is 0.
    Matrix damped() const;
};

HessianState accumulate_hessian(const Matrix & x, double damping_fraction = 0.01);
// local + alpha * global, used for clusters with too few samples for a full-rank H.
HessianState pool_hessian(const HessianState & local, const HessianState & global, double alpha);

enum class SparsityPattern { kUnstructured, kNM };

struct PruneSpec {
    double sparsity = 0.5;  // unstructured only
    SparsityPattern pattern = SparsityPattern::kUnstructured;
    std::size_t zeros_per_group = 2;  // n:m pattern, "2:4" = 2 zeros of every 4
    std::size_t group_size = 4;
    std::size_t block_size = 128;
    std::optional<int> bits;
    std::size_t quant_group = 128;
    double damping = 0.01;

    void validate(std::size_t width) const;
    std::size_t zeros_per_row(std::size_t width) const;
    std::string pattern_name() const;

    static PruneSpec unstructured(double sparsity);
    static PruneSpec n_m(std::size_t zeros_per_group, std::size_t group_size);
};

// Parse "unstructured" or "n:m" (n nonzeros kept of every m, e.g. "2:4").
PruneSpec parse_pattern(const std::string & text, PruneSpec base = {});

// Hessian-aware one-shot pruning. Each row is pruned independently by greedy
// OBS: the block_size weights with the lowest saliency w_q^2 / [H^-1]_qq are
// removed together, the surviving weights receive the exact compensating update
// and H^-1 is restricted to the survivors before the next block. block_size 1 is
// the classical one-at-a-time OBS loop.
//
// When rows is non-empty only those rows are pruned; the rest are copied.
Matrix sparsegpt_prune(const Matrix & w, const HessianState & h, const PruneSpec & spec, Parallelism par = {},
                       std::span<const std::size_t> rows = {});

enum class BaselineMethod { kMagnitude, kWanda, kRandom };

BaselineMethod parse_baseline(const std::string & name);

// Mask-only pruning: magnitude (|w|), Wanda (|w_ij| * ||row_j(X)||) or a seeded
// random mask. No weight updates.
Matrix baseline_prune(const Matrix & w, const Matrix * x, BaselineMethod method, const PruneSpec & spec,
                      std::uint64_t seed = 0);

Matrix prune_neuron_subset(const Matrix & w, const HessianState & h, std::span<const std::size_t> indices,
                           const PruneSpec & spec, Parallelism par = {});

// Keeps the top keep_fraction of rows by WD dense and prunes every other row to
// target_sparsity / (1 - keep_fraction).
Matrix allocate_keep_dense(const Matrix & w, const HessianState & h, const WdReport & wd, double keep_fraction,
                           double target_sparsity, const PruneSpec & spec, Parallelism par = {});

struct QuantizedMatrix {
    Matrix values;  // dequantized weights
    Matrix scales;  // rows x groups_per_row
    int bits = 4;
    std::size_t quant_group = 128;
};

// Symmetric round-to-nearest per group of quant_group consecutive weights in a row.
QuantizedMatrix rtn_quantize(const Matrix & w, int bits, std::size_t quant_group);

// Quadratic reconstruction error (w - w_hat)^T H (w - w_hat) summed over rows.
double hessian_error(const Matrix & w, const Matrix & w_hat, const Matrix & h);

std::size_t count_zeros(std::span<const double> row) noexcept;

} // namespace spx

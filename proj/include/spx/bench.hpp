#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace spx {

enum class BenchFormat { kDense, kCsr, kPacked24 };

BenchFormat parse_bench_format(const std::string & name);
std::string bench_format_name(BenchFormat f);

struct BenchSize {
    std::size_t rows = 0;
    std::size_t cols = 0;
};

// "4096x12288,4096x22016" -> sizes
std::vector<BenchSize> parse_bench_sizes(const std::string & text);
std::vector<BenchSize> default_bench_sizes();

struct BenchConfig {
    std::vector<BenchSize> sizes = default_bench_sizes();
    std::vector<BenchFormat> formats = {BenchFormat::kDense, BenchFormat::kCsr, BenchFormat::kPacked24};
    double sparsity = 0.5;  // csr only; packed-2:4 is always 50%
    std::size_t reps = 30;
    std::size_t warmup = 3;
    std::size_t repeats = 3;  // independent timing runs used for the stability figure
    std::uint64_t seed = 0;
    std::size_t max_bytes = std::size_t{4} << 30;
};

struct BenchRow {
    BenchSize size;
    BenchFormat format = BenchFormat::kDense;
    double sparsity = 0.0;
    std::uint64_t macs = 0;
    std::uint64_t nnz = 0;
    double median_us = 0.0;  // median over all repeats
    double iqr_us = 0.0;
    std::vector<double> repeat_medians_us;
    double cv = 0.0;  // coefficient of variation of repeat_medians_us
};

// Multiply-accumulate count of one matvec in the given format.
std::uint64_t bench_mac_count(BenchFormat f, BenchSize size, double sparsity);

std::vector<BenchRow> bench_matvec(const BenchConfig & config);
std::string bench_csv(const std::vector<BenchRow> & rows);

// Sparse containers used by the bench. Values are float.
struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint32_t> row_ptr;
    std::vector<std::uint32_t> col_idx;
    std::vector<float> values;
};

// Two kept values per aligned group of four plus their positions within the group.
struct Packed24Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;        // rows * cols / 2
    std::vector<std::uint8_t> index;  // one position in [0, 4) per value
};

CsrMatrix to_csr(const std::vector<float> & dense, std::size_t rows, std::size_t cols);
Packed24Matrix to_packed24(const std::vector<float> & dense, std::size_t rows, std::size_t cols);

void matvec_dense(const std::vector<float> & w, std::size_t rows, std::size_t cols, const float * x, float * y);
void matvec_csr(const CsrMatrix & m, const float * x, float * y);
void matvec_packed24(const Packed24Matrix & m, const float * x, float * y);

} // namespace spx

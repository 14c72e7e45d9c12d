#include "spx/bench.hpp"
#include "spx/error.hpp"
#include "spx/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace spx;

namespace {

std::vector<float> masked_24(std::size_t rows, std::size_t cols, SeededRng & rng) {
    std::vector<float> w(rows * cols);
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = (i % 4 == 1 || i % 4 == 2) ? 0.0f : static_cast<float>(rng.normal());
    }
    return w;
}

} // namespace

TEST_CASE("sparse matvec kernels agree with the dense one") {
    SeededRng rng(51);
    const std::size_t r = 9;
    const std::size_t c = 16;
    const std::vector<float> w = masked_24(r, c, rng);
    std::vector<float> x(c);
    for (float & v : x) {
        v = static_cast<float>(rng.normal());
    }
    std::vector<float> yd(r);
    std::vector<float> yc(r);
    std::vector<float> yp(r);
    matvec_dense(w, r, c, x.data(), yd.data());
    const CsrMatrix csr = to_csr(w, r, c);
    CHECK(csr.values.size() == r * c / 2);
    CHECK(csr.row_ptr.size() == r + 1);
    matvec_csr(csr, x.data(), yc.data());
    const Packed24Matrix p = to_packed24(w, r, c);
    CHECK(p.values.size() == r * c / 2);
    matvec_packed24(p, x.data(), yp.data());
    for (std::size_t i = 0; i < r; ++i) {
        double ref = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            ref += static_cast<double>(w[i * c + j]) * x[j];
        }
        CHECK(yd[i] == doctest::Approx(ref).epsilon(1e-5));
        CHECK(yc[i] == doctest::Approx(ref).epsilon(1e-5));
        CHECK(yp[i] == doctest::Approx(ref).epsilon(1e-5));
    }
}

TEST_CASE("packing rejects patterns that are not 2:4") {
    std::vector<float> w(8, 1.0f);
    CHECK_THROWS_AS(to_packed24(w, 1, 8), Error);
    CHECK_THROWS_AS(to_packed24(std::vector<float>(6, 0.0f), 1, 6), Error);
}

TEST_CASE("mac counts") {
    CHECK(bench_mac_count(BenchFormat::kDense, {4, 8}, 0.5) == 32);
    CHECK(bench_mac_count(BenchFormat::kCsr, {4, 8}, 0.5) == 16);
    CHECK(bench_mac_count(BenchFormat::kCsr, {4, 10}, 0.7) == 12);
    CHECK(bench_mac_count(BenchFormat::kPacked24, {4, 8}, 0.0) == 16);
}

TEST_CASE("size and format parsing") {
    const auto sizes = parse_bench_sizes("8x16,32x64");
    REQUIRE(sizes.size() == 2);
    CHECK(sizes[1].rows == 32);
    CHECK(sizes[1].cols == 64);
    CHECK_THROWS_AS(parse_bench_sizes("8by16"), Error);
    CHECK_THROWS_AS(parse_bench_sizes("0x16"), Error);
    CHECK(parse_bench_format(bench_format_name(BenchFormat::kPacked24)) == BenchFormat::kPacked24);
    CHECK_THROWS_AS(parse_bench_format("bsr"), Error);
    CHECK(default_bench_sizes().size() == 4);
}

TEST_CASE("small bench run") {
    BenchConfig cfg;
    cfg.sizes = {{64, 128}};
    cfg.reps = 10;
    cfg.warmup = 1;
    cfg.repeats = 2;
    const auto rows = bench_matvec(cfg);
    REQUIRE(rows.size() == 3);
    for (const auto & row : rows) {
        CHECK(row.median_us > 0.0);
        CHECK(row.repeat_medians_us.size() == 2);
        CHECK(row.macs == bench_mac_count(row.format, row.size, cfg.sparsity));
    }
    CHECK(rows[1].nnz == 64 * 64);
    const std::string csv = bench_csv(rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

    cfg.max_bytes = 1000;
    CHECK_THROWS_AS(bench_matvec(cfg), Error);
}

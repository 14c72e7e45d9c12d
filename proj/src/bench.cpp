#include "spx/bench.hpp"

#include "spx/error.hpp"
#include "spx/metrics.hpp"
#include "spx/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <numeric>
#include <sstream>

namespace spx {

BenchFormat parse_bench_format(const std::string & name) {
    if (name == "dense") {
        return BenchFormat::kDense;
    }
    if (name == "csr") {
        return BenchFormat::kCsr;
    }
    if (name == "packed-2:4") {
        return BenchFormat::kPacked24;
    }
    fail(ErrorCode::kInvalidArgument, "unknown bench format '" + name + "' (dense, csr, packed-2:4)");
}

std::string bench_format_name(BenchFormat f) {
    switch (f) {
    case BenchFormat::kDense:
        return "dense";
    case BenchFormat::kCsr:
        return "csr";
    case BenchFormat::kPacked24:
        return "packed-2:4";
    }
    return "dense";
}

std::vector<BenchSize> parse_bench_sizes(const std::string & text) {
    std::vector<BenchSize> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto x = item.find('x');
        require(x != std::string::npos, ErrorCode::kInvalidArgument, "bench size '" + item + "' is not ROWSxCOLS");
        try {
            std::size_t used = 0;
            const std::string r = item.substr(0, x);
            const std::string c = item.substr(x + 1);
            BenchSize s{std::stoull(r, &used), 0};
            require(used == r.size(), ErrorCode::kInvalidArgument, "bad bench size '" + item + "'");
            s.cols = std::stoull(c, &used);
            require(used == c.size(), ErrorCode::kInvalidArgument, "bad bench size '" + item + "'");
            require(s.rows > 0 && s.cols > 0, ErrorCode::kInvalidArgument, "bench sizes must be positive");
            out.push_back(s);
        } catch (const std::logic_error &) {
            fail(ErrorCode::kInvalidArgument, "bad bench size '" + item + "'");
        }
    }
    require(!out.empty(), ErrorCode::kInvalidArgument, "no bench sizes given");
    return out;
}

std::vector<BenchSize> default_bench_sizes() {
    return {{4096, 12288}, {4096, 22016}, {11008, 4096}, {8192, 10240}};
}

namespace {

std::size_t zeros_per_row(std::size_t cols, double sparsity) {
    return static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(cols) + 1e-9));
}

} // namespace

std::uint64_t bench_mac_count(BenchFormat f, BenchSize size, double sparsity) {
    const std::uint64_t r = size.rows;
    const std::uint64_t c = size.cols;
    switch (f) {
    case BenchFormat::kDense:
        return r * c;
    case BenchFormat::kCsr:
        return r * (c - zeros_per_row(size.cols, sparsity));
    case BenchFormat::kPacked24:
        return r * (c / 4) * 2;
    }
    return 0;
}

CsrMatrix to_csr(const std::vector<float> & dense, std::size_t rows, std::size_t cols) {
    CsrMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.row_ptr.reserve(rows + 1);
    m.row_ptr.push_back(0);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const float v = dense[i * cols + j];
            if (v != 0.0f) {
                m.col_idx.push_back(static_cast<std::uint32_t>(j));
                m.values.push_back(v);
            }
        }
        m.row_ptr.push_back(static_cast<std::uint32_t>(m.values.size()));
    }
    return m;
}

Packed24Matrix to_packed24(const std::vector<float> & dense, std::size_t rows, std::size_t cols) {
    require(cols % 4 == 0, ErrorCode::kInvalidArgument, "packed-2:4 needs a column count divisible by 4");
    Packed24Matrix m;
    m.rows = rows;
    m.cols = cols;
    m.values.reserve(rows * cols / 2);
    m.index.reserve(rows * cols / 2);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t g = 0; g < cols; g += 4) {
            std::size_t kept = 0;
            for (std::size_t t = 0; t < 4; ++t) {
                const float v = dense[i * cols + g + t];
                if (v != 0.0f) {
                    require(kept < 2, ErrorCode::kInvalidArgument,
                            "packed-2:4: row " + std::to_string(i) + " has more than two nonzeros in a group of four");
                    m.values.push_back(v);
                    m.index.push_back(static_cast<std::uint8_t>(t));
                    ++kept;
                }
            }
            // Fewer than two nonzeros: pad with explicit zeros.
            for (; kept < 2; ++kept) {
                m.values.push_back(0.0f);
                m.index.push_back(0);
            }
        }
    }
    return m;
}

void matvec_dense(const std::vector<float> & w, std::size_t rows, std::size_t cols, const float * x, float * y) {
    for (std::size_t i = 0; i < rows; ++i) {
        const float * row = w.data() + i * cols;
        float acc = 0.0f;
        for (std::size_t j = 0; j < cols; ++j) {
            acc += row[j] * x[j];
        }
        y[i] = acc;
    }
}

void matvec_csr(const CsrMatrix & m, const float * x, float * y) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        float acc = 0.0f;
        for (std::uint32_t p = m.row_ptr[i]; p < m.row_ptr[i + 1]; ++p) {
            acc += m.values[p] * x[m.col_idx[p]];
        }
        y[i] = acc;
    }
}

void matvec_packed24(const Packed24Matrix & m, const float * x, float * y) {
    const std::size_t half = m.cols / 2;
    for (std::size_t i = 0; i < m.rows; ++i) {
        const float * v = m.values.data() + i * half;
        const std::uint8_t * idx = m.index.data() + i * half;
        float acc = 0.0f;
        for (std::size_t p = 0; p < half; p += 2) {
            const float * xg = x + 2 * p;
            acc += v[p] * xg[idx[p]] + v[p + 1] * xg[idx[p + 1]];
        }
        y[i] = acc;
    }
}

namespace {

double quantile_sorted(const std::vector<double> & v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<float> make_weights(BenchFormat f, BenchSize size, double sparsity, SeededRng & rng) {
    std::vector<float> w(size.rows * size.cols);
    for (float & v : w) {
        // Keep values away from zero so the masks below are the only zeros.
        v = static_cast<float>(0.5 + rng.uniform());
    }
    if (f == BenchFormat::kCsr) {
        const std::size_t z = zeros_per_row(size.cols, sparsity);
        std::vector<std::size_t> idx(size.cols);
        for (std::size_t i = 0; i < size.rows; ++i) {
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            rng.shuffle(std::span<std::size_t>(idx));
            for (std::size_t t = 0; t < z; ++t) {
                w[i * size.cols + idx[t]] = 0.0f;
            }
        }
    } else if (f == BenchFormat::kPacked24) {
        for (std::size_t g = 0; g + 4 <= w.size(); g += 4) {
            std::size_t a = static_cast<std::size_t>(rng.uniform_index(4));
            std::size_t b = static_cast<std::size_t>(rng.uniform_index(3));
            b += b >= a ? 1 : 0;
            w[g + a] = 0.0f;
            w[g + b] = 0.0f;
        }
    }
    return w;
}

} // namespace

std::vector<BenchRow> bench_matvec(const BenchConfig & cfg) {
    require(cfg.reps >= 10, ErrorCode::kInvalidArgument, "bench: reps must be >= 10");
    require(cfg.repeats >= 1, ErrorCode::kInvalidArgument, "bench: repeats must be >= 1");
    require(cfg.sparsity >= 0.0 && cfg.sparsity < 1.0, ErrorCode::kInvalidArgument, "bench: sparsity outside [0, 1)");
    std::vector<BenchRow> rows;
    SeededRng root(cfg.seed);
    for (const BenchSize & size : cfg.sizes) {
        const std::size_t bytes = size.rows * size.cols * sizeof(float) * 2;
        require(size.cols <= std::size_t{1} << 31 && size.rows <= std::size_t{1} << 31 && bytes <= cfg.max_bytes,
                ErrorCode::kInvalidArgument,
                "bench: " + std::to_string(size.rows) + "x" + std::to_string(size.cols) + " exceeds the memory limit");
        for (BenchFormat f : cfg.formats) {
            if (f == BenchFormat::kPacked24) {
                require(size.cols % 4 == 0, ErrorCode::kInvalidArgument,
                        "bench: packed-2:4 needs cols divisible by 4");
            }
            BenchRow row;
            row.size = size;
            row.format = f;
            row.sparsity = f == BenchFormat::kDense ? 0.0 : (f == BenchFormat::kCsr ? cfg.sparsity : 0.5);
            row.macs = bench_mac_count(f, size, cfg.sparsity);

            SeededRng rng = root.child(bench_format_name(f) + std::to_string(size.rows) + "x" +
                                       std::to_string(size.cols));
            std::vector<float> x(size.cols);
            for (float & v : x) {
                v = static_cast<float>(rng.normal());
            }
            std::vector<float> y(size.rows);
            std::vector<float> dense;
            CsrMatrix csr;
            Packed24Matrix packed;
            try {
                dense = make_weights(f, size, cfg.sparsity, rng);
                if (f == BenchFormat::kCsr) {
                    csr = to_csr(dense, size.rows, size.cols);
                    row.nnz = csr.values.size();
                    std::vector<float>().swap(dense);
                } else if (f == BenchFormat::kPacked24) {
                    packed = to_packed24(dense, size.rows, size.cols);
                    row.nnz = packed.values.size();
                    std::vector<float>().swap(dense);
                } else {
                    row.nnz = static_cast<std::uint64_t>(std::count_if(
                        dense.begin(), dense.end(), [](float v) { return v != 0.0f; }));
                }
            } catch (const std::bad_alloc &) {
                fail(ErrorCode::kInvalidArgument, "bench: allocation failed for " + std::to_string(size.rows) + "x" +
                                                      std::to_string(size.cols));
            }
            auto run = [&] {
                switch (f) {
                case BenchFormat::kDense:
                    matvec_dense(dense, size.rows, size.cols, x.data(), y.data());
                    break;
                case BenchFormat::kCsr:
                    matvec_csr(csr, x.data(), y.data());
                    break;
                case BenchFormat::kPacked24:
                    matvec_packed24(packed, x.data(), y.data());
                    break;
                }
            };
            std::vector<double> all;
            volatile float sink = 0.0f;
            for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
                for (std::size_t w = 0; w < cfg.warmup; ++w) {
                    run();
                }
                std::vector<double> times;
                for (std::size_t r = 0; r < cfg.reps; ++r) {
                    const auto t0 = std::chrono::steady_clock::now();
                    run();
                    const auto t1 = std::chrono::steady_clock::now();
                    sink = sink + y[r % y.size()];
                    times.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
                }
                std::sort(times.begin(), times.end());
                row.repeat_medians_us.push_back(quantile_sorted(times, 0.5));
                all.insert(all.end(), times.begin(), times.end());
            }
            std::sort(all.begin(), all.end());
            row.median_us = quantile_sorted(all, 0.5);
            row.iqr_us = quantile_sorted(all, 0.75) - quantile_sorted(all, 0.25);
            const double m = mean_of(row.repeat_medians_us);
            row.cv = m > 0.0 ? std::sqrt(variance_of(row.repeat_medians_us)) / m : 0.0;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow> & rows) {
    std::ostringstream os;
    os.precision(6);
    os << "rows,cols,format,sparsity,macs,nnz,median_us,iqr_us,cv_repeat_medians\n";
    for (const auto & r : rows) {
        os << r.size.rows << ',' << r.size.cols << ',' << bench_format_name(r.format) << ',' << r.sparsity << ','
           << r.macs << ',' << r.nnz << ',' << r.median_us << ',' << r.iqr_us << ',' << r.cv << '\n';
    }
    return os.str();
}

} // namespace spx

#include "spx/metrics.hpp"

#include "spx/error.hpp"
#include "spx/linalg.hpp"
#include "spx/special.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace spx {

namespace {

// Standardize in place with the population mean and variance.
void standardize(std::vector<double> & v) {
    const double mu = mean_of(v);
    double ss = 0.0;
    for (double x : v) {
        ss += (x - mu) * (x - mu);
    }
    const double sd = std::sqrt(ss / static_cast<double>(v.size()));
    for (auto & x : v) {
        x = (x - mu) / sd;
    }
}

const std::vector<double> & gaussian_reference(std::size_t n) {
    thread_local std::size_t cached_n = 0;
    thread_local std::vector<double> cached;
    if (cached_n != n) {
        cached.resize(n);
        const double dn = static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            cached[i] = inv_normal_cdf((static_cast<double>(i) + 0.5) / dn);
        }
        standardize(cached);
        cached_n = n;
    }
    return cached;
}

} // namespace

std::vector<NeuronOutputs> collect_outputs(const Matrix & w, const Matrix & x, std::span<const double> bias) {
    require(w.cols() == x.rows(), ErrorCode::kShapeMismatch,
            "collect_outputs: W has " + std::to_string(w.cols()) + " columns but X has " + std::to_string(x.rows()) +
                " rows");
    require(bias.empty() || bias.size() == w.rows(), ErrorCode::kShapeMismatch, "collect_outputs: bias length");
    const Matrix y = matmul(w, x);
    std::vector<NeuronOutputs> out(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        out[i].neuron_index = i;
        const auto row = y.row(i);
        out[i].samples.assign(row.begin(), row.end());
        if (!bias.empty()) {
            for (auto & v : out[i].samples) {
                v += bias[i];
            }
        }
    }
    return out;
}

double wd_to_gaussian(std::span<const double> samples) {
    require(samples.size() >= 2, ErrorCode::kInvalidArgument, "wd_to_gaussian: need at least 2 samples");
    std::vector<double> z(samples.begin(), samples.end());
    std::sort(z.begin(), z.end());
    require(z.front() != z.back(), ErrorCode::kDegenerate, "wd_to_gaussian: degenerate distribution (zero variance)");
    for (double v : z) {
        require(std::isfinite(v), ErrorCode::kNonFinite, "wd_to_gaussian: non-finite sample");
    }
    standardize(z);
    const auto & ref = gaussian_reference(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        sum += std::fabs(z[i] - ref[i]);
    }
    return sum / static_cast<double>(z.size());
}

WdReport wd_report(const std::string & layer_id, const std::vector<NeuronOutputs> & outputs) {
    WdReport r;
    r.layer_id = layer_id;
    r.wd.reserve(outputs.size());
    for (const auto & n : outputs) {
        r.wd.push_back(wd_to_gaussian(n));
    }
    return r;
}

double wd_empirical(std::span<const double> a, std::span<const double> b) {
    require(!a.empty() && !b.empty(), ErrorCode::kInvalidArgument, "wd_empirical: empty sample set");
    std::vector<double> sa(a.begin(), a.end());
    std::vector<double> sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const std::uint64_t na = sa.size();
    const std::uint64_t nb = sb.size();
    // Quantile breakpoints on the common grid 1 / (na * nb): a steps at i * nb, b at j * na.
    std::uint64_t i = 0;
    std::uint64_t j = 0;
    std::uint64_t pos = 0;
    double sum = 0.0;
    while (i < na && j < nb) {
        const std::uint64_t next_a = (i + 1) * nb;
        const std::uint64_t next_b = (j + 1) * na;
        const std::uint64_t next = std::min(next_a, next_b);
        sum += std::fabs(sa[i] - sb[j]) * static_cast<double>(next - pos);
        pos = next;
        if (next_a == next) {
            ++i;
        }
        if (next_b == next) {
            ++j;
        }
    }
    return sum / (static_cast<double>(na) * static_cast<double>(nb));
}

PairSet sample_pairs(const Matrix & x, std::size_t pair_budget, SeededRng & rng) {
    const std::size_t s = x.cols();
    require(s >= 2, ErrorCode::kInvalidArgument, "pairwise metrics need at least 2 inputs");
    require(pair_budget >= 1, ErrorCode::kInvalidArgument, "pair budget must be >= 1");
    const std::uint64_t total = static_cast<std::uint64_t>(s) * (s - 1) / 2;

    std::vector<std::uint64_t> chosen;
    if (total <= pair_budget) {
        chosen.resize(total);
        std::iota(chosen.begin(), chosen.end(), std::uint64_t{0});
    } else {
        // Floyd's sampling without replacement.
        std::unordered_set<std::uint64_t> picked;
        picked.reserve(pair_budget * 2);
        for (std::uint64_t k = total - pair_budget; k < total; ++k) {
            const std::uint64_t t = rng.uniform_index(k + 1);
            if (!picked.insert(t).second) {
                picked.insert(k);
            }
        }
        chosen.assign(picked.begin(), picked.end());
        std::sort(chosen.begin(), chosen.end());
    }

    // offsets[i] = index of the first pair (i, i + 1) in lexicographic order.
    std::vector<std::uint64_t> offsets(s);
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < s; ++i) {
        offsets[i] = acc;
        acc += s - 1 - i;
    }

    const Matrix xt = x.transposed();
    PairSet pairs;
    pairs.first.reserve(chosen.size());
    pairs.second.reserve(chosen.size());
    pairs.input_dist.reserve(chosen.size());
    for (std::uint64_t k : chosen) {
        const auto it = std::upper_bound(offsets.begin(), offsets.end(), k);
        const auto i = static_cast<std::size_t>(std::distance(offsets.begin(), it) - 1);
        const auto j = static_cast<std::size_t>(i + 1 + (k - offsets[i]));
        const auto xi = xt.row(i);
        const auto xj = xt.row(j);
        double d2 = 0.0;
        for (std::size_t f = 0; f < xi.size(); ++f) {
            const double d = xi[f] - xj[f];
            d2 += d * d;
        }
        const double d = std::sqrt(d2);
        pairs.first.push_back(i);
        pairs.second.push_back(j);
        pairs.input_dist.push_back(d);
        pairs.max_input_dist = std::max(pairs.max_input_dist, d);
    }
    return pairs;
}

double mapping_difficulty(std::span<const double> outputs, const PairSet & pairs) {
    require(pairs.size() >= 1, ErrorCode::kInvalidArgument, "mapping_difficulty: no pairs");
    std::vector<double> dy(pairs.size());
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        dy[p] = std::fabs(outputs[pairs.first[p]] - outputs[pairs.second[p]]);
    }
    const double n_x = pairs.max_input_dist;
    const double n_y = median_of(dy);
    require(n_x > 0.0 && n_y > 0.0, ErrorCode::kDegenerate, "mapping_difficulty: degenerate pairs (N_x or N_y is 0)");
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const double dx = pairs.input_dist[p];
        if (dx == 0.0) {
            continue;
        }
        sum += (dy[p] / n_y) / (dx / n_x);
        ++used;
    }
    require(used > 0, ErrorCode::kDegenerate, "mapping_difficulty: every pair has identical inputs");
    return sum / static_cast<double>(used);
}

double mapping_difficulty(std::span<const double> w, const Matrix & x, std::size_t pair_budget, SeededRng & rng) {
    require(w.size() == x.rows(), ErrorCode::kShapeMismatch, "mapping_difficulty: weight length != input dim");
    const PairSet pairs = sample_pairs(x, pair_budget, rng);
    const Matrix xt = x.transposed();
    std::vector<double> y(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        y[j] = dot(w, xt.row(j));
    }
    return mapping_difficulty(y, pairs);
}

std::vector<double> mapping_difficulty_layer(const Matrix & w, const Matrix & x, std::size_t pair_budget,
                                             SeededRng & rng) {
    require(w.cols() == x.rows(), ErrorCode::kShapeMismatch, "mapping_difficulty_layer: shape mismatch");
    const PairSet pairs = sample_pairs(x, pair_budget, rng);
    const Matrix y = matmul(w, x);
    std::vector<double> md(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        md[i] = mapping_difficulty(y.row(i), pairs);
    }
    return md;
}

IoPairsResult io_pairs(std::span<const double> w, const Matrix & x, std::size_t pair_budget, SeededRng & rng) {
    require(w.size() == x.rows(), ErrorCode::kShapeMismatch, "io_pairs: weight length != input dim");
    const PairSet pairs = sample_pairs(x, pair_budget, rng);
    const Matrix xt = x.transposed();
    std::vector<double> y(x.cols());
    std::vector<double> norm(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        y[j] = dot(w, xt.row(j));
        norm[j] = std::sqrt(dot(xt.row(j), xt.row(j)));
    }
    IoPairsResult res;
    res.pairs.reserve(pairs.size());
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const std::size_t i = pairs.first[p];
        const std::size_t j = pairs.second[p];
        if (norm[i] == 0.0 || norm[j] == 0.0) {
            ++res.skipped_zero_norm;
            continue;
        }
        const double c = dot(xt.row(i), xt.row(j)) / (norm[i] * norm[j]);
        res.pairs.push_back({std::clamp(c, -1.0, 1.0), std::fabs(y[i] - y[j])});
    }
    return res;
}

std::vector<std::size_t> select_top(std::span<const double> scores, std::size_t count) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    idx.resize(std::min(count, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<std::size_t> select_wasserstein_neurons(const WdReport & report, double fraction) {
    require(!report.wd.empty(), ErrorCode::kInvalidArgument, "select_wasserstein_neurons: empty report");
    require(fraction > 0.0 && fraction <= 1.0, ErrorCode::kInvalidArgument,
            "select_wasserstein_neurons: fraction must lie in (0, 1]");
    const double n = static_cast<double>(report.wd.size());
    // The small slack absorbs representation error such as 0.07 * 100 = 7.000000000000001.
    const auto count = static_cast<std::size_t>(std::ceil(fraction * n - 1e-9));
    return select_top(report.wd, std::clamp<std::size_t>(count, 1, report.wd.size()));
}

double weighted_cluster_average(std::span<const double> values, std::span<const double> sizes) {
    require(values.size() == sizes.size(), ErrorCode::kShapeMismatch, "weighted_cluster_average: length mismatch");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        require(sizes[i] >= 0.0, ErrorCode::kInvalidArgument, "weighted_cluster_average: negative size");
        num += sizes[i] * values[i];
        den += sizes[i];
    }
    require(den > 0.0, ErrorCode::kDegenerate, "weighted_cluster_average: total size is 0");
    return num / den;
}

ComponentCount min_components_for_variance(const Matrix & x, double threshold) {
    require(x.cols() >= 2, ErrorCode::kInvalidArgument, "min_components_for_variance: need at least 2 samples");
    require(threshold > 0.0 && threshold <= 1.0, ErrorCode::kInvalidArgument,
            "min_components_for_variance: threshold must lie in (0, 1]");
    const Matrix xt = x.transposed();
    bool identical = true;
    for (std::size_t j = 1; j < xt.rows() && identical; ++j) {
        identical = std::equal(xt.row(j).begin(), xt.row(j).end(), xt.row(0).begin());
    }
    if (identical) {
        return {0, true};
    }

    const std::size_t m = x.rows();
    const std::size_t s = x.cols();
    std::vector<double> mu(m);
    for (std::size_t f = 0; f < m; ++f) {
        mu[f] = mean_of(x.row(f));
    }
    Matrix cov(m, m);
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
            double sum = 0.0;
            for (std::size_t k = 0; k < s; ++k) {
                sum += (x(a, k) - mu[a]) * (x(b, k) - mu[b]);
            }
            cov(a, b) = cov(b, a) = sum / static_cast<double>(s - 1);
        }
    }
    const SymEig eig = sym_eig(cov);
    double total = 0.0;
    for (double v : eig.values) {
        total += std::max(v, 0.0);
    }
    if (!(total > 0.0)) {
        return {0, true};
    }
    // Relative slack so that exactly-equal shares (e.g. 9 of 10 equal eigenvalues at
    // threshold 0.9) are not lost to rounding.
    const double target = threshold * total * (1.0 - 1e-9);
    double cum = 0.0;
    for (std::size_t k = 0; k < eig.values.size(); ++k) {
        cum += std::max(eig.values[k], 0.0);
        if (cum >= target) {
            return {k + 1, false};
        }
    }
    return {eig.values.size(), false};
}

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double variance_of(std::span<const double> v) {
    if (v.empty()) {
        return 0.0;
    }
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) {
        s += (x - mu) * (x - mu);
    }
    return s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
    require(!v.empty(), ErrorCode::kInvalidArgument, "median of empty set");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) {
        return hi;
    }
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

double pearson(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size() && a.size() >= 2, ErrorCode::kInvalidArgument, "pearson: need equal lengths >= 2");
    const double ma = mean_of(a);
    const double mb = mean_of(b);
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
        return 0.0;
    }
    return sab / std::sqrt(saa * sbb);
}

std::string wd_report_csv(const WdReport & report) {
    std::ostringstream os;
    os.precision(17);
    os << "neuron_index,wd\n";
    for (std::size_t i = 0; i < report.wd.size(); ++i) {
        os << i << ',' << report.wd[i] << '\n';
    }
    return os.str();
}

std::string io_pairs_csv(const IoPairsResult & result) {
    std::ostringstream os;
    os.precision(17);
    os << "cos_sim,l1_dist\n";
    for (const auto & p : result.pairs) {
        os << p.cos_sim << ',' << p.l1_dist << '\n';
    }
    return os.str();
}

} // namespace spx

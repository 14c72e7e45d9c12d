#include "spx/pruner.hpp"

#include "spx/error.hpp"
#include "spx/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace spx {

namespace {

// Relative tolerance under which two scores count as tied; the lower column wins.
constexpr double kTieTolerance = 1e-12;

// Select `count` positions with the lowest score. groups[p] / quota enforce the
// n:m pattern (quota is decremented as positions are taken); an empty groups
// vector means no quota. Returns positions in ascending order.
std::vector<std::size_t> pick_lowest(std::span<const double> scores, std::size_t count,
                                     std::span<const std::size_t> groups, std::vector<std::size_t> & quota) {
    const std::size_t n = scores.size();
    std::vector<char> taken(n, 0);
    std::vector<std::size_t> picked;
    picked.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        double best = std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t p = 0; p < n; ++p) {
            if (taken[p] || (!groups.empty() && quota[groups[p]] == 0)) {
                continue;
            }
            if (!any || scores[p] < best) {
                best = scores[p];
                any = true;
            }
        }
        require(any, ErrorCode::kInfeasible, "pruning: no eligible weight left to remove");
        const double limit = best + kTieTolerance * std::fabs(best);
        for (std::size_t p = 0; p < n; ++p) {
            if (taken[p] || (!groups.empty() && quota[groups[p]] == 0)) {
                continue;
            }
            if (scores[p] <= limit) {
                taken[p] = 1;
                picked.push_back(p);
                if (!groups.empty()) {
                    --quota[groups[p]];
                }
                break;
            }
        }
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

std::vector<std::size_t> initial_quota(const PruneSpec & spec, std::size_t width) {
    if (spec.pattern != SparsityPattern::kNM) {
        return {};
    }
    return std::vector<std::size_t>(width / spec.group_size, spec.zeros_per_group);
}

// Greedy blocked OBS on one row. hinv is the inverse of the damped Hessian.
void obs_prune_row(std::span<const double> w_in, const Matrix & hinv, const PruneSpec & spec, std::span<double> out) {
    const std::size_t m = w_in.size();
    std::size_t remaining = spec.zeros_per_row(m);
    std::copy(w_in.begin(), w_in.end(), out.begin());
    if (remaining == 0) {
        return;
    }

    std::vector<std::size_t> active(m);
    std::iota(active.begin(), active.end(), std::size_t{0});
    std::vector<double> wa(w_in.begin(), w_in.end());
    std::vector<double> cur(hinv.values());  // H^-1 restricted to the active set, r x r
    std::size_t r = m;
    std::vector<std::size_t> quota = initial_quota(spec, m);

    std::vector<double> sal;
    std::vector<std::size_t> groups;
    while (remaining > 0) {
        const std::size_t b = std::min(spec.block_size, remaining);
        sal.resize(r);
        groups.clear();
        for (std::size_t p = 0; p < r; ++p) {
            sal[p] = wa[p] * wa[p] / cur[p * r + p];
            if (!quota.empty()) {
                groups.push_back(active[p] / spec.group_size);
            }
        }
        const std::vector<std::size_t> q = pick_lowest(sal, b, groups, quota);

        std::vector<char> is_q(r, 0);
        for (std::size_t p : q) {
            is_q[p] = 1;
        }
        std::vector<std::size_t> keep;
        keep.reserve(r - b);
        for (std::size_t p = 0; p < r; ++p) {
            if (!is_q[p]) {
                keep.push_back(p);
            }
        }

        // S = cur[Q, Q]; z = S^-1 w_Q; w_R -= cur[R, Q] z
        Matrix s(b, b);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < b; ++j) {
                s(i, j) = cur[q[i] * r + q[j]];
            }
        }
        const Matrix l = cholesky_spd(s, 0.0).lower;
        std::vector<double> z(b);
        for (std::size_t i = 0; i < b; ++i) {
            z[i] = wa[q[i]];
        }
        cholesky_solve(l, z);

        const std::size_t r2 = keep.size();
        std::vector<double> wa2(r2);
        for (std::size_t a = 0; a < r2; ++a) {
            const double * row = &cur[keep[a] * r];
            double delta = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
                delta += row[q[i]] * z[i];
            }
            wa2[a] = wa[keep[a]] - delta;
        }
        for (std::size_t p : q) {
            out[active[p]] = 0.0;
        }
        remaining -= b;

        if (remaining > 0) {
            // cur' = cur[R, R] - cur[R, Q] S^-1 cur[Q, R], via Y = L^-1 cur[Q, R].
            Matrix y(b, r2);
            for (std::size_t a = 0; a < r2; ++a) {
                for (std::size_t i = 0; i < b; ++i) {
                    double v = cur[q[i] * r + keep[a]];
                    for (std::size_t k = 0; k < i; ++k) {
                        v -= l(i, k) * y(k, a);
                    }
                    y(i, a) = v / l(i, i);
                }
            }
            const Matrix yt = y.transposed();
            std::vector<double> next(r2 * r2);
            for (std::size_t a = 0; a < r2; ++a) {
                const auto ya = yt.row(a);
                for (std::size_t c = 0; c <= a; ++c) {
                    const double v = cur[keep[a] * r + keep[c]] - dot(ya, yt.row(c));
                    next[a * r2 + c] = v;
                    next[c * r2 + a] = v;
                }
            }
            cur.swap(next);
        }

        std::vector<std::size_t> active2(r2);
        for (std::size_t a = 0; a < r2; ++a) {
            active2[a] = active[keep[a]];
        }
        active.swap(active2);
        wa.swap(wa2);
        r = r2;
    }
    for (std::size_t a = 0; a < r; ++a) {
        out[active[a]] = wa[a];
    }
}

void check_rows(std::span<const std::size_t> rows, std::size_t n) {
    for (std::size_t i : rows) {
        require(i < n, ErrorCode::kInvalidArgument,
                "row index " + std::to_string(i) + " out of range for " + std::to_string(n) + " rows");
    }
}

} // namespace

double HessianState::damping_lambda() const {
    const std::size_t m = h.rows();
    if (m == 0) {
        return 0.0;
    }
    double diag = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        diag += h(i, i);
    }
    return damping_fraction * diag / static_cast<double>(m);
}

Matrix HessianState::damped() const {
    const double lambda = damping_lambda();
    Matrix out = h;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        if (h(i, i) == 0.0) {
            out(i, i) = lambda > 0.0 ? lambda : 1.0;
        } else {
            out(i, i) += lambda;
        }
    }
    return out;
}

HessianState accumulate_hessian(const Matrix & x, double damping_fraction) {
    require(x.cols() >= 1, ErrorCode::kInvalidArgument, "accumulate_hessian: no calibration samples");
    require(damping_fraction >= 0.0, ErrorCode::kInvalidArgument, "accumulate_hessian: damping must be >= 0");
    const std::size_t m = x.rows();
    const Matrix xt = x.transposed();
    Matrix h(m, m);
    for (std::size_t k = 0; k < xt.rows(); ++k) {
        const auto v = xt.row(k);
        for (std::size_t a = 0; a < m; ++a) {
            const double va = v[a];
            if (va == 0.0) {
                continue;
            }
            double * ha = &h(a, 0);
            for (std::size_t b = 0; b <= a; ++b) {
                ha[b] += va * v[b];
            }
        }
    }
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b < a; ++b) {
            h(b, a) = h(a, b);
        }
    }
    return {std::move(h), x.cols(), damping_fraction};
}

HessianState pool_hessian(const HessianState & local, const HessianState & global, double alpha) {
    require(local.h.rows() == global.h.rows(), ErrorCode::kShapeMismatch, "pool_hessian: shape mismatch");
    HessianState out = local;
    auto od = out.h.data();
    auto gd = global.h.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] += alpha * gd[i];
    }
    return out;
}

void PruneSpec::validate(std::size_t width) const {
    require(block_size >= 1, ErrorCode::kInvalidArgument, "block_size must be >= 1");
    require(damping >= 0.0, ErrorCode::kInvalidArgument, "damping must be >= 0");
    if (pattern == SparsityPattern::kUnstructured) {
        require(sparsity >= 0.0 && sparsity < 1.0, ErrorCode::kInvalidArgument, "sparsity must lie in [0, 1)");
    } else {
        require(group_size >= 1 && zeros_per_group < group_size, ErrorCode::kInvalidArgument,
                "n:m pattern needs zeros_per_group < group_size");
        require(width % group_size == 0, ErrorCode::kShapeMismatch,
                "n:m group size " + std::to_string(group_size) + " does not divide layer width " +
                    std::to_string(width));
    }
    if (bits) {
        require(*bits >= 2 && *bits <= 8, ErrorCode::kInvalidArgument, "bits must lie in 2..8");
        require(quant_group >= 1, ErrorCode::kInvalidArgument, "quant_group must be >= 1");
    }
}

std::size_t PruneSpec::zeros_per_row(std::size_t width) const {
    if (pattern == SparsityPattern::kNM) {
        return width / group_size * zeros_per_group;
    }
    // Guard against representation error (0.7 * 10 = 6.999999999999999).
    return static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(width) + 1e-9));
}

std::string PruneSpec::pattern_name() const {
    if (pattern == SparsityPattern::kNM) {
        return std::to_string(group_size - zeros_per_group) + ":" + std::to_string(group_size);
    }
    return "unstructured";
}

PruneSpec PruneSpec::unstructured(double sparsity) {
    PruneSpec s;
    s.sparsity = sparsity;
    return s;
}

PruneSpec PruneSpec::n_m(std::size_t zeros_per_group, std::size_t group_size) {
    PruneSpec s;
    s.pattern = SparsityPattern::kNM;
    s.zeros_per_group = zeros_per_group;
    s.group_size = group_size;
    s.sparsity = static_cast<double>(zeros_per_group) / static_cast<double>(group_size);
    return s;
}

PruneSpec parse_pattern(const std::string & text, PruneSpec base) {
    if (text == "unstructured") {
        base.pattern = SparsityPattern::kUnstructured;
        return base;
    }
    const auto colon = text.find(':');
    require(colon != std::string::npos, ErrorCode::kInvalidArgument, "unknown sparsity pattern '" + text + "'");
    std::size_t kept = 0;
    std::size_t group = 0;
    try {
        kept = std::stoul(text.substr(0, colon));
        group = std::stoul(text.substr(colon + 1));
    } catch (const std::exception &) {
        fail(ErrorCode::kInvalidArgument, "unknown sparsity pattern '" + text + "'");
    }
    require(group >= 1 && kept >= 1 && kept <= group, ErrorCode::kInvalidArgument,
            "invalid n:m pattern '" + text + "'");
    const PruneSpec nm = PruneSpec::n_m(group - kept, group);
    base.pattern = nm.pattern;
    base.zeros_per_group = nm.zeros_per_group;
    base.group_size = nm.group_size;
    base.sparsity = nm.sparsity;
    return base;
}

Matrix sparsegpt_prune(const Matrix & w, const HessianState & h, const PruneSpec & spec, Parallelism par,
                       std::span<const std::size_t> rows) {
    require(h.h.rows() == w.cols() && h.h.cols() == w.cols(), ErrorCode::kShapeMismatch,
            "sparsegpt_prune: Hessian is " + std::to_string(h.h.rows()) + "x" + std::to_string(h.h.cols()) +
                " for a layer of width " + std::to_string(w.cols()));
    spec.validate(w.cols());
    check_rows(rows, w.rows());

    Matrix out = w;
    if (spec.zeros_per_row(w.cols()) == 0) {
        return out;
    }
    const Matrix hinv = cholesky_inverse(cholesky_spd(h.damped(), 0.0).lower);

    std::vector<std::size_t> todo;
    if (rows.empty()) {
        todo.resize(w.rows());
        std::iota(todo.begin(), todo.end(), std::size_t{0});
    } else {
        todo.assign(rows.begin(), rows.end());
    }
    parallel_for(todo.size(), par, [&](std::size_t k) {
        const std::size_t i = todo[k];
        obs_prune_row(w.row(i), hinv, spec, out.row(i));
    });
    return out;
}

BaselineMethod parse_baseline(const std::string & name) {
    if (name == "magnitude") {
        return BaselineMethod::kMagnitude;
    }
    if (name == "wanda") {
        return BaselineMethod::kWanda;
    }
    if (name == "random") {
        return BaselineMethod::kRandom;
    }
    fail(ErrorCode::kInvalidArgument, "unknown baseline method '" + name + "'");
}

Matrix baseline_prune(const Matrix & w, const Matrix * x, BaselineMethod method, const PruneSpec & spec,
                      std::uint64_t seed) {
    spec.validate(w.cols());
    const std::size_t m = w.cols();
    std::vector<double> col_norm(m, 1.0);
    if (method == BaselineMethod::kWanda) {
        require(x != nullptr, ErrorCode::kInvalidArgument, "wanda pruning needs calibration inputs");
        require(x->rows() == m, ErrorCode::kShapeMismatch, "wanda: input dim != layer width");
        for (std::size_t j = 0; j < m; ++j) {
            col_norm[j] = std::sqrt(dot(x->row(j), x->row(j)));
        }
    }
    SeededRng rng(seed);
    const std::size_t zeros = spec.zeros_per_row(m);
    Matrix out = w;
    std::vector<double> score(m);
    std::vector<std::size_t> groups;
    if (spec.pattern == SparsityPattern::kNM) {
        groups.resize(m);
        for (std::size_t j = 0; j < m; ++j) {
            groups[j] = j / spec.group_size;
        }
    }
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const auto row = w.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            switch (method) {
                case BaselineMethod::kMagnitude: score[j] = std::fabs(row[j]); break;
                case BaselineMethod::kWanda: score[j] = std::fabs(row[j]) * col_norm[j]; break;
                case BaselineMethod::kRandom: score[j] = rng.uniform(); break;
            }
        }
        std::vector<std::size_t> quota = initial_quota(spec, m);
        for (std::size_t j : pick_lowest(score, zeros, groups, quota)) {
            out(i, j) = 0.0;
        }
    }
    return out;
}

Matrix prune_neuron_subset(const Matrix & w, const HessianState & h, std::span<const std::size_t> indices,
                           const PruneSpec & spec, Parallelism par) {
    check_rows(indices, w.rows());
    if (indices.empty()) {
        return w;
    }
    return sparsegpt_prune(w, h, spec, par, indices);
}

Matrix allocate_keep_dense(const Matrix & w, const HessianState & h, const WdReport & wd, double keep_fraction,
                           double target_sparsity, const PruneSpec & spec, Parallelism par) {
    require(wd.wd.size() == w.rows(), ErrorCode::kShapeMismatch, "allocate_keep_dense: WD report length != rows");
    require(spec.pattern == SparsityPattern::kUnstructured, ErrorCode::kInvalidArgument,
            "allocate_keep_dense: only unstructured sparsity is supported");
    require(keep_fraction >= 0.0 && keep_fraction < 1.0, ErrorCode::kInvalidArgument,
            "allocate_keep_dense: keep fraction must lie in [0, 1)");
    const double per_row = target_sparsity / (1.0 - keep_fraction);
    require(per_row < 1.0, ErrorCode::kInfeasible,
            "allocate_keep_dense: remaining rows would need sparsity " + std::to_string(per_row) + " >= 1");

    std::vector<std::size_t> dense;
    if (keep_fraction > 0.0) {
        dense = select_wasserstein_neurons(wd, keep_fraction);
    }
    std::vector<char> is_dense(w.rows(), 0);
    for (std::size_t i : dense) {
        is_dense[i] = 1;
    }
    std::vector<std::size_t> prune_rows;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        if (!is_dense[i]) {
            prune_rows.push_back(i);
        }
    }
    PruneSpec adjusted = spec;
    adjusted.sparsity = per_row;
    if (prune_rows.size() == w.rows()) {
        return sparsegpt_prune(w, h, adjusted, par);
    }
    if (prune_rows.empty()) {
        return w;
    }
    return sparsegpt_prune(w, h, adjusted, par, prune_rows);
}

QuantizedMatrix rtn_quantize(const Matrix & w, int bits, std::size_t quant_group) {
    require(bits >= 2 && bits <= 8, ErrorCode::kInvalidArgument, "rtn_quantize: bits must lie in 2..8");
    require(quant_group >= 1, ErrorCode::kInvalidArgument, "rtn_quantize: quant_group must be >= 1");
    const std::size_t m = w.cols();
    const std::size_t groups = m == 0 ? 0 : (m + quant_group - 1) / quant_group;
    const double qmax = static_cast<double>((1 << (bits - 1)) - 1);

    QuantizedMatrix q;
    q.values = Matrix(w.rows(), m);
    q.scales = Matrix(w.rows(), groups);
    q.bits = bits;
    q.quant_group = quant_group;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t lo = g * quant_group;
            const std::size_t hi = std::min(m, lo + quant_group);
            double amax = 0.0;
            for (std::size_t j = lo; j < hi; ++j) {
                amax = std::max(amax, std::fabs(w(i, j)));
            }
            const double scale = amax / qmax;
            q.scales(i, g) = scale;
            for (std::size_t j = lo; j < hi; ++j) {
                if (scale == 0.0) {
                    q.values(i, j) = 0.0;
                    continue;
                }
                const double level = std::clamp(std::round(w(i, j) / scale), -qmax, qmax);
                q.values(i, j) = level * scale;
            }
        }
    }
    return q;
}

double hessian_error(const Matrix & w, const Matrix & w_hat, const Matrix & h) {
    require(w.rows() == w_hat.rows() && w.cols() == w_hat.cols() && h.rows() == w.cols(), ErrorCode::kShapeMismatch,
            "hessian_error: shape mismatch");
    double total = 0.0;
    std::vector<double> d(w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            d[j] = w(i, j) - w_hat(i, j);
        }
        for (std::size_t a = 0; a < w.cols(); ++a) {
            total += d[a] * dot(h.row(a), d);
        }
    }
    return total;
}

std::size_t count_zeros(std::span<const double> row) noexcept {
    return static_cast<std::size_t>(std::count(row.begin(), row.end(), 0.0));
}

} // namespace spx

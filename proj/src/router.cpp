#include "spx/router.hpp"

#include "spx/error.hpp"
#include "spx/linalg.hpp"
#include "spx/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spx {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace

PcaModel pca_fit(const Matrix & x, std::size_t k) {
    const std::size_t m = x.rows();
    const std::size_t s = x.cols();
    require(k >= 1 && k <= std::min(m, s), ErrorCode::kInvalidArgument,
            "pca_fit: k=" + std::to_string(k) + " outside [1, min(m, s)=" + std::to_string(std::min(m, s)) + "]");
    require(s >= 2, ErrorCode::kInvalidArgument, "pca_fit: need at least 2 samples");

    PcaModel model;
    model.mean.resize(m);
    for (std::size_t f = 0; f < m; ++f) {
        double sum = 0.0;
        for (double v : x.row(f)) {
            sum += v;
        }
        model.mean[f] = sum / static_cast<double>(s);
    }
    const Matrix xt = x.transposed();
    Matrix cov(m, m);
    std::vector<double> centered(m);
    for (std::size_t j = 0; j < s; ++j) {
        const auto col = xt.row(j);
        for (std::size_t f = 0; f < m; ++f) {
            centered[f] = col[f] - model.mean[f];
        }
        for (std::size_t a = 0; a < m; ++a) {
            double * ca = &cov(a, 0);
            for (std::size_t b = 0; b <= a; ++b) {
                ca[b] += centered[a] * centered[b];
            }
        }
    }
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
            cov(a, b) /= static_cast<double>(s - 1);
            cov(b, a) = cov(a, b);
        }
    }
    const SymEig eig = sym_eig(cov);
    model.components = Matrix(k, m);
    model.explained_variances.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        model.explained_variances[c] = std::max(eig.values[c], 0.0);
        for (std::size_t f = 0; f < m; ++f) {
            model.components(c, f) = eig.vectors(f, c);
        }
    }
    return model;
}

std::vector<double> pca_transform(const PcaModel & model, std::span<const double> x) {
    require(x.size() == model.input_dim(), ErrorCode::kShapeMismatch, "pca_transform: input dim mismatch");
    std::vector<double> centered(x.size());
    for (std::size_t f = 0; f < x.size(); ++f) {
        centered[f] = x[f] - model.mean[f];
    }
    std::vector<double> out(model.output_dim());
    for (std::size_t c = 0; c < out.size(); ++c) {
        out[c] = dot(model.components.row(c), centered);
    }
    return out;
}

Matrix pca_transform(const PcaModel & model, const Matrix & x) {
    require(x.rows() == model.input_dim(), ErrorCode::kShapeMismatch, "pca_transform: input dim mismatch");
    const Matrix xt = x.transposed();
    Matrix out(model.output_dim(), x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        const auto r = pca_transform(model, xt.row(j));
        for (std::size_t c = 0; c < r.size(); ++c) {
            out(c, j) = r[c];
        }
    }
    return out;
}

std::size_t nearest_centroid(const Matrix & centroids, std::span<const double> point) {
    require(point.size() == centroids.cols(), ErrorCode::kShapeMismatch, "nearest_centroid: dimension mismatch");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        const double d = sq_dist(centroids.row(c), point);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

KMeansModel kmeans_fit(const Matrix & xr, std::size_t c, std::uint64_t seed, KMeansOptions opts) {
    const std::size_t s = xr.cols();
    const std::size_t k = xr.rows();
    require(c >= 1, ErrorCode::kInvalidArgument, "kmeans_fit: need at least one cluster");
    require(s >= c, ErrorCode::kInvalidArgument,
            "kmeans_fit: " + std::to_string(s) + " points for " + std::to_string(c) + " clusters");
    const Matrix pts = xr.transposed();  // s x k
    SeededRng rng = SeededRng(seed).child("kmeans++");

    // k-means++ seeding.
    Matrix cent(c, k);
    std::vector<double> d2(s, std::numeric_limits<double>::infinity());
    std::size_t first = static_cast<std::size_t>(rng.uniform_index(s));
    std::copy(pts.row(first).begin(), pts.row(first).end(), cent.row(0).begin());
    for (std::size_t ci = 1; ci < c; ++ci) {
        double total = 0.0;
        for (std::size_t p = 0; p < s; ++p) {
            d2[p] = std::min(d2[p], sq_dist(pts.row(p), cent.row(ci - 1)));
            total += d2[p];
        }
        require(total > 0.0, ErrorCode::kDegenerate,
                "kmeans_fit: fewer distinct points than clusters (" + std::to_string(c) + ")");
        const double target = rng.uniform() * total;
        double acc = 0.0;
        std::size_t pick = s;
        for (std::size_t p = 0; p < s; ++p) {
            acc += d2[p];
            if (acc > target && d2[p] > 0.0) {
                pick = p;
                break;
            }
        }
        if (pick == s) {
            // Rounding left the target past the end: take the last point with mass.
            for (std::size_t p = s; p-- > 0;) {
                if (d2[p] > 0.0) {
                    pick = p;
                    break;
                }
            }
        }
        std::copy(pts.row(pick).begin(), pts.row(pick).end(), cent.row(ci).begin());
    }

    KMeansModel model;
    model.seed = seed;
    std::vector<std::size_t> assign(s, 0);
    std::vector<double> dist(s, 0.0);
    std::vector<std::size_t> counts(c, 0);

    auto assign_step = [&] {
        double inertia = 0.0;
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t p = 0; p < s; ++p) {
            const auto row = pts.row(p);
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t ci = 0; ci < c; ++ci) {
                const double d = sq_dist(cent.row(ci), row);
                if (d < best_d) {
                    best_d = d;
                    best = ci;
                }
            }
            assign[p] = best;
            dist[p] = best_d;
            ++counts[best];
            inertia += best_d;
        }
        return inertia;
    };

    double inertia = assign_step();
    model.inertia_history.push_back(inertia);
    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        // Empty clusters take the point farthest from its centroid.
        for (std::size_t ci = 0; ci < c; ++ci) {
            if (counts[ci] != 0) {
                continue;
            }
            std::size_t far = 0;
            for (std::size_t p = 1; p < s; ++p) {
                if (dist[p] > dist[far]) {
                    far = p;
                }
            }
            --counts[assign[far]];
            assign[far] = ci;
            counts[ci] = 1;
            dist[far] = 0.0;
        }
        Matrix next(c, k);
        for (std::size_t p = 0; p < s; ++p) {
            auto dst = next.row(assign[p]);
            const auto src = pts.row(p);
            for (std::size_t f = 0; f < k; ++f) {
                dst[f] += src[f];
            }
        }
        double shift2 = 0.0;
        double norm2 = 0.0;
        for (std::size_t ci = 0; ci < c; ++ci) {
            auto row = next.row(ci);
            const double inv = 1.0 / static_cast<double>(counts[ci]);
            for (std::size_t f = 0; f < k; ++f) {
                row[f] *= inv;
            }
            shift2 += sq_dist(row, cent.row(ci));
            norm2 += dot(cent.row(ci), cent.row(ci));
        }
        cent = std::move(next);
        model.iterations_run = it + 1;
        inertia = assign_step();
        model.inertia_history.push_back(inertia);
        if (std::sqrt(shift2) <= opts.tol * std::max(1.0, std::sqrt(norm2))) {
            break;
        }
    }
    model.centroids = std::move(cent);
    model.final_inertia = inertia;
    return model;
}

std::size_t Router::input_dim() const noexcept {
    return pca ? pca->input_dim() : kmeans.dim();
}

std::size_t Router::param_count() const noexcept {
    std::size_t n = kmeans.clusters() * kmeans.dim();
    if (pca) {
        n += pca->output_dim() * pca->input_dim() + pca->input_dim();
    }
    return n;
}

std::size_t default_pca_components(std::size_t input_dim) noexcept {
    if (input_dim <= 64) {
        return 0;
    }
    return std::min<std::size_t>(64, std::max<std::size_t>(1, input_dim / 32));
}

Router fit_router(const Matrix & x, const RouterOptions & opts) {
    Router r;
    const std::size_t k = opts.pca_components == 0 ? default_pca_components(x.rows()) : opts.pca_components;
    if (k != 0 && k < x.rows()) {
        r.pca = pca_fit(x, k);
        r.kmeans = kmeans_fit(pca_transform(*r.pca, x), opts.clusters, opts.seed, opts.kmeans);
    } else {
        r.kmeans = kmeans_fit(x, opts.clusters, opts.seed, opts.kmeans);
    }
    return r;
}

std::size_t route(const Router & router, std::span<const double> x) {
    require(x.size() == router.input_dim(), ErrorCode::kShapeMismatch, "route: input dimension mismatch");
    if (router.pca) {
        const auto reduced = pca_transform(*router.pca, x);
        return nearest_centroid(router.kmeans.centroids, reduced);
    }
    return nearest_centroid(router.kmeans.centroids, x);
}

std::vector<std::size_t> route_all(const Router & router, const Matrix & x) {
    require(x.rows() == router.input_dim(), ErrorCode::kShapeMismatch, "route_all: input dimension mismatch");
    const Matrix xt = x.transposed();
    std::vector<std::size_t> out(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        out[j] = route(router, xt.row(j));
    }
    return out;
}

} // namespace spx

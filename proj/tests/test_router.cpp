#include "spx/error.hpp"
#include "spx/metrics.hpp"
#include "spx/router.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace spx;

namespace {

// Gaussian blobs around c well separated centers (dim x per*c).
Matrix blobs(std::size_t dim, std::size_t c, std::size_t per, double spread, SeededRng & rng) {
    Matrix x(dim, c * per);
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t s = 0; s < per; ++s) {
            for (std::size_t i = 0; i < dim; ++i) {
                const double center = i == k % dim ? 10.0 * static_cast<double>(1 + k / dim) : 0.0;
                x(i, k * per + s) = center + spread * rng.normal();
            }
        }
    }
    return x;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return s;
}

} // namespace

TEST_CASE("PCA recovers a planted axis and orthonormal components") {
    SeededRng rng(31);
    Matrix x(5, 400);
    for (std::size_t s = 0; s < 400; ++s) {
        const double t = 3.0 * rng.normal();
        for (std::size_t i = 0; i < 5; ++i) {
            x(i, s) = 1.0 + t * (i < 2 ? 1.0 / std::sqrt(2.0) : 0.0) + 0.1 * rng.normal();
        }
    }
    const PcaModel p = pca_fit(x, 3);
    CHECK(std::fabs(std::fabs(p.components(0, 0)) - 1.0 / std::sqrt(2.0)) < 0.02);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            CHECK(dot(p.components.row(a), p.components.row(b)) == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-9));
        }
    }
    for (std::size_t k = 1; k < 3; ++k) {
        CHECK(p.explained_variances[k] <= p.explained_variances[k - 1]);
    }
    // Explained variance equals the sample variance (ddof 1) of the projection.
    const Matrix z = pca_transform(p, x);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto row = z.row(k);
        const double var = variance_of(row) * 400.0 / 399.0;
        CHECK(var == doctest::Approx(p.explained_variances[k]).epsilon(1e-9));
        CHECK(std::fabs(mean_of(row)) < 1e-9);
    }
    const std::vector<double> col = x.col(7);
    const std::vector<double> one = pca_transform(p, col);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(one[k] == doctest::Approx(z(k, 7)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(pca_fit(x, 6), Error);
}

TEST_CASE("default PCA width") {
    CHECK(default_pca_components(64) == 0);
    CHECK(default_pca_components(65) == 2);
    CHECK(default_pca_components(256) == 8);
    CHECK(default_pca_components(4096) == 64);
    CHECK(default_pca_components(100000) == 64);
}

TEST_CASE("k-means converges to a Lloyd fixed point") {
    SeededRng rng(32);
    const Matrix x = blobs(3, 4, 50, 1.0, rng);
    const KMeansModel km = kmeans_fit(x, 4, 7);
    CHECK(km.clusters() == 4);
    CHECK(km.iterations_run <= 100);
    for (std::size_t i = 1; i < km.inertia_history.size(); ++i) {
        CHECK(km.inertia_history[i] <= km.inertia_history[i - 1] * (1.0 + 1e-12));
    }
    // Centroids are the means of their assigned points and inertia matches.
    Matrix sums(4, 3);
    std::vector<double> counts(4, 0.0);
    double inertia = 0.0;
    std::set<std::size_t> used;
    for (std::size_t s = 0; s < x.cols(); ++s) {
        const auto col = x.col(s);
        std::size_t best = 0;
        for (std::size_t k = 1; k < 4; ++k) {
            if (sq_dist(km.centroids.row(k), col) < sq_dist(km.centroids.row(best), col)) {
                best = k;
            }
        }
        CHECK(nearest_centroid(km.centroids, col) == best);
        inertia += sq_dist(km.centroids.row(best), col);
        counts[best] += 1.0;
        used.insert(best);
        for (std::size_t i = 0; i < 3; ++i) {
            sums(best, i) += col[i];
        }
    }
    CHECK(used.size() == 4);
    CHECK(inertia == doctest::Approx(km.final_inertia).epsilon(1e-9));
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(counts[k] == doctest::Approx(50.0));
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(km.centroids(k, i) == doctest::Approx(sums(k, i) / counts[k]).epsilon(1e-6));
        }
    }
}

TEST_CASE("k-means is deterministic per seed") {
    SeededRng rng(33);
    const Matrix x = blobs(4, 5, 30, 2.0, rng);
    CHECK(kmeans_fit(x, 5, 11).centroids == kmeans_fit(x, 5, 11).centroids);
    CHECK(kmeans_fit(x, 1, 1).centroids.rows() == 1);
}

TEST_CASE("k-means rejects too few distinct points") {
    const Matrix x = Matrix::from_rows({{1, 1, 1, 2}});
    try {
        kmeans_fit(x, 3, 0);
        FAIL("expected degenerate error");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::kDegenerate);
    }
    CHECK(kmeans_fit(x, 2, 0).clusters() == 2);
}

TEST_CASE("nearest centroid breaks ties toward the lower index") {
    const Matrix c = Matrix::from_rows({{1, 0}, {-1, 0}, {0, 5}});
    const std::vector<double> origin{0, 0};
    CHECK(nearest_centroid(c, origin) == 0);
    const std::vector<double> p{-0.5, 0};
    CHECK(nearest_centroid(c, p) == 1);
}

TEST_CASE("router routes blobs consistently") {
    SeededRng rng(34);
    const Matrix x = blobs(80, 4, 40, 0.5, rng);
    RouterOptions opts;
    opts.clusters = 4;
    opts.seed = 5;
    const Router r = fit_router(x, opts);
    REQUIRE(r.pca.has_value());
    CHECK(r.input_dim() == 80);
    CHECK(r.reduced_dim() == 2);
    CHECK(r.param_count() == 2 * 80 + 80 + 4 * 2);
    const auto routes = route_all(r, x);
    for (std::size_t k = 0; k < 4; ++k) {
        std::set<std::size_t> ids;
        for (std::size_t s = 0; s < 40; ++s) {
            ids.insert(routes[k * 40 + s]);
            CHECK(route(r, x.col(k * 40 + s)) == routes[k * 40 + s]);
        }
        CHECK(ids.size() == 1);
    }
    std::set<std::size_t> all(routes.begin(), routes.end());
    CHECK(all.size() == 4);

    RouterOptions small = opts;
    const Matrix narrow = blobs(3, 4, 10, 0.5, rng);
    const Router id = fit_router(narrow, small);
    CHECK_FALSE(id.pca.has_value());
    CHECK(id.param_count() == 4 * 3);
}

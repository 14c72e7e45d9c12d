#pragma once

#include "spx/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace spx {

struct PcaModel {
    std::vector<double> mean;                 // length m
    Matrix components;                        // k x m, orthonormal rows
    std::vector<double> explained_variances;  // length k, non-increasing

    std::size_t input_dim() const noexcept { return components.cols(); }
    std::size_t output_dim() const noexcept { return components.rows(); }
};

// Top-k principal components of the sample covariance of the columns of X (m x s).
PcaModel pca_fit(const Matrix & x, std::size_t k);

// components * (X - mean), k x s.
Matrix pca_transform(const PcaModel & model, const Matrix & x);
std::vector<double> pca_transform(const PcaModel & model, std::span<const double> x);

struct KMeansModel {
    Matrix centroids;  // c x k
    std::uint64_t seed = 0;
    std::size_t iterations_run = 0;
    double final_inertia = 0.0;
    std::vector<double> inertia_history;  // inertia after each assignment step

    std::size_t clusters() const noexcept { return centroids.rows(); }
    std::size_t dim() const noexcept { return centroids.cols(); }
};

struct KMeansOptions {
    std::size_t max_iter = 100;
    double tol = 1e-6;  // relative centroid shift
};

// k-means++ seeding then Lloyd iterations on the columns of Xr (k x s).
KMeansModel kmeans_fit(const Matrix & xr, std::size_t c, std::uint64_t seed, KMeansOptions opts = {});

// Nearest centroid by squared Euclidean distance; ties go to the lower index.
std::size_t nearest_centroid(const Matrix & centroids, std::span<const double> point);

struct Router {
    std::optional<PcaModel> pca;  // absent: identity passthrough
    KMeansModel kmeans;

    std::size_t input_dim() const noexcept;
    std::size_t reduced_dim() const noexcept { return kmeans.dim(); }
    std::size_t clusters() const noexcept { return kmeans.clusters(); }
    // PCA (k*m + m) plus centroid (c*k) parameters.
    std::size_t param_count() const noexcept;
};

struct RouterOptions {
    std::size_t clusters = 16;
    // 0 selects the default: identity when m <= 64, else max(1, m / 32) capped at 64.
    std::size_t pca_components = 0;
    std::uint64_t seed = 0;
    KMeansOptions kmeans;
};

std::size_t default_pca_components(std::size_t input_dim) noexcept;

Router fit_router(const Matrix & x, const RouterOptions & opts);

std::size_t route(const Router & router, std::span<const double> x);
// Expert index for every column of X.
std::vector<std::size_t> route_all(const Router & router, const Matrix & x);

} // namespace spx

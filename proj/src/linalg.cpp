#include "spx/linalg.hpp"

#include "spx/error.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spx {

namespace {

bool try_cholesky(const Matrix & m, double jitter, Matrix & l) {
    const std::size_t n = m.rows();
    l = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = m(j, j) + jitter;
        const auto lj = l.row(j);
        for (std::size_t k = 0; k < j; ++k) {
            d -= lj[k] * lj[k];
        }
        if (!(d > 0.0) || !std::isfinite(d)) {
            return false;
        }
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            const auto li = l.row(i);
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                s -= li[k] * lj[k];
            }
            l(i, j) = s / ljj;
        }
    }
    return true;
}

} // namespace

CholeskyResult cholesky_spd(const Matrix & m, double jitter, int max_escalations) {
    require(m.rows() == m.cols(), ErrorCode::kShapeMismatch, "cholesky_spd: matrix is not square");
    require(jitter >= 0.0 && std::isfinite(jitter), ErrorCode::kInvalidArgument, "cholesky_spd: jitter must be >= 0");

    CholeskyResult res;
    double current = jitter;
    for (int attempt = 0;; ++attempt) {
        if (try_cholesky(m, current, res.lower)) {
            res.jitter_used = current;
            res.escalations = attempt;
            return res;
        }
        if (attempt >= max_escalations) {
            break;
        }
        double next = current * 10.0;
        if (current == 0.0) {
            double mean_diag = 0.0;
            for (std::size_t i = 0; i < m.rows(); ++i) {
                mean_diag += std::fabs(m(i, i));
            }
            mean_diag = m.rows() > 0 ? mean_diag / static_cast<double>(m.rows()) : 0.0;
            next = 1e-10 * (mean_diag > 0.0 ? mean_diag : 1.0);
        }
        spdlog::warn("cholesky_spd: factorization failed with jitter {:g}, retrying with {:g}", current, next);
        current = next;
    }
    fail(ErrorCode::kNotPositiveDefinite,
         "matrix is not positive definite (last jitter " + std::to_string(current) + ")");
}

Matrix cholesky_inverse(const Matrix & lower) {
    const std::size_t n = lower.rows();
    // Linv = L^{-1}, lower triangular.
    Matrix linv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        linv(j, j) = 1.0 / lower(j, j);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = j; k < i; ++k) {
                s += lower(i, k) * linv(k, j);
            }
            linv(i, j) = -s / lower(i, i);
        }
    }
    // M^{-1} = Linv^T Linv
    Matrix inv(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t k = i; k < n; ++k) {
                s += linv(k, i) * linv(k, j);
            }
            inv(i, j) = s;
            inv(j, i) = s;
        }
    }
    return inv;
}

void cholesky_solve(const Matrix & lower, std::vector<double> & b) {
    const std::size_t n = lower.rows();
    require(b.size() == n, ErrorCode::kShapeMismatch, "cholesky_solve: rhs length mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        const auto li = lower.row(i);
        for (std::size_t k = 0; k < i; ++k) {
            s -= li[k] * b[k];
        }
        b[i] = s / li[i];
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) {
            s -= lower(k, i) * b[k];
        }
        b[i] = s / lower(i, i);
    }
}

SymEig sym_eig(const Matrix & m) {
    require(m.rows() == m.cols(), ErrorCode::kShapeMismatch, "sym_eig: matrix is not square");
    const auto n = static_cast<Eigen::Index>(m.rows());
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            a(i, j) = m(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
    if (solver.info() != Eigen::Success) {
        fail(ErrorCode::kNoConvergence, "sym_eig: eigen-decomposition did not converge");
    }
    const auto & vals = solver.eigenvalues();
    const auto & vecs = solver.eigenvectors();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return vals(x) > vals(y); });

    SymEig out;
    out.values.resize(static_cast<std::size_t>(n));
    out.vectors = Matrix(m.rows(), m.rows());
    for (std::size_t c = 0; c < order.size(); ++c) {
        const Eigen::Index src = order[c];
        out.values[c] = vals(src);
        Eigen::Index arg = 0;
        for (Eigen::Index i = 1; i < n; ++i) {
            if (std::fabs(vecs(i, src)) > std::fabs(vecs(arg, src))) {
                arg = i;
            }
        }
        const double sign = vecs(arg, src) < 0.0 ? -1.0 : 1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            out.vectors(static_cast<std::size_t>(i), c) = sign * vecs(i, src);
        }
    }
    return out;
}

} // namespace spx

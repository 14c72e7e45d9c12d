#pragma once

#include "spx/matrix.hpp"

#include <vector>

namespace spx {

struct CholeskyResult {
    Matrix lower;
    double jitter_used = 0.0;
    int escalations = 0;
};

// Factor M + jitter*I = L*L^T. On failure the jitter is multiplied by 10 (starting
// from 1e-10 * mean|diag| when the requested jitter is zero) up to max_escalations
// times before throwing kNotPositiveDefinite.
CholeskyResult cholesky_spd(const Matrix & m, double jitter = 0.0, int max_escalations = 6);

// Inverse of an SPD matrix from its lower Cholesky factor.
Matrix cholesky_inverse(const Matrix & lower);

// Solve L*L^T x = b in place.
void cholesky_solve(const Matrix & lower, std::vector<double> & b);

struct SymEig {
    std::vector<double> values;  // descending
    Matrix vectors;              // column i is the eigenvector of values[i]
};

// Eigen-decomposition of a symmetric matrix. Eigenvector signs are fixed so the
// largest-magnitude component of each vector is positive.
SymEig sym_eig(const Matrix & m);

} // namespace spx

#pragma once

// Independent reference implementations used only by the tests. None of these
// call into the library's numerical kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

// Phi(x) from the Taylor series of erf, summed in long double; accurate for |x| < 6.
inline long double normal_cdf_series(long double x) {
    const long double z = x / std::sqrt(2.0L);
    long double term = z;
    long double sum = z;
    for (int n = 1; n < 400; ++n) {
        term *= -z * z / n;
        const long double add = term / (2 * n + 1);
        sum += add;
        if (std::fabs(add) < 1e-30L) {
            break;
        }
    }
    const long double pi = 3.141592653589793238462643383279502884L;
    return 0.5L + sum / std::sqrt(pi);
}

// Phi^-1(p) by bisection on the series CDF.
inline double inv_normal_cdf_bisect(double p) {
    long double lo = -8.0L;
    long double hi = 8.0L;
    for (int it = 0; it < 200; ++it) {
        const long double mid = 0.5L * (lo + hi);
        if (normal_cdf_series(mid) < p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return static_cast<double>(0.5L * (lo + hi));
}

// integral over u in (0,1) of |Q(u) - Phi^-1(u)| for a quantile function Q,
// composite midpoint rule with n cells.
template <typename Q>
double wd_quadrature(Q quantile, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        s += std::fabs(quantile(u) - inv_normal_cdf_bisect(u));
    }
    return s / static_cast<double>(n);
}

using Mat = std::vector<std::vector<double>>;

// Gauss-Jordan inverse with partial pivoting.
inline Mat invert(Mat a) {
    const std::size_t n = a.size();
    Mat inv(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        inv[i][i] = 1.0;
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) {
                piv = r;
            }
        }
        std::swap(a[c], a[piv]);
        std::swap(inv[c], inv[piv]);
        const double d = a[c][c];
        for (std::size_t k = 0; k < n; ++k) {
            a[c][k] /= d;
            inv[c][k] /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) {
                continue;
            }
            const double f = a[r][c];
            for (std::size_t k = 0; k < n; ++k) {
                a[r][k] -= f * a[c][k];
                inv[r][k] -= f * inv[c][k];
            }
        }
    }
    return inv;
}

// Greedy OBS on one row: at every step recompute the inverse of H restricted to
// the surviving weights, remove the weight with the smallest w_q^2 / [H_S^-1]_qq
// and apply w_S -= (w_q / [H_S^-1]_qq) * H_S^-1[:, q].
inline std::vector<double> naive_obs(std::vector<double> w, const Mat & h, std::size_t zeros) {
    const std::size_t m = w.size();
    std::vector<std::size_t> alive(m);
    std::iota(alive.begin(), alive.end(), std::size_t{0});
    for (std::size_t step = 0; step < zeros; ++step) {
        const std::size_t k = alive.size();
        Mat hs(k, std::vector<double>(k));
        for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t b = 0; b < k; ++b) {
                hs[a][b] = h[alive[a]][alive[b]];
            }
        }
        const Mat hinv = invert(hs);
        std::size_t best = 0;
        double best_s = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < k; ++a) {
            const double s = w[alive[a]] * w[alive[a]] / hinv[a][a];
            if (s < best_s) {
                best_s = s;
                best = a;
            }
        }
        const double f = w[alive[best]] / hinv[best][best];
        for (std::size_t a = 0; a < k; ++a) {
            w[alive[a]] -= f * hinv[a][best];
        }
        w[alive[best]] = 0.0;
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return w;
}

// (w - v)^T H (w - v)
inline double quad_error(const std::vector<double> & w, const std::vector<double> & v, const Mat & h) {
    double s = 0.0;
    for (std::size_t a = 0; a < w.size(); ++a) {
        for (std::size_t b = 0; b < w.size(); ++b) {
            s += (w[a] - v[a]) * h[a][b] * (w[b] - v[b]);
        }
    }
    return s;
}

} // namespace oracle

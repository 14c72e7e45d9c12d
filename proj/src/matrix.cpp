#include "spx/matrix.hpp"

#include "spx/error.hpp"

#include <cmath>
#include <string>

namespace spx {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows * cols, ErrorCode::kShapeMismatch,
            "matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows) + "x" +
                std::to_string(cols));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>> & rows) {
    if (rows.empty()) {
        return {};
    }
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r].size() == m.cols(), ErrorCode::kShapeMismatch, "ragged rows");
        for (std::size_t c = 0; c < m.cols(); ++c) {
            m(r, c) = rows[r][c];
        }
    }
    return m;
}

std::vector<double> Matrix::col(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        out[r] = (*this)(r, c);
    }
    return out;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

Matrix Matrix::col_range(std::size_t first, std::size_t count) const {
    require(first + count <= cols_, ErrorCode::kShapeMismatch, "column range out of bounds");
    Matrix out(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < count; ++c) {
            out(r, c) = (*this)(r, first + c);
        }
    }
    return out;
}

Matrix Matrix::select_cols(std::span<const std::size_t> idx) const {
    Matrix out(rows_, idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) {
        require(idx[c] < cols_, ErrorCode::kShapeMismatch, "column index out of bounds");
    }
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < idx.size(); ++c) {
            out(r, c) = (*this)(r, idx[c]);
        }
    }
    return out;
}

bool Matrix::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += a[i] * b[i];
    }
    return sum;
}

Matrix matmul(const Matrix & w, const Matrix & x) {
    require(w.cols() == x.rows(), ErrorCode::kShapeMismatch,
            "matmul: " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + " times " +
                std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
    const Matrix xt = x.transposed();
    Matrix out(w.rows(), x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        const auto xc = xt.row(j);
        for (std::size_t i = 0; i < w.rows(); ++i) {
            out(i, j) = dot(w.row(i), xc);
        }
    }
    return out;
}

double frobenius_norm(const Matrix & m) noexcept {
    double sum = 0.0;
    for (double v : m.data()) {
        sum += v * v;
    }
    return std::sqrt(sum);
}

Matrix subtract(const Matrix & a, const Matrix & b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShapeMismatch, "subtract: shapes differ");
    Matrix out = a;
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] -= bd[i];
    }
    return out;
}

const char * error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::kShapeMismatch: return "shape_mismatch";
        case ErrorCode::kInvalidArgument: return "invalid_argument";
        case ErrorCode::kDomain: return "domain_error";
        case ErrorCode::kNotPositiveDefinite: return "not_positive_definite";
        case ErrorCode::kNoConvergence: return "no_convergence";
        case ErrorCode::kDegenerate: return "degenerate";
        case ErrorCode::kBadMagic: return "bad_magic";
        case ErrorCode::kTruncated: return "truncated_payload";
        case ErrorCode::kShapeOverflow: return "shape_overflow";
        case ErrorCode::kUnsupportedFormat: return "unsupported_format";
        case ErrorCode::kIo: return "io_error";
        case ErrorCode::kInfeasible: return "infeasible";
        case ErrorCode::kNonFinite: return "non_finite";
    }
    return "unknown";
}

} // namespace spx

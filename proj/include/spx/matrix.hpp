#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace spx {

// Dense row-major matrix of doubles. Weight matrices store one neuron per row;
// activation matrices store one sample per column (features x samples).
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(const std::vector<std::vector<double>> & rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double & operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<double> col(std::size_t c) const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double> & values() const noexcept { return data_; }

    Matrix transposed() const;
    // Columns [first, first + count) as a new matrix.
    Matrix col_range(std::size_t first, std::size_t count) const;
    // Selected columns, in the given order.
    Matrix select_cols(std::span<const std::size_t> idx) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Matrix & a, const Matrix & b) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b) noexcept;

// W (n x m) times X (m x s). Every output entry is dot(row_i(W), col_j(X)) summed
// in index order, so any routed or per-column evaluation using dot() reproduces
// it bit for bit.
Matrix matmul(const Matrix & w, const Matrix & x);

double frobenius_norm(const Matrix & m) noexcept;
Matrix subtract(const Matrix & a, const Matrix & b);

} // namespace spx

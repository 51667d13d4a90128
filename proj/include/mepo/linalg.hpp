#pragma once

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <vector>

namespace mepo {

/// Feature vectors, prototypes and means.
using FeatVec = std::vector<double>;

/// Dense row-major matrix.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    /// Throws DimensionMismatch unless data.size() == rows * cols.
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    /// Nested row literal, e.g. DenseMatrix{{4, 2}, {2, 3}}.
    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

    static DenseMatrix identity(std::size_t n);
    static DenseMatrix column(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool is_square() const noexcept { return rows_ == cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
FeatVec matvec(const DenseMatrix& a, std::span<const double> x);
/// aᵀ·x without forming the transpose.
FeatVec matvec_transposed(const DenseMatrix& a, std::span<const double> x);
DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator*(double s, const DenseMatrix& a);

double frobenius_norm(const DenseMatrix& a);
double trace(const DenseMatrix& a);
double norm2(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> values);

/// Diagonal-regularized Cholesky-Banachiewicz factorization of
/// (sigma + sigmaᵀ)/2 + epsilon·I. Returns L with exact zeros above the
/// diagonal and a strictly positive diagonal.
DenseMatrix cholesky(const DenseMatrix& sigma, double epsilon = 1e-4);

/// Forward substitution: solves l·X = b for lower-triangular l.
DenseMatrix solve_lower_triangular(const DenseMatrix& l, const DenseMatrix& b);
FeatVec solve_lower_triangular(const DenseMatrix& l, std::span<const double> b);

/// Back substitution with the transpose: solves lᵀ·x = b.
FeatVec solve_lower_transposed(const DenseMatrix& l, std::span<const double> b);

struct Covariance {
    FeatVec mean;
    DenseMatrix cov;
};

/// Two-pass unbiased (N−1) sample covariance. Requires at least two rows.
Covariance sample_covariance(std::span<const FeatVec> rows);

/// Text layout: "rows cols" header line, then one line per row of
/// space-separated values printed with 17 significant digits.
void write_matrix(std::ostream& out, const DenseMatrix& m);
DenseMatrix read_matrix(std::istream& in);

}  // namespace mepo

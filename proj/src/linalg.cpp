#include "mepo/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "mepo/error.hpp"

namespace mepo {

namespace {

void require(bool ok, ErrorKind kind, const char* what) {
    if (!ok) throw Error(kind, what);
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows * cols, ErrorKind::DimensionMismatch,
            "matrix data length does not equal rows*cols");
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        require(r.size() == cols_, ErrorKind::DimensionMismatch, "ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

DenseMatrix DenseMatrix::column(std::span<const double> values) {
    return DenseMatrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.cols() == b.rows(), ErrorKind::DimensionMismatch, "matmul inner dimensions differ");
    DenseMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

FeatVec matvec(const DenseMatrix& a, std::span<const double> x) {
    require(a.cols() == x.size(), ErrorKind::DimensionMismatch, "matvec dimension mismatch");
    FeatVec y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
    return y;
}

FeatVec matvec_transposed(const DenseMatrix& a, std::span<const double> x) {
    require(a.rows() == x.size(), ErrorKind::DimensionMismatch, "matvec_transposed dimension mismatch");
    FeatVec y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double xi = x[i];
        auto row = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += row[j] * xi;
    }
    return y;
}

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::DimensionMismatch, "shape mismatch in +");
    DenseMatrix out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
    return out;
}

DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::DimensionMismatch, "shape mismatch in -");
    DenseMatrix out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
    return out;
}

DenseMatrix operator*(double s, const DenseMatrix& a) {
    DenseMatrix out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

double frobenius_norm(const DenseMatrix& a) { return norm2(a.data()); }

double trace(const DenseMatrix& a) {
    double t = 0.0;
    for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
    return t;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::DimensionMismatch, "dot length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

bool all_finite(std::span<const double> values) {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

DenseMatrix cholesky(const DenseMatrix& sigma, double epsilon) {
    require(sigma.is_square(), ErrorKind::NotSquare, "cholesky input is not square");
    require(epsilon >= 0.0 && std::isfinite(epsilon), ErrorKind::ConfigError, "epsilon must be finite and >= 0");
    require(all_finite(sigma.data()), ErrorKind::NonFinite, "cholesky input has non-finite entries");
    const std::size_t n = sigma.rows();

    double scale = 0.0;
    for (double v : sigma.data()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (std::abs(sigma(i, j) - sigma(j, i)) > 1e-10 * scale)
                throw Error(ErrorKind::NotSymmetric, "cholesky input is not symmetric within 1e-10 relative");

    DenseMatrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = 0.5 * (sigma(i, j) + sigma(j, i));
            if (i == j) sum += epsilon;
            for (std::size_t k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(sum > 0.0))
                    throw Error(ErrorKind::NotPositiveDefinite,
                                "non-positive pivot at row " + std::to_string(i) + "; raise epsilon");
                l(i, i) = std::sqrt(sum);
            } else {
                l(i, j) = sum / l(j, j);
            }
        }
    }
    return l;
}

DenseMatrix solve_lower_triangular(const DenseMatrix& l, const DenseMatrix& b) {
    require(l.is_square(), ErrorKind::NotSquare, "triangular factor is not square");
    require(l.rows() == b.rows(), ErrorKind::DimensionMismatch, "row counts of l and b differ");
    const std::size_t n = l.rows();
    for (std::size_t i = 0; i < n; ++i)
        if (l(i, i) == 0.0) throw Error(ErrorKind::SingularDiagonal, "zero on the diagonal at row " + std::to_string(i));

    DenseMatrix x = b;
    for (std::size_t i = 0; i < n; ++i) {
        auto xi = x.row(i);
        for (std::size_t k = 0; k < i; ++k) {
            const double lik = l(i, k);
            if (lik == 0.0) continue;
            auto xk = x.row(k);
            for (std::size_t c = 0; c < x.cols(); ++c) xi[c] -= lik * xk[c];
        }
        const double inv = 1.0 / l(i, i);
        for (double& v : xi) v *= inv;
    }
    return x;
}

FeatVec solve_lower_triangular(const DenseMatrix& l, std::span<const double> b) {
    DenseMatrix x = solve_lower_triangular(l, DenseMatrix::column(b));
    return FeatVec(x.data().begin(), x.data().end());
}

FeatVec solve_lower_transposed(const DenseMatrix& l, std::span<const double> b) {
    require(l.is_square(), ErrorKind::NotSquare, "triangular factor is not square");
    require(l.rows() == b.size(), ErrorKind::DimensionMismatch, "row counts of l and b differ");
    const std::size_t n = l.rows();
    FeatVec x(b.begin(), b.end());
    for (std::size_t i = n; i-- > 0;) {
        if (l(i, i) == 0.0) throw Error(ErrorKind::SingularDiagonal, "zero on the diagonal at row " + std::to_string(i));
        for (std::size_t k = i + 1; k < n; ++k) x[i] -= l(k, i) * x[k];
        x[i] /= l(i, i);
    }
    return x;
}

Covariance sample_covariance(std::span<const FeatVec> rows) {
    require(rows.size() >= 2, ErrorKind::TooFewRows, "sample covariance needs at least two rows");
    const std::size_t dim = rows.front().size();
    for (const auto& r : rows) require(r.size() == dim, ErrorKind::DimensionMismatch, "rows differ in dimension");

    const double n = static_cast<double>(rows.size());
    Covariance out{FeatVec(dim, 0.0), DenseMatrix(dim, dim)};
    for (const auto& r : rows)
        for (std::size_t j = 0; j < dim; ++j) out.mean[j] += r[j];
    for (double& m : out.mean) m /= n;

    FeatVec centered(dim);
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < dim; ++j) centered[j] = r[j] - out.mean[j];
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j <= i; ++j) out.cov(i, j) += centered[i] * centered[j];
    }
    const double inv = 1.0 / (n - 1.0);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            out.cov(i, j) *= inv;
            out.cov(j, i) = out.cov(i, j);
        }
    return out;
}

void write_matrix(std::ostream& out, const DenseMatrix& m) {
    const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
    out << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (c) out << ' ';
            out << m(r, c);
        }
        out << '\n';
    }
    out.precision(old_precision);
}

DenseMatrix read_matrix(std::istream& in) {
    std::size_t rows = 0, cols = 0;
    if (!(in >> rows >> cols)) throw Error(ErrorKind::ParseError, "missing matrix header");
    std::vector<double> data(rows * cols);
    for (double& v : data) {
        // Parse through strtod so that values like "inf" are rejected below
        // instead of silently failing the stream.
        std::string token;
        if (!(in >> token)) throw Error(ErrorKind::ParseError, "truncated matrix body");
        char* end = nullptr;
        v = std::strtod(token.c_str(), &end);
        if (end != token.c_str() + token.size()) throw Error(ErrorKind::ParseError, "bad matrix value '" + token + "'");
    }
    if (!all_finite(data)) throw Error(ErrorKind::NonFinite, "matrix file contains non-finite values");
    return DenseMatrix(rows, cols, std::move(data));
}

}  // namespace mepo

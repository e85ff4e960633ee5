#include "evfl/matrix.hpp"

#include <cmath>
#include <string>

#include "evfl/errors.hpp"

namespace evfl {

namespace {
constexpr double kNormEps = 1e-12;

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}
}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
        throw ShapeError("Matrix: data size does not match rows*cols");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ar = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * br[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn: row counts differ");
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* ar = a.row_ptr(k);
        const double* br = b.row_ptr(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            double aki = ar[i];
            if (aki == 0.0) continue;
            double* orow = out.row_ptr(i);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * br[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_nt: column counts differ");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ar = a.row_ptr(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            out(i, j) = detail::dot(ar, b.row_ptr(j), a.cols());
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shapes differ");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shapes differ");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

void axpy(Matrix& y, double a, const Matrix& x) {
    require(y.rows() == x.rows() && y.cols() == x.cols(), "axpy: shapes differ");
    for (std::size_t i = 0; i < y.data().size(); ++i) y.data()[i] += a * x.data()[i];
}

Matrix take_rows(const Matrix& a, const std::vector<int>& ids) {
    Matrix out(ids.size(), a.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        int r = ids[i];
        if (r < 0 || static_cast<std::size_t>(r) >= a.rows())
            throw ShapeError("take_rows: row id out of range");
        const double* src = a.row_ptr(static_cast<std::size_t>(r));
        double* dst = out.row_ptr(i);
        for (std::size_t j = 0; j < a.cols(); ++j) dst[j] = src[j];
    }
    return out;
}

Matrix hconcat(const std::vector<Matrix>& blocks) {
    if (blocks.empty()) throw ShapeError("hconcat: no blocks");
    std::size_t rows = blocks.front().rows();
    std::size_t cols = 0;
    for (const Matrix& b : blocks) {
        require(b.rows() == rows, "hconcat: row counts differ");
        cols += b.cols();
    }
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double* dst = out.row_ptr(i);
        for (const Matrix& b : blocks) {
            const double* src = b.row_ptr(i);
            for (std::size_t j = 0; j < b.cols(); ++j) *dst++ = src[j];
        }
    }
    return out;
}

std::vector<double> col_sums(const Matrix& a) {
    std::vector<double> out(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* r = a.row_ptr(i);
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += r[j];
    }
    return out;
}

double frobenius_sq(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return s;
}

double row_norm(const Matrix& a, std::size_t r) {
    return detail::norm2(a.row_ptr(r), a.cols());
}

Matrix normalize_rows(const Matrix& a) {
    Matrix out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double n = row_norm(a, i);
        if (n < kNormEps)
            throw DomainError("normalize_rows: row " + std::to_string(i) + " has zero norm");
        double inv = 1.0 / n;
        double* r = out.row_ptr(i);
        for (std::size_t j = 0; j < a.cols(); ++j) r[j] *= inv;
    }
    return out;
}

Matrix normalize_rows_safe(const Matrix& a) {
    Matrix out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double n = row_norm(a, i);
        if (n < kNormEps) continue;
        double inv = 1.0 / n;
        double* r = out.row_ptr(i);
        for (std::size_t j = 0; j < a.cols(); ++j) r[j] *= inv;
    }
    return out;
}

Matrix normalize_rows_backward(const Matrix& raw, const Matrix& grad_out) {
    require(raw.rows() == grad_out.rows() && raw.cols() == grad_out.cols(),
            "normalize_rows_backward: shapes differ");
    Matrix out(raw.rows(), raw.cols());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        double n = row_norm(raw, i);
        if (n < kNormEps) continue;  // safe map fixed the row, nothing flows back
        const double* x = raw.row_ptr(i);
        const double* g = grad_out.row_ptr(i);
        double inv = 1.0 / n;
        // d/dx (x/|x|) applied to g: (g - (g.y) y) / |x| with y = x/|x|.
        double gy = 0.0;
        for (std::size_t j = 0; j < raw.cols(); ++j) gy += g[j] * x[j] * inv;
        double* o = out.row_ptr(i);
        for (std::size_t j = 0; j < raw.cols(); ++j)
            o[j] = (g[j] - gy * x[j] * inv) * inv;
    }
    return out;
}

Matrix softmax_rows(const Matrix& a) {
    if (a.empty()) throw DomainError("softmax_rows: empty input");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* r = a.row_ptr(i);
        double mx = r[0];
        for (std::size_t j = 1; j < a.cols(); ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        double* o = out.row_ptr(i);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            o[j] = std::exp(r[j] - mx);
            sum += o[j];
        }
        double inv = 1.0 / sum;
        for (std::size_t j = 0; j < a.cols(); ++j) o[j] *= inv;
    }
    return out;
}

double cosine_dissimilarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw ShapeError("cosine_dissimilarity: lengths differ");
    return detail::cosine_dissimilarity(a.data(), b.data(), a.size());
}

namespace detail {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double norm2(const double* a, std::size_t n) {
    return std::sqrt(dot(a, a, n));
}

double cosine_dissimilarity(const double* a, const double* b, std::size_t n) {
    double na = norm2(a, n);
    double nb = norm2(b, n);
    if (na < kNormEps || nb < kNormEps)
        throw DomainError("cosine_dissimilarity: zero-norm input");
    return 1.0 - dot(a, b, n) / (na * nb);
}

}  // namespace detail

}  // namespace evfl

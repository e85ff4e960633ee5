#pragma once

#include <cstddef>
#include <vector>

namespace evfl {

// Dense row-major matrix of 64-bit floats. Everything the simulator moves
// around (features, representations, parameters, prototypes) uses this type.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
    const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // transpose(a) * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * transpose(b)
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
void axpy(Matrix& y, double a, const Matrix& x);  // y += a*x

Matrix take_rows(const Matrix& a, const std::vector<int>& ids);
Matrix hconcat(const std::vector<Matrix>& blocks);

std::vector<double> col_sums(const Matrix& a);
double frobenius_sq(const Matrix& a);
double row_norm(const Matrix& a, std::size_t r);

// Rows rescaled to unit L2 norm; a row with norm below 1e-12 is degenerate.
Matrix normalize_rows(const Matrix& a);
// Like normalize_rows but zero rows pass through unchanged (dead extractor
// outputs must not kill a training run).
Matrix normalize_rows_safe(const Matrix& a);
// Pullback of the safe normalization: gradient wrt the raw rows given the
// gradient wrt the normalized rows; zero rows get zero gradient.
Matrix normalize_rows_backward(const Matrix& raw, const Matrix& grad_out);

// Row-wise softmax, stabilized by subtracting the row maximum; every output
// row sums to 1 within 1e-12.
Matrix softmax_rows(const Matrix& a);

// 1 - cos(a, b). Zero-norm input is degenerate.
double cosine_dissimilarity(const std::vector<double>& a, const std::vector<double>& b);

namespace detail {
double dot(const double* a, const double* b, std::size_t n);
double norm2(const double* a, std::size_t n);
double cosine_dissimilarity(const double* a, const double* b, std::size_t n);
}  // namespace detail

}  // namespace evfl

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cxrlm {

// Dense row-major f64 matrix. All model arithmetic runs in 64-bit floats.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& at(size_t i, size_t j) { return a[i * cols + j]; }
    double at(size_t i, size_t j) const { return a[i * cols + j]; }

    double* row(size_t i) { return a.data() + i * cols; }
    const double* row(size_t i) const { return a.data() + i * cols; }

    size_t size() const { return a.size(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Matrix& o) const {
        return rows == o.rows && cols == o.cols && a == o.a;
    }
};

// C = A * B
Matrix matmul(const Matrix& A, const Matrix& B);
// C = A * B^T
Matrix matmul_nt(const Matrix& A, const Matrix& B);
// C = A^T * B
Matrix matmul_tn(const Matrix& A, const Matrix& B);

void add_inplace(Matrix& A, const Matrix& B);

bool all_finite(const Matrix& A);

// throws NumericError naming `what` if shapes differ
void check_same_shape(const Matrix& A, const Matrix& B, const std::string& what);

} // namespace cxrlm

#include "cxrlm/tensor.hpp"

#include "cxrlm/errors.hpp"

#include <cmath>

namespace cxrlm {

Matrix matmul(const Matrix& A, const Matrix& B) {
    if (A.cols != B.rows) throw NumericError("matmul: inner dimensions differ");
    Matrix C(A.rows, B.cols);
    for (size_t i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* crow = C.row(i);
        for (size_t k = 0; k < A.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = B.row(k);
            for (size_t j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return C;
}

Matrix matmul_nt(const Matrix& A, const Matrix& B) {
    if (A.cols != B.cols) throw NumericError("matmul_nt: inner dimensions differ");
    Matrix C(A.rows, B.rows);
    for (size_t i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* crow = C.row(i);
        for (size_t j = 0; j < B.rows; ++j) {
            const double* brow = B.row(j);
            double s = 0.0;
            for (size_t k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
            crow[j] = s;
        }
    }
    return C;
}

Matrix matmul_tn(const Matrix& A, const Matrix& B) {
    if (A.rows != B.rows) throw NumericError("matmul_tn: inner dimensions differ");
    Matrix C(A.cols, B.cols);
    for (size_t k = 0; k < A.rows; ++k) {
        const double* arow = A.row(k);
        const double* brow = B.row(k);
        for (size_t i = 0; i < A.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = C.row(i);
            for (size_t j = 0; j < B.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return C;
}

void add_inplace(Matrix& A, const Matrix& B) {
    check_same_shape(A, B, "add_inplace");
    for (size_t i = 0; i < A.a.size(); ++i) A.a[i] += B.a[i];
}

bool all_finite(const Matrix& A) {
    for (double x : A.a)
        if (!std::isfinite(x)) return false;
    return true;
}

void check_same_shape(const Matrix& A, const Matrix& B, const std::string& what) {
    if (!A.same_shape(B))
        throw NumericError(what + ": shape mismatch " + std::to_string(A.rows) + "x" +
                           std::to_string(A.cols) + " vs " + std::to_string(B.rows) + "x" +
                           std::to_string(B.cols));
}

} // namespace cxrlm

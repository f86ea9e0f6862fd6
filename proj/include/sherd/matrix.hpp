#pragma once

#include <cblas.h>

#include <vector>

#include "sherd/common.hpp"

namespace sherd {

// Dense row-major matrix over float or double.
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, T(0)) {}

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  T at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }
};

inline void blas_gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                      const float* a, int lda, const float* b, int ldb, float beta, float* c,
                      int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
              ldc);
}

inline void blas_gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                      const double* a, int lda, const double* b, int ldb, double beta,
                      double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
              ldc);
}

// c = op(a) * op(b), dimensions taken from the operands.
template <typename T>
void matmul(Mat<T>& c, const Mat<T>& a, bool trans_a, const Mat<T>& b, bool trans_b,
            T alpha = T(1), T beta = T(0)) {
  const int m = trans_a ? a.cols : a.rows;
  const int k = trans_a ? a.rows : a.cols;
  const int kb = trans_b ? b.cols : b.rows;
  const int n = trans_b ? b.rows : b.cols;
  if (k != kb) fail(Errc::ShapeMismatch, "matmul inner dimensions disagree");
  if (c.rows != m || c.cols != n) fail(Errc::ShapeMismatch, "matmul output shape disagrees");
  blas_gemm(trans_a, trans_b, m, n, k, alpha, a.data(), a.cols, b.data(), b.cols, beta,
            c.data(), c.cols);
}

}  // namespace sherd

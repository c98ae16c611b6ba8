#pragma once

#include <cblas.h>

#include <cstdlib>
#include <mutex>

namespace ssia::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C.
// BLAS stays single-threaded; parallelism, when any, comes from batching.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  static std::once_flag once;
  std::call_once(once, [] { ::setenv("OPENBLAS_NUM_THREADS", "1", 0); });
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

}  // namespace ssia::detail

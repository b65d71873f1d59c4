#pragma once

#include <cstdint>

namespace mcssl::blas {

// C = alpha * op(A) * op(B) + beta * C, row-major.
// A is m x k after op, B is k x n after op, C is m x n.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, int64_t lda, const float* b, int64_t ldb, float beta, float* c,
          int64_t ldc);
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc);

// "openblas:<core>" when the shared library was loaded, "builtin" otherwise.
const char* backend();

// Applies the MCSSL_THREADS cap to the loaded BLAS.
void set_threads(int n);

}  // namespace mcssl::blas

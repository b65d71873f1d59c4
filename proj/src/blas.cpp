#include "mcssl/blas.hpp"

#include <dlfcn.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>

#include "mcssl/threads.hpp"

namespace mcssl::blas {
namespace {

// CBLAS constants (row-major order, transpose flags).
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

using SgemmFn = void (*)(int, int, int, int, int, int, float, const float*, int, const float*,
                         int, float, float*, int);
using DgemmFn = void (*)(int, int, int, int, int, int, double, const double*, int, const double*,
                         int, double, double*, int);
using SetThreadsFn = void (*)(int);
using CorenameFn = char* (*)();

struct Backend {
  SgemmFn sgemm = nullptr;
  DgemmFn dgemm = nullptr;
  SetThreadsFn set_threads = nullptr;
  std::string name = "builtin";
};

// OpenBLAS picks its kernels in an ELF constructor, so the core-type hint has
// to be in the environment before the library is mapped. Loading lazily via
// dlopen keeps that window open: on AVX-512 hardware whose CPUID brand string
// defeats the runtime detection (common on VMs), force the SkylakeX kernels
// unless the user already chose a core type.
Backend load_backend() {
  Backend b;
  if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512vl") &&
      __builtin_cpu_supports("avx512dq") && __builtin_cpu_supports("avx512bw")) {
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", /*overwrite=*/0);
  }
  void* h = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
  if (!h) h = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
  if (!h) return b;
  auto sgemm = reinterpret_cast<SgemmFn>(dlsym(h, "cblas_sgemm"));
  auto dgemm = reinterpret_cast<DgemmFn>(dlsym(h, "cblas_dgemm"));
  if (!sgemm || !dgemm) return b;
  b.sgemm = sgemm;
  b.dgemm = dgemm;
  b.set_threads = reinterpret_cast<SetThreadsFn>(dlsym(h, "openblas_set_num_threads"));
  b.name = "openblas";
  if (auto corename = reinterpret_cast<CorenameFn>(dlsym(h, "openblas_get_corename")))
    b.name += std::string(":") + corename();
  if (b.set_threads) b.set_threads(thread_count());
  return b;
}

Backend& backend_instance() {
  static Backend b = load_backend();
  return b;
}

// Cache-blocked fallback so the artifact still runs without OpenBLAS.
template <typename T>
void gemm_builtin(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha,
                  const T* a, int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
  constexpr int64_t kb = 64;
  for (int64_t k0 = 0; k0 < k; k0 += kb) {
    int64_t k1 = std::min(k0 + kb, k);
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t p = k0; p < k1; ++p) {
        T av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
        if (av == T(0)) continue;
        const T* brow = trans_b ? nullptr : b + p * ldb;
        T* crow = c + i * ldc;
        if (trans_b) {
          for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
        } else {
          for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, int64_t lda, const float* b, int64_t ldb, float beta, float* c,
          int64_t ldc) {
  Backend& be = backend_instance();
  if (be.sgemm) {
    be.sgemm(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans,
             static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
             static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
    return;
  }
  gemm_builtin(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc) {
  Backend& be = backend_instance();
  if (be.dgemm) {
    be.dgemm(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans,
             static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
             static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
    return;
  }
  gemm_builtin(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

const char* backend() { return backend_instance().name.c_str(); }

void set_threads(int n) {
  Backend& be = backend_instance();
  if (be.set_threads) be.set_threads(n);
}

}  // namespace mcssl::blas

#pragma once

#include <type_traits>

#include <fdnet/common.hpp>

#ifdef FDNET_USE_OPENBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace fdn::detail {

inline void set_blas_threads(int n) {
#ifdef FDNET_USE_OPENBLAS
  if (n > 0) openblas_set_num_threads(n);
#else
  (void)n;
#endif
}

// Row-major C[m x n] = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
#ifdef FDNET_USE_OPENBLAS
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
                tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
    return;
  } else if constexpr (std::is_same_v<T, double>) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
                tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
    return;
  }
#endif
  // Portable fallback, ikj order for cache friendliness.
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (int p = 0; p < k; ++p) {
      T av = ta ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                : a[static_cast<std::ptrdiff_t>(i) * lda + p];
      av *= alpha;
      if (av == T(0)) continue;
      const T* brow = tb ? nullptr : b + static_cast<std::ptrdiff_t>(p) * ldb;
      if (tb) {
        for (int j = 0; j < n; ++j)
          crow[j] += av * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace fdn::detail

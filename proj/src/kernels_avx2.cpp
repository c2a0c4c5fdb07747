#include <immintrin.h>

#include <cstring>

#include "m2f/kernels.hpp"

// AVX2/FMA variants, 4 fp64 lanes. Reductions use 4 partial accumulators, so
// results can differ from the scalar reference by rounding only; the
// equivalence tests bound that.
namespace m2f::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void add_v(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_v(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_v(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}
void scale_v(double alpha, const double* x, double* out, size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}
void axpy_v(double alpha, const double* x, double* y, size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                               _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}
double dot_v(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double r = hsum(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}
double sum_v(const double* x, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

void matmul_nn_v(const double* a, const double* b, double* c, size_t m,
                 size_t k, size_t n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    size_t kk = 0;
    // two k-steps per pass keeps the FMA ports busier on small N
    for (; kk + 2 <= k; kk += 2) {
      const __m256d a0 = _mm256_set1_pd(arow[kk]);
      const __m256d a1 = _mm256_set1_pd(arow[kk + 1]);
      const double* b0 = b + kk * n;
      const double* b1 = b0 + n;
      size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d cv = _mm256_loadu_pd(crow + j);
        cv = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j), cv);
        cv = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b1 + j), cv);
        _mm256_storeu_pd(crow + j, cv);
      }
      for (; j < n; ++j) crow[j] += arow[kk] * b0[j] + arow[kk + 1] * b1[j];
    }
    for (; kk < k; ++kk) {
      const __m256d a0 = _mm256_set1_pd(arow[kk]);
      const double* b0 = b + kk * n;
      size_t j = 0;
      for (; j + 4 <= n; j += 4)
        _mm256_storeu_pd(crow + j,
                         _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j),
                                         _mm256_loadu_pd(crow + j)));
      for (; j < n; ++j) crow[j] += arow[kk] * b0[j];
    }
  }
}

void matmul_nt_v(const double* a, const double* b, double* c, size_t m,
                 size_t k, size_t n, bool accumulate) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      __m256d acc = _mm256_setzero_pd();
      size_t kk = 0;
      for (; kk + 4 <= k; kk += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + kk),
                              _mm256_loadu_pd(brow + kk), acc);
      double r = hsum(acc);
      for (; kk < k; ++kk) r += arow[kk] * brow[kk];
      if (accumulate)
        crow[j] += r;
      else
        crow[j] = r;
    }
  }
}

void matmul_tn_v(const double* a, const double* b, double* c, size_t m,
                 size_t k, size_t n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * m;
    const double* brow = b + kk * n;
    for (size_t i = 0; i < m; ++i) {
      const __m256d av = _mm256_set1_pd(arow[i]);
      double* crow = c + i * n;
      size_t j = 0;
      for (; j + 4 <= n; j += 4)
        _mm256_storeu_pd(crow + j,
                         _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j),
                                         _mm256_loadu_pd(crow + j)));
      for (; j < n; ++j) crow[j] += arow[i] * brow[j];
    }
  }
}

}  // namespace

const Table kAvx2 = {
    "avx2",   add_v,       sub_v,       mul_v,       scale_v,
    axpy_v,   dot_v,       sum_v,       matmul_nn_v, matmul_nt_v,
    matmul_tn_v,
};

}  // namespace m2f::kernels

#include <cstring>

#include "m2f/kernels.hpp"

// Reference kernels. Plain loops, sequential reduction order; the SIMD
// variants are equivalence-tested against these.
namespace m2f::kernels {
namespace {

void add_s(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_s(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_s(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void scale_s(double alpha, const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}
void axpy_s(double alpha, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
double dot_s(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}
double sum_s(const double* x, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void matmul_nn_s(const double* a, const double* b, double* c, size_t m,
                 size_t k, size_t n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt_s(const double* a, const double* b, double* c, size_t m,
                 size_t k, size_t n, bool accumulate) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      if (accumulate)
        crow[j] += acc;
      else
        crow[j] = acc;
    }
  }
}

void matmul_tn_s(const double* a, const double* b, double* c, size_t m,
                 size_t k, size_t n, bool accumulate) {
  // a is (K,M), c(i,j) = sum_k a(k,i) * b(k,j)
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * m;
    const double* brow = b + kk * n;
    for (size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

const Table kScalar = {
    "scalar", add_s,       sub_s,       mul_s,       scale_s,
    axpy_s,   dot_s,       sum_s,       matmul_nn_s, matmul_nt_s,
    matmul_tn_s,
};

}  // namespace m2f::kernels

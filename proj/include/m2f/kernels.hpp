#pragma once

#include <cstddef>
#include <string>

// Data-parallel fp64 inner loops. Every entry has a scalar reference
// implementation and (on x86-64) an AVX2/FMA variant; the active table is
// picked once at runtime and stays fixed for the process so repeated runs
// on the same machine are bitwise reproducible.
namespace m2f::kernels {

struct Table {
  const char* name;

  void (*add)(const double* a, const double* b, double* out, size_t n);
  void (*sub)(const double* a, const double* b, double* out, size_t n);
  void (*mul)(const double* a, const double* b, double* out, size_t n);
  void (*scale)(double alpha, const double* x, double* out, size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, size_t n);
  double (*dot)(const double* a, const double* b, size_t n);
  double (*sum)(const double* x, size_t n);

  // C(M,N) = A(M,K) * B(K,N)        [+= when accumulate]
  void (*matmul_nn)(const double* a, const double* b, double* c, size_t m,
                    size_t k, size_t n, bool accumulate);
  // C(M,N) = A(M,K) * B(N,K)^T
  void (*matmul_nt)(const double* a, const double* b, double* c, size_t m,
                    size_t k, size_t n, bool accumulate);
  // C(M,N) = A(K,M)^T * B(K,N)
  void (*matmul_tn)(const double* a, const double* b, double* c, size_t m,
                    size_t k, size_t n, bool accumulate);
};

enum class Backend { Auto, Scalar, Avx2 };

extern const Table kScalar;
#ifdef M2F_WITH_AVX2
extern const Table kAvx2;
#endif

// Active table; resolves Backend::Auto on first call.
const Table& active();
// Override the selection (tests, --kernels flag). Throws if unavailable.
void select(Backend b);
Backend selected();
bool avx2_available();
std::string backend_name();

}  // namespace m2f::kernels

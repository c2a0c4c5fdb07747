#include <stdexcept>

#include "m2f/kernels.hpp"

namespace m2f::kernels {
namespace {

Backend g_choice = Backend::Auto;
const Table* g_active = nullptr;

const Table* resolve(Backend b) {
#ifdef M2F_WITH_AVX2
  const bool have_avx2 =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  const bool have_avx2 = false;
#endif
  switch (b) {
    case Backend::Scalar:
      return &kScalar;
    case Backend::Avx2:
#ifdef M2F_WITH_AVX2
      if (have_avx2) return &kAvx2;
#endif
      throw std::runtime_error("kernels: avx2 backend not available on this cpu/build");
    case Backend::Auto:
    default:
#ifdef M2F_WITH_AVX2
      if (have_avx2) return &kAvx2;
#endif
      return &kScalar;
  }
}

}  // namespace

const Table& active() {
  if (!g_active) g_active = resolve(g_choice);
  return *g_active;
}

void select(Backend b) {
  g_active = resolve(b);
  g_choice = b;
}

Backend selected() { return g_choice; }

bool avx2_available() {
#ifdef M2F_WITH_AVX2
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::string backend_name() { return active().name; }

}  // namespace m2f::kernels

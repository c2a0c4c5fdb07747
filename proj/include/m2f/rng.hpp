#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace m2f {

// Deterministic splitmix64 stream. std::mt19937 + distributions are
// implementation-defined across standard libraries; every random draw in this
// codebase goes through this so seeds reproduce byte-identical outputs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 bits of mantissa.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + int(next_u64() % uint64_t(hi_inclusive - lo + 1));
  }

  // Box-Muller, no cached spare so the draw count stays predictable.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Derive an independent child stream; tag keeps sibling streams apart.
  Rng fork(uint64_t tag) const {
    Rng r(state_ ^ (tag * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

// FNV-1a, used to hash string tags (prompt tokens, clip ids) into seeds.
inline uint64_t hash64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace m2f

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace callseq {

// Deterministic random stream. The generator is std::mt19937_64, whose
// algorithm is fixed by the C++ standard; doubles are produced by an explicit
// 53-bit shift rather than std::uniform_real_distribution (whose mapping is
// implementation-defined), so identical seeds give identical value streams on
// every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double next_unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform index in [0, n). Modulo mapping; the bias is negligible for the
  // n used here and determinism is what matters.
  std::size_t next_index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

 private:
  std::mt19937_64 gen_;
};

// Fisher-Yates shuffle driven by Rng so the permutation is seed-stable.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = rng.next_index(i);
    std::swap(v[i - 1], v[j]);
  }
}

// splitmix64, used to derive independent per-record seeds from one root seed.
inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t salt) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace callseq

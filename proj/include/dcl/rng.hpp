#ifndef DCL_RNG_HPP
#define DCL_RNG_HPP

#include <cstdint>
#include <random>

namespace dcl {

/// Seeded generator whose draws do not depend on the standard library's
/// distribution implementations, so checkpoints match across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dcl

#endif  // DCL_RNG_HPP

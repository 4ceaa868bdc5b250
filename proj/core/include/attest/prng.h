#ifndef ATTEST_PRNG_H_
#define ATTEST_PRNG_H_

#include <cstdint>

namespace attest {

inline constexpr uint64_t kXorshiftMultiplier = 2685821657736338717ull;
// Golden-ratio increment used to decorrelate per-thread and per-SM seeds.
inline constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// xorshift64* (12, 25, 27). A zero state is remapped so the generator never
// sticks at zero.
class Xorshift64Star {
 public:
  explicit Xorshift64Star(uint64_t seed) : state_(seed ? seed : kGolden) {}

  static uint64_t Step(uint64_t x) {
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    return x;
  }

  uint64_t Next() {
    state_ = Step(state_);
    return state_ * kXorshiftMultiplier;
  }

  // Uniform in [0, bound) by rejection; bound must be non-zero.
  uint64_t Below(uint64_t bound) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t r;
    do {
      r = Next();
    } while (r >= limit);
    return r % bound;
  }

  double Uniform() { return static_cast<double>(Next() >> 11) * 0x1.0p-53; }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

}  // namespace attest

#endif  // ATTEST_PRNG_H_

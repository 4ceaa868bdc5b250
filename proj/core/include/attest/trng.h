#ifndef ATTEST_TRNG_H_
#define ATTEST_TRNG_H_

// Randomness from racing, unsynchronized counter updates on several cores,
// plus a small statistical battery.
//
// The racing workers are the only intentional data race in the library; the
// counter is a relaxed atomic so the race is on ordering, not on UB.

#include <cstdint>
#include <span>
#include <vector>

namespace attest::trng {

inline constexpr size_t kMinReportBytes = 1024;
inline constexpr size_t kConditionBlockBytes = 64;

// CPUs this process may run on (affinity mask), at least 1.
int AvailableParallelism();

// Pairs 01 -> 0, 10 -> 1; 00 and 11 are dropped. Bits are one per byte (0/1).
std::vector<uint8_t> VonNeumann(std::span<const uint8_t> bits);

// Packs debiased bits MSB-first and hashes every complete 64-byte block with
// SHA-256. A trailing partial block is dropped.
std::vector<uint8_t> Condition(std::span<const uint8_t> debiased_bits);

// Raw race bits from `workers` threads, at least `bits` of them.
std::vector<uint8_t> RawBits(int workers, size_t bits);

// `bytes` conditioned bytes. Throws kInsufficientParallelism when workers < 2
// or fewer than two CPUs are available to run them at the same time.
std::vector<uint8_t> Harvest(int workers, size_t bytes);

struct EntropyReport {
  double bits_per_byte = 0;  // Shannon estimate over the byte histogram
  double chi_square = 0;     // against uniform, 255 degrees of freedom
  double chi_square_p = 0;
  double monobit = 0;        // share of one bits
  double mean = 0;           // arithmetic mean of the bytes
  size_t bytes = 0;

  bool PassesMonobit(double tolerance = 0.01) const;
  bool PassesChiSquare(double alpha = 0.001) const;
};

// Upper tail of the chi-square distribution.
double ChiSquareSurvival(double statistic, double dof);

// Throws kSampleTooSmall below kMinReportBytes.
EntropyReport Report(std::span<const uint8_t> sample);

}  // namespace attest::trng

#endif  // ATTEST_TRNG_H_

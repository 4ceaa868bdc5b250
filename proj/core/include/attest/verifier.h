#ifndef ATTEST_VERIFIER_H_
#define ATTEST_VERIFIER_H_

// Challenge generation, timing calibration and accept/reject verdicts, plus a
// small harness that runs a VF image on the simulated device.

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "attest/crypto.h"
#include "attest/device.h"
#include "attest/vf.h"

namespace attest::verifier {

inline constexpr double kSigmaFactor = 2.5;
inline constexpr int kMinCalibrationRuns = 30;

enum class ThresholdMode : uint8_t { kNormal, kQuantile };

struct TimingModel {
  double t_avg = 0;
  double sigma = 0;  // sample standard deviation
  double threshold = 0;
  int runs = 0;
  ThresholdMode mode = ThresholdMode::kNormal;
};

// Normal mode: threshold = mean + 2.5 sigma. Quantile mode: the empirical
// `quantile` of the samples (nearest rank). Throws kConfigError below
// kMinCalibrationRuns samples.
TimingModel ModelFromSamples(std::span<const double> samples,
                             ThresholdMode mode = ThresholdMode::kNormal,
                             double quantile = 0.99379);

enum class Reason : uint8_t {
  kOk,
  kChecksumMismatch,
  kTimeout,
  kStaleNonce,
  kKernelHashMismatch,
};

std::string_view ReasonName(Reason reason);

struct Verdict {
  bool accepted = false;
  Reason reason = Reason::kOk;
  double measured = 0;
  uint64_t expected = 0;
  uint64_t received = 0;
};

// Accepted iff response == expected and elapsed <= threshold. A wrong value
// is reported ahead of a late one.
Verdict Verify(uint64_t response, double elapsed, uint64_t expected,
               const TimingModel& model);

// (1 - 1/S)^N evaluated as exp(N log1p(-1/S)) in long double.
long double InclusionProbability(uint64_t words, uint64_t accesses);

// Seeded challenge stream. Nonces are unique over the generator's lifetime.
class ChallengeGenerator {
 public:
  explicit ChallengeGenerator(uint64_t seed) : rng_(seed) {}

  vf::Challenge Next(int num_sms, uint32_t iterations);
  size_t issued() const { return nonces_.size(); }

 private:
  crypto::Csprng rng_;
  std::unordered_set<uint64_t> nonces_;
};

// Single-owner verifier state: outstanding challenge and consumed nonces.
class Session {
 public:
  Session(uint64_t seed, TimingModel model) : gen_(seed), model_(model) {}

  const vf::Challenge& Issue(int num_sms, uint32_t iterations);

  // Checks a response bound to `nonce`. A nonce that is not the outstanding
  // one, or was already answered, yields kStaleNonce.
  Verdict Check(uint64_t nonce, uint64_t response, double elapsed, uint64_t expected);

  const TimingModel& model() const { return model_; }
  const vf::Challenge& outstanding() const { return current_; }

 private:
  ChallengeGenerator gen_;
  TimingModel model_;
  vf::Challenge current_;
  bool open_ = false;
  std::unordered_set<uint64_t> answered_;
};

// --- device harness -----------------------------------------------------------

struct Platform {
  device::DeviceConfig device;
  device::LaunchConfig launch;

  vf::Topology topology() const {
    return {launch.warps_per_sm, device.warp_size, launch.warps_per_block};
  }
};

struct Measurement {
  uint64_t checksum = 0;
  uint64_t cycles = 0;
  uint64_t result_cycles = 0;  // last checksum store
  device::RunResult run;
};

// Hook applied to the loaded machine before the run (adversary setup).
using Prepare = std::function<void(device::Machine&)>;
// Read-only look at device memory after the run.
using Inspect = std::function<void(const device::Machine&)>;

// Runs `image` (already bound to the challenge's iteration count).
Measurement Measure(const isa::Image& image, const vf::Challenge& challenge,
                    const Platform& platform, const device::RunOptions& options,
                    const Prepare& prepare = {}, const Inspect& inspect = {});

struct Calibration {
  TimingModel model;
  std::vector<double> samples;
};

// `runs` honest runs with fresh challenges of `iterations` each; jitter seeds
// are derived from `seed`. Every run's checksum is checked against the
// reference.
Calibration Calibrate(const vf::VFImage& vf, const Platform& platform, int runs,
                      uint32_t iterations, uint64_t seed, bool jitter,
                      ThresholdMode mode = ThresholdMode::kNormal);

}  // namespace attest::verifier

#endif  // ATTEST_VERIFIER_H_

#include "attest/verifier.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "attest/error.h"

namespace attest::verifier {

TimingModel ModelFromSamples(std::span<const double> samples, ThresholdMode mode,
                             double quantile) {
  const size_t n = samples.size();
  if (n < static_cast<size_t>(kMinCalibrationRuns)) {
    throw Error(ErrorCode::kConfigError, "calibration needs at least 30 runs",
                static_cast<int64_t>(n));
  }
  TimingModel m;
  m.runs = static_cast<int>(n);
  m.mode = mode;
  // Two-pass mean and variance in long double.
  long double sum = 0;
  for (double s : samples) sum += s;
  const long double mean = sum / n;
  long double ss = 0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  m.t_avg = static_cast<double>(mean);
  m.sigma = static_cast<double>(std::sqrt(ss / (n - 1)));
  if (mode == ThresholdMode::kNormal) {
    m.threshold = m.t_avg + kSigmaFactor * m.sigma;
  } else {
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const size_t rank = static_cast<size_t>(std::ceil(quantile * n));
    m.threshold = sorted[std::clamp<size_t>(rank, 1, n) - 1];
  }
  return m;
}

std::string_view ReasonName(Reason reason) {
  switch (reason) {
    case Reason::kOk: return "ok";
    case Reason::kChecksumMismatch: return "checksum_mismatch";
    case Reason::kTimeout: return "timeout";
    case Reason::kStaleNonce: return "stale_nonce";
    case Reason::kKernelHashMismatch: return "kernel_hash_mismatch";
  }
  return "?";
}

Verdict Verify(uint64_t response, double elapsed, uint64_t expected,
               const TimingModel& model) {
  Verdict v;
  v.measured = elapsed;
  v.expected = expected;
  v.received = response;
  if (response != expected) {
    v.reason = Reason::kChecksumMismatch;
  } else if (elapsed > model.threshold) {
    v.reason = Reason::kTimeout;
  } else {
    v.accepted = true;
  }
  return v;
}

long double InclusionProbability(uint64_t words, uint64_t accesses) {
  if (accesses == 0) return 1.0L;
  if (words <= 1) return 0.0L;
  return std::exp(static_cast<long double>(accesses) *
                  std::log1p(-1.0L / static_cast<long double>(words)));
}

vf::Challenge ChallengeGenerator::Next(int num_sms, uint32_t iterations) {
  vf::Challenge ch;
  ch.iterations = iterations;
  ch.seeds.resize(static_cast<size_t>(num_sms));
  for (auto& s : ch.seeds) s = rng_.NextU64();
  do {
    ch.nonce = rng_.NextU64();
  } while (!nonces_.insert(ch.nonce).second);
  return ch;
}

const vf::Challenge& Session::Issue(int num_sms, uint32_t iterations) {
  current_ = gen_.Next(num_sms, iterations);
  open_ = true;
  return current_;
}

Verdict Session::Check(uint64_t nonce, uint64_t response, double elapsed,
                       uint64_t expected) {
  if (!open_ || nonce != current_.nonce || answered_.contains(nonce)) {
    Verdict v;
    v.reason = Reason::kStaleNonce;
    v.measured = elapsed;
    v.expected = expected;
    v.received = response;
    return v;
  }
  answered_.insert(nonce);
  open_ = false;
  return Verify(response, elapsed, expected, model_);
}

Measurement Measure(const isa::Image& image, const vf::Challenge& challenge,
                    const Platform& platform, const device::RunOptions& options,
                    const Prepare& prepare, const Inspect& inspect) {
  device::Machine machine(image, platform.device, platform.launch);
  if (prepare) prepare(machine);
  Measurement m;
  m.run = machine.Run(challenge.seeds, options);
  m.checksum = m.run.checksum();
  m.cycles = m.run.total_cycles;
  m.result_cycles = m.run.result_cycles;
  if (inspect) inspect(machine);
  return m;
}

Calibration Calibrate(const vf::VFImage& vf, const Platform& platform, int runs,
                      uint32_t iterations, uint64_t seed, bool jitter,
                      ThresholdMode mode) {
  ChallengeGenerator gen(seed);
  const isa::Image image = vf::BindIterations(vf, iterations);
  const vf::Topology topo = platform.topology();
  Calibration out;
  for (int r = 0; r < runs; ++r) {
    const vf::Challenge ch = gen.Next(platform.device.num_sms, iterations);
    device::RunOptions opts;
    opts.jitter = jitter;
    opts.jitter_seed = ch.nonce;
    const Measurement m = Measure(image, ch, platform, opts);
    if (m.checksum != vf::ChecksumReference(vf, ch, topo)) {
      throw std::logic_error("honest calibration run disagrees with the reference");
    }
    out.samples.push_back(static_cast<double>(m.cycles));
  }
  out.model = ModelFromSamples(out.samples, mode);
  return out;
}

}  // namespace attest::verifier

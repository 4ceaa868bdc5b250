#ifndef ATTEST_ADVERSARY_H_
#define ATTEST_ADVERSARY_H_

// Attacks as program, memory or channel transformations, and their
// evaluation against a calibrated verifier.
//
// Attacks that must execute different code while keeping the measured
// buffer pristine run an altered copy of the VF placed in scratch memory
// ("executed copy"); every address-bearing immediate is relocated and the
// copy ends with a branch to the halt word.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "attest/verifier.h"
#include "attest/vf.h"

namespace attest::adversary {

enum class Variant : uint8_t {
  kNopInject,
  kMemcopyB,
  kMemcopyC,
  kMemcopyD,
  kDataSubstitution,
  kProxy,
  kParallelTakeover,
  kToctouSwap,
  kPrecomputeReplay,
};

std::string_view VariantName(Variant v);
// Accepts the names above (e.g. "nop", "nop_inject", "memcopy_b"). Throws
// kConfigError.
Variant VariantFromName(std::string_view name);

struct AttackSpec {
  Variant variant = Variant::kNopInject;
  uint32_t count = 1;                 // nop_inject
  std::vector<uint32_t> words;        // data_substitution: modified word indices
  double latency = 1000;              // proxy, cycles each way
  int warps = 1;                      // parallel_takeover
  uint32_t takeover_iterations = 0;   // 0: run for about the VF's length
};

// Instructions a data_substitution shim adds in front of every load per
// modified word: xor with the target, decrement, shift out the sign, and a
// multiply-add of the redirect distance.
inline constexpr uint32_t kShimInstructionsPerWord = 4;

struct AttackedSetup {
  isa::Image image;              // what gets loaded into every partition
  device::LaunchConfig launch;
  verifier::Prepare prepare;     // memory edits after loading
  double channel_latency = 0;    // added each way
  uint32_t executed_body = 0;    // loop-body instructions actually executed
  bool replay = false;
};

// `bound` is BindIterations(vf, challenge.iterations). Throws kUnsupported
// for contradictory parameters or a variant the layout cannot host.
AttackedSetup ApplyAttack(const vf::VFImage& vf, const isa::Image& bound,
                          const verifier::Platform& platform, uint32_t iterations,
                          const AttackSpec& spec);

struct DetectionReport {
  AttackSpec attack;
  uint64_t honest_cycles = 0;
  uint64_t attacked_cycles = 0;
  double overhead_per_iteration = 0;
  bool checksum_correct = false;
  verifier::Verdict honest;
  verifier::Verdict verdict;
  bool detected() const { return !verdict.accepted; }
};

// One trial: a fresh challenge from a session seeded with `seed`, an honest
// run and an attacked run under the same jitter stream, both judged by
// `model`.
DetectionReport Evaluate(const vf::VFImage& vf, const verifier::Platform& platform,
                         const verifier::TimingModel& model, uint32_t iterations,
                         const AttackSpec& spec, uint64_t seed, bool jitter = true);

std::string ReportJson(const DetectionReport& r);

}  // namespace attest::adversary

#endif  // ATTEST_ADVERSARY_H_

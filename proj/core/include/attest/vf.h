#ifndef ATTEST_VF_H_
#define ATTEST_VF_H_

// Verification-function generator and the verifier-side reference checksum.
//
// Per-thread register map of the generated program:
//
//   R0        running checksum C
//   R1        iteration counter (counts down)
//   R2        data pointer DP
//   R3        loaded data word (block index at launch)
//   R4..R25   accumulators A0..A21
//   R26       word-index mask W - 1
//   R27       code address of this thread block's self-modify site
//   R28       patch value N (init scratch)
//   R29       init scratch, then the site address counted from DP
//   R30       init scratch, inner-loop counter
//   R31       load address
//
// Each loop block consumes the word loaded by the previous block, derives a
// new address from C, folds DP, the counter and all accumulators into C, and
// interleaves shift-and-add accumulator updates on the FMA and ALU pipes.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attest/image.h"

namespace attest::vf {

inline constexpr int kAccumulators = 22;
inline constexpr int kMaxSites = 32;
inline constexpr int kSiteWords = 2;

struct VFParams {
  uint32_t buffer_bytes = 524288;  // power of two
  uint32_t body_instructions = 428;
  uint32_t unroll = 1;
  uint32_t iterations = 100000;
  bool self_modifying = false;
  uint32_t inner_iterations = 0;
  uint32_t inner_instructions = 0;
  // Cache size the self-modifying body must overflow.
  uint32_t icache_bytes = 131072;

  // Throws kLayoutOverflow or kConfigError.
  void Validate() const;
  bool operator==(const VFParams&) const = default;
};

VFParams ParamsFromJson(std::string_view text);
std::string ParamsToJson(const VFParams& params);

// One semantic step of the checksum loop, in program order.
struct Step {
  enum class Kind : uint8_t {
    kConsume,    // C += L
    kAddress,    // T = DP + 4 * (C mod W)
    kLoad,       // L = mem32[T]
    kFoldAcc,    // C ^= A[a]
    kFoldDp,     // C += DP
    kFoldIter,   // C ^= iter
    kDecIter,    // iter -= 1
    kPatchValue, // N = C mod 32
    kImadAcc,    // A[a] = A[a] * 2^s + A[b]
    kLeaAcc,     // A[a] = (A[a] >> s) + A[b]
  };
  Kind kind;
  uint8_t a = 0;
  uint8_t b = 0;
  uint8_t s = 0;
};

// Where things live in the generated code. Word indices are absolute.
struct Layout {
  uint32_t entry = 0;
  uint32_t site_base = 0;      // first site word; sites are kSiteWords apart
  uint32_t num_sites = 0;
  uint32_t iterations_word = 0;
  uint32_t loop_begin = 0;     // first loop-body word (branch target)
  uint32_t loop_end = 0;       // one past the loop's closing branch
  uint32_t site_return = 0;    // first word after the indirect site jump
  uint32_t patch_store = 0;    // the STC word, self-modifying only
  uint32_t epilog = 0;
  uint32_t result_store = 0;   // the ATOM_ADD word
  // Words whose immediate is a code address and must follow relocation.
  std::vector<uint32_t> address_words;
  // Per loop block: [begin, end) word ranges and the word of its LDG.
  std::vector<std::pair<uint32_t, uint32_t>> blocks;
  std::vector<uint32_t> loads;

  std::vector<Step> steps;        // per iteration, before the inner loop
  std::vector<Step> inner_steps;  // repeated inner_iterations times
  uint32_t inner_iterations = 0;

  uint32_t body_instructions() const { return loop_end - loop_begin; }
};

struct VFImage {
  VFParams params;
  isa::Image image;
  Layout layout;
};

// Deterministic in (params, fill_seed). Throws kLayoutOverflow when the body
// cannot hold a block's address chain and fold, or the code does not fit.
VFImage BuildVf(const VFParams& params, uint64_t fill_seed);

// Inserts `words` before word `at`, shifting later code, keeping every
// address-bearing immediate and layout index consistent. Code must still fit
// the buffer; the fill tail is shifted and truncated.
void InsertCode(VFImage& vf, uint32_t at, std::span<const isa::Instruction> words);

// Copy of the image with the iteration count patched in.
isa::Image BindIterations(const VFImage& vf, uint32_t iterations);

struct Challenge {
  std::vector<uint64_t> seeds;  // one per SM
  uint32_t iterations = 1;
  uint64_t nonce = 0;
};

struct Topology {
  int warps_per_sm = 2;
  int warp_size = 4;
  int warps_per_block = 1;

  int threads_per_sm() const { return warps_per_sm * warp_size; }
  int blocks_per_sm() const { return warps_per_sm / warps_per_block; }
};

struct ReferenceResult {
  uint64_t checksum = 0;               // wrap-around sum over SMs
  std::vector<uint64_t> sm_checksums;
  std::vector<uint64_t> thread_values; // final C, SM-major
  std::vector<uint32_t> patch_values;  // every N written, SM-major, in order
};

// Pure reference for an honest device run of BindIterations(vf, I) with the
// data pointer at `dp`. Throws kShapeMismatch on an invalid topology.
ReferenceResult ComputeReference(const VFImage& vf, const Challenge& challenge,
                                 const Topology& topology, uint64_t dp);
uint64_t ChecksumReference(const VFImage& vf, const Challenge& challenge,
                           const Topology& topology);

struct Shape {
  int warp_size = 32;
  int warps_per_block = 1;
  int blocks = 1;
};

// Pairwise tree sum within each warp, then over the warps of a block, then
// over blocks. Throws kShapeMismatch when the length is not the thread count.
uint64_t Aggregate(std::span<const uint64_t> per_thread, const Shape& shape);

inline uint32_t SelfModifyImmediate(uint64_t c) {
  return static_cast<uint32_t>(c & 31);
}

// Assembly listing of the code region, one instruction per line.
std::string DumpAsm(const VFImage& vf);

}  // namespace attest::vf

#endif  // ATTEST_VF_H_

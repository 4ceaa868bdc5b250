#ifndef ATTEST_DEVICE_H_
#define ATTEST_DEVICE_H_

// Deterministic cycle-counting simulator of a many-SM accelerator.
//
// Every SM owns a private memory partition laid out as
//
//   [0, B)            VF buffer (code words followed by fill)
//   [B, B + 64)       result slot
//   [B + 64, ...)     scratch
//
// mapped at kDataBase. Code addresses are 16-byte word indices into the same
// partition, so code and data are two views of the same bytes.
//
// Launch ABI: R0 = per-SM seed, R1 = thread index within the SM, R2 = data
// pointer, R3 = thread-block index within the SM, P0 set on the first lane
// of every thread block. A warp halts when its PC reaches the image's code
// word count.

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attest/image.h"

namespace attest::device {

inline constexpr uint64_t kDataBase = 0x10000000;
inline constexpr uint32_t kResultSlotBytes = 64;

struct DeviceConfig {
  int num_sms = 108;
  int max_warps_per_sm = 64;
  int warp_size = 32;
  int sched_width = 4;
  int regs_per_sm = 65536;
  int regs_per_thread = 32;
  int fma_dispatch_latency = 2;
  int alu_dispatch_latency = 2;
  int raw_dependency_latency = 4;
  int global_mem_latency = 250;
  int register_access_latency = 4;
  int shared_mem_latency = 30;
  // Exposed for completeness; the fetch model is a single L2-level cache.
  int l0_icache_words = 1024;
  int l2_icache_bytes = 131072;
  int icache_line_bytes = 128;
  int icache_fetch_penalty = 6;
  uint32_t scratch_bytes = 1u << 20;
  uint64_t cycle_budget = 1000000000ull;

  // Throws kConfigError naming the first offending field.
  void Validate() const;
};

struct LaunchConfig {
  int warps_per_sm = 64;
  int warps_per_block = 32;
  int regs_requested = 32;
  std::optional<uint32_t> entry;  // defaults to the image entry
  int64_t dp_offset = 0;          // R2 = kDataBase + dp_offset
  // Extra warps appended after the launched ones, starting at their own
  // entry. They do not take part in BAR_SYNC.
  int extra_warps = 0;
  uint32_t extra_entry = 0;
};

struct RunOptions {
  bool jitter = false;  // per-LDG latency uniform in [L, 2L]
  uint64_t jitter_seed = 0;
};

enum class StallCause : uint8_t { kNone, kIcache, kMemory, kPipeline };

// Empty issue slots partitioned by cause.
struct StallBreakdown {
  uint64_t icache = 0;
  uint64_t memory = 0;
  uint64_t pipeline = 0;
  uint64_t none = 0;

  uint64_t total() const { return icache + memory + pipeline + none; }
  void Add(StallCause cause, uint64_t cycles);
  StallBreakdown& operator+=(const StallBreakdown& o);
  bool operator==(const StallBreakdown&) const = default;
};

struct RunResult {
  std::vector<uint64_t> sm_results;  // result slot of every SM
  std::vector<uint64_t> sm_cycles;
  uint64_t total_cycles = 0;
  // Cycle at which the last ATOM_ADD completed, per SM and the maximum. Times
  // the VF alone when a kernel runs after it.
  std::vector<uint64_t> sm_result_cycles;
  uint64_t result_cycles = 0;
  uint64_t issued = 0;
  uint64_t issue_slots = 0;  // cycles x active schedulers, summed over SMs
  StallBreakdown stalls;
  std::vector<StallBreakdown> per_warp;  // SM-major, warp-minor

  // Wrap-around sum of all SM result slots.
  uint64_t checksum() const;
  double utilization() const;
};

struct StallRow {
  std::string cause;
  uint64_t cycles;
  double share;
};

// Rows for icache, memory, pipeline and none; shares sum to 1 when any stall
// cycles exist.
std::vector<StallRow> StallReport(const RunResult& result);

class Machine {
 public:
  // Loads the image into every SM partition and warms each instruction cache
  // with the leading code lines. Throws kImageTooLarge, kConfigError.
  Machine(const isa::Image& image, const DeviceConfig& config,
          const LaunchConfig& launch);

  // Patches the 32-bit immediate of code word `addr` in every partition. The
  // cached decoding stays in effect until the line is evicted or ICINV runs.
  void WriteCode(uint32_t addr, uint32_t value);

  // Runs all SMs to completion. sm_seeds must hold one seed per SM.
  // Throws kTrap (detail = pc) and kNonTermination.
  RunResult Run(std::span<const uint64_t> sm_seeds, const RunOptions& options);

  std::span<uint8_t> memory(int sm) { return memory_[sm]; }
  std::span<const uint8_t> memory(int sm) const { return memory_[sm]; }
  uint32_t code_words() const { return code_words_; }
  uint32_t buffer_bytes() const { return buffer_bytes_; }
  uint32_t partition_bytes() const { return partition_bytes_; }
  uint32_t scratch_offset() const { return buffer_bytes_ + kResultSlotBytes; }
  const DeviceConfig& config() const { return config_; }
  const LaunchConfig& launch() const { return launch_; }

 private:
  struct SmOutcome {
    uint64_t cycles = 0;
    uint64_t slots = 0;
    uint64_t issued = 0;
    StallBreakdown stalls;
    std::vector<StallBreakdown> per_warp;
    uint64_t result_cycle = 0;
  };

  template <int kLanes>
  SmOutcome Simulate(int sm, uint64_t seed, const RunOptions& options);

  DeviceConfig config_;
  LaunchConfig launch_;
  uint32_t entry_;
  uint32_t code_words_;
  uint32_t buffer_bytes_;
  uint32_t partition_bytes_;
  std::vector<std::vector<uint8_t>> memory_;
  // Lines resident after loading, in FIFO order, with the words they held at
  // load time. Shared by all SMs.
  std::vector<uint32_t> warm_lines_;
  std::vector<isa::Word128> warm_words_;
};

}  // namespace attest::device

#endif  // ATTEST_DEVICE_H_

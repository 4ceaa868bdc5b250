#ifndef ATTEST_EXPERIMENT_H_
#define ATTEST_EXPERIMENT_H_

// Built-in profiles, JSON configuration and the experiment runners behind the
// command line tool.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "attest/adversary.h"
#include "attest/verifier.h"
#include "attest/vf.h"

namespace attest::experiment {

inline constexpr int kSchemaVersion = 1;

struct Profile {
  std::string name;
  vf::VFParams vf;
  verifier::Platform platform;
  int calibration_runs = 100;
  bool jitter = true;
  uint64_t fill_seed = 1;
  std::vector<adversary::AttackSpec> attacks;  // run by default with the profile
};

// exp1..exp4 are the four reference workloads on the reduced device; exp3s
// is exp3 with 100 iterations; quick is a 1,000-iteration exp1 for smoke
// runs. Throws kConfigError for other names.
Profile BuiltinProfile(std::string_view name);
std::vector<std::string> BuiltinProfileNames();

// Reduced device used by every built-in profile: 1 SM, 2 warps of 4 threads,
// one scheduler.
verifier::Platform DeskPlatform();

// {"base": name, "name", "vf": {...}, "device": {...}, "launch": {...},
//  "calibration_runs", "jitter", "fill_seed"}. Fields override the base
// profile (default exp1). Throws kConfigError.
Profile ProfileFromJson(std::string_view text);
std::string ProfileToJson(const Profile& profile);

// A built-in name or a path to a profile JSON file.
Profile LoadProfile(const std::string& name_or_path);

adversary::AttackSpec AttackFromJson(const std::string& text);

enum class Clock : uint8_t { kTotal, kResult };

struct AttackPlan {
  adversary::AttackSpec spec;
  int trials = 1;
};

struct ExperimentConfig {
  Profile profile;
  int runs = 10;
  uint64_t seed = 1;
  bool jitter = true;
  Clock clock = Clock::kTotal;
  int workers = 1;
  std::vector<AttackPlan> attacks;
  std::filesystem::path csv;
  std::filesystem::path json;
};

// Relative paths resolve against `base_dir`. Throws kConfigError naming the
// offending field, and for referenced files that do not exist.
ExperimentConfig ConfigFromJson(std::string_view text,
                                const std::filesystem::path& base_dir = ".");

struct RunRow {
  int run = 0;
  uint64_t cycles = 0;
  uint64_t checksum = 0;
  verifier::Verdict verdict;
};

struct AttackSummary {
  adversary::AttackSpec spec;
  int trials = 0;
  int detected = 0;
  int honest_accepted = 0;
  double mean_overhead_per_iteration = 0;
  adversary::DetectionReport last;
};

struct ExperimentResult {
  std::string profile;
  verifier::TimingModel model;
  std::vector<RunRow> rows;
  double utilization = 0;  // useful issue slots / all slots over the runs
  device::StallBreakdown stalls;
  std::vector<AttackSummary> attacks;

  int accepted() const;
};

// Calibrates, runs `runs` verifications and the attack plans. Runs go to a
// pool of `workers` threads; rows are ordered by run index.
ExperimentResult RunExperiment(const ExperimentConfig& config);

// One row per run plus a summary row. Byte-identical for identical inputs.
std::string ToCsv(const ExperimentResult& result);
std::string ToJson(const ExperimentResult& result);

// --- user kernel ----------------------------------------------------------------

struct KernelBenchRow {
  std::string name;
  uint32_t kernel_iterations = 0;
  uint64_t baseline = 0;      // kernel alone
  uint64_t verification = 0;  // VF with the kernel replaced by a halt
  uint64_t attested = 0;      // VF then kernel, minus the verification run
  double deviation() const;   // (attested - baseline) / baseline, 0 for no kernel
};

// Toy kernel (8 IMAD/LEA_HI pairs per iteration) entered from the VF epilog.
KernelBenchRow RunKernelBench(const Profile& profile, const std::string& name,
                              uint32_t kernel_iterations, uint64_t seed);

// Iteration count whose kernel-alone run takes about `cycles` on `platform`.
uint32_t KernelIterationsFor(const Profile& profile, uint64_t cycles);

std::string KernelBenchJson(const std::vector<KernelBenchRow>& rows);

}  // namespace attest::experiment

#endif  // ATTEST_EXPERIMENT_H_

#include "attest/adversary.h"

#include <gtest/gtest.h>

#include <json.hpp>

#include "attest/error.h"
#include "attest/userkernel.h"

namespace attest::adversary {
namespace {

using verifier::Platform;
using verifier::Reason;

constexpr uint32_t kIters = 20;

Platform Desk(uint32_t icache = 131072) {
  Platform p;
  p.device.num_sms = 1;
  p.device.warp_size = 2;
  p.device.sched_width = 1;
  p.device.scratch_bytes = 65536;
  p.device.l2_icache_bytes = static_cast<int>(icache);
  p.launch.warps_per_sm = 2;
  p.launch.warps_per_block = 1;
  p.device.max_warps_per_sm = 4;
  return p;
}

vf::VFImage Plain(uint32_t body = 428) {
  vf::VFParams params;
  params.buffer_bytes = 16384;
  params.body_instructions = body;
  params.iterations = kIters;
  return vf::BuildVf(params, 11);
}

vf::VFImage SelfMod() {
  vf::VFParams params;
  params.buffer_bytes = 16384;
  params.body_instructions = 300;
  params.iterations = kIters;
  params.self_modifying = true;
  params.icache_bytes = 4096;
  return vf::BuildVf(params, 11);
}

struct Fixture {
  vf::VFImage vf;
  Platform platform;
  verifier::TimingModel model;

  Fixture(vf::VFImage v, Platform p) : vf(std::move(v)), platform(p) {
    model = verifier::Calibrate(vf, platform, 30, kIters, 5, false).model;
  }

  DetectionReport Run(const AttackSpec& spec, uint64_t seed = 77) const {
    return Evaluate(vf, platform, model, kIters, spec, seed, false);
  }
};

const Fixture& PlainRig() {
  static const Fixture f(Plain(), Desk());
  return f;
}

const Fixture& SelfModRig() {
  static const Fixture f(SelfMod(), Desk(4096));
  return f;
}

AttackSpec Spec(Variant v) {
  AttackSpec s;
  s.variant = v;
  return s;
}

TEST(Adversary, VariantNamesRoundTrip) {
  for (Variant v : {Variant::kNopInject, Variant::kMemcopyB, Variant::kMemcopyC,
                    Variant::kMemcopyD, Variant::kDataSubstitution, Variant::kProxy,
                    Variant::kParallelTakeover, Variant::kToctouSwap,
                    Variant::kPrecomputeReplay}) {
    EXPECT_EQ(VariantFromName(VariantName(v)), v);
  }
  EXPECT_EQ(VariantFromName("nop"), Variant::kNopInject);
  try {
    VariantFromName("rowhammer");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigError);
  }
}

TEST(Adversary, HonestRunIsAccepted) {
  const DetectionReport r = PlainRig().Run(Spec(Variant::kMemcopyB));
  EXPECT_TRUE(r.honest.accepted);
}

TEST(Adversary, NopInjectGrowsBodyByOne) {
  const Fixture& f = PlainRig();
  const isa::Image bound = vf::BindIterations(f.vf, kIters);
  const AttackedSetup s = ApplyAttack(f.vf, bound, f.platform, kIters, Spec(Variant::kNopInject));
  EXPECT_EQ(f.vf.layout.body_instructions(), 428u);
  EXPECT_EQ(s.executed_body, 429u);
  EXPECT_EQ(s.image, bound);
}

TEST(Adversary, NopOverheadIsMonotoneAndDetected) {
  const Fixture& f = PlainRig();
  double last = 0;
  for (uint32_t k : {1u, 2u, 4u, 8u}) {
    AttackSpec s = Spec(Variant::kNopInject);
    s.count = k;
    const DetectionReport r = f.Run(s);
    EXPECT_TRUE(r.checksum_correct) << k;
    EXPECT_TRUE(r.detected()) << k;
    EXPECT_EQ(r.verdict.reason, Reason::kTimeout);
    // Each NOP takes an issue slot in every warp on a one-wide scheduler.
    EXPECT_GE(r.overhead_per_iteration, static_cast<double>(k)) << k;
    EXPECT_GT(r.overhead_per_iteration, last) << k;
    last = r.overhead_per_iteration;
  }
}

TEST(Adversary, MemcopyBKeepsChecksumButIsSlow) {
  const DetectionReport r = PlainRig().Run(Spec(Variant::kMemcopyB));
  EXPECT_TRUE(r.checksum_correct);
  EXPECT_GT(r.attacked_cycles, r.honest_cycles);
  EXPECT_EQ(r.verdict.reason, Reason::kTimeout);
}

TEST(Adversary, MemcopyBSelfModifyingKeepsChecksum) {
  const DetectionReport r = SelfModRig().Run(Spec(Variant::kMemcopyB));
  EXPECT_TRUE(r.honest.accepted);
  EXPECT_TRUE(r.checksum_correct);
  EXPECT_TRUE(r.detected());
}

TEST(Adversary, DataSubstitutionShimsEveryLoad) {
  const Fixture& f = PlainRig();
  AttackSpec s = Spec(Variant::kDataSubstitution);
  s.words = {f.vf.image.code_words * 4 + 10, f.vf.image.code_words * 4 + 99};
  const isa::Image bound = vf::BindIterations(f.vf, kIters);
  const AttackedSetup a = ApplyAttack(f.vf, bound, f.platform, kIters, s);
  const uint32_t loads = static_cast<uint32_t>(f.vf.layout.loads.size());
  EXPECT_EQ(a.executed_body - f.vf.layout.body_instructions(),
            loads * kShimInstructionsPerWord * 2);
  EXPECT_GE(a.executed_body - f.vf.layout.body_instructions(), 2 * loads);
  EXPECT_NE(a.image, bound);

  const DetectionReport r = f.Run(s);
  EXPECT_TRUE(r.checksum_correct);
  EXPECT_TRUE(r.detected());
  EXPECT_GE(r.overhead_per_iteration, 2.0 * loads);
}

TEST(Adversary, DataSubstitutionWithoutShimIsWrong) {
  // Sanity check on the shim: flipping the words and running the VF as is
  // changes the checksum whenever a flipped word gets loaded.
  const Fixture& f = PlainRig();
  isa::Image bad = vf::BindIterations(f.vf, kIters);
  for (size_t i = f.vf.image.code_words * isa::kWordBytes; i < bad.buffer.size(); ++i) {
    bad.buffer[i] ^= 0xFF;
  }
  verifier::ChallengeGenerator gen(3);
  const vf::Challenge ch = gen.Next(1, kIters);
  const auto m = verifier::Measure(bad, ch, f.platform, {});
  EXPECT_NE(m.checksum, vf::ChecksumReference(f.vf, ch, f.platform.topology()));
}

TEST(Adversary, DataSubstitutionRejectsBadWordSets) {
  const Fixture& f = PlainRig();
  const isa::Image bound = vf::BindIterations(f.vf, kIters);
  AttackSpec s = Spec(Variant::kDataSubstitution);
  EXPECT_THROW(ApplyAttack(f.vf, bound, f.platform, kIters, s), Error);
  s.words = {16384 / 4};
  EXPECT_THROW(ApplyAttack(f.vf, bound, f.platform, kIters, s), Error);

  const Fixture& g = SelfModRig();
  const isa::Image sbound = vf::BindIterations(g.vf, kIters);
  s.words = {1};
  try {
    ApplyAttack(g.vf, sbound, g.platform, kIters, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupported);
  }
}

TEST(Adversary, MemcopyCAndDBreakSelfModifyingChecksum) {
  for (Variant v : {Variant::kMemcopyC, Variant::kMemcopyD}) {
    const DetectionReport r = SelfModRig().Run(Spec(v));
    EXPECT_FALSE(r.checksum_correct) << VariantName(v);
    EXPECT_EQ(r.verdict.reason, Reason::kChecksumMismatch) << VariantName(v);
  }
}

TEST(Adversary, MemcopyCAndDKeepPlainChecksum) {
  for (Variant v : {Variant::kMemcopyC, Variant::kMemcopyD}) {
    const DetectionReport r = PlainRig().Run(Spec(v));
    EXPECT_TRUE(r.checksum_correct) << VariantName(v);
    RecordProperty(std::string(VariantName(v)) + "_overhead",
                   std::to_string(r.overhead_per_iteration));
  }
}

TEST(Adversary, ProxyLatencyTimesOut) {
  AttackSpec s = Spec(Variant::kProxy);
  s.latency = 1000;
  const DetectionReport r = PlainRig().Run(s);
  EXPECT_TRUE(r.checksum_correct);
  EXPECT_EQ(r.attacked_cycles, r.honest_cycles);
  EXPECT_DOUBLE_EQ(r.verdict.measured, static_cast<double>(r.honest_cycles) + 2000);
  EXPECT_EQ(r.verdict.reason, Reason::kTimeout);
}

TEST(Adversary, ParallelTakeoverSlowsTheVf) {
  AttackSpec s = Spec(Variant::kParallelTakeover);
  s.warps = 1;
  const DetectionReport r = PlainRig().Run(s);
  EXPECT_TRUE(r.checksum_correct);
  EXPECT_GT(r.attacked_cycles, r.honest_cycles);
  EXPECT_EQ(r.verdict.reason, Reason::kTimeout);

  s.warps = 3;
  const Fixture& f = PlainRig();
  EXPECT_THROW(ApplyAttack(f.vf, vf::BindIterations(f.vf, kIters), f.platform, kIters, s),
               Error);
}

TEST(Adversary, ToctouSwapFailsKernelHash) {
  const DetectionReport r = PlainRig().Run(Spec(Variant::kToctouSwap));
  EXPECT_TRUE(r.honest.accepted);
  EXPECT_TRUE(r.checksum_correct);
  EXPECT_EQ(r.verdict.reason, Reason::kKernelHashMismatch);
  EXPECT_TRUE(r.detected());
}

TEST(Adversary, ReplayIsStale) {
  const DetectionReport r = PlainRig().Run(Spec(Variant::kPrecomputeReplay));
  EXPECT_TRUE(r.honest.accepted);
  EXPECT_EQ(r.verdict.reason, Reason::kStaleNonce);
}

TEST(Adversary, ReportJsonCarriesVerdict) {
  AttackSpec s = Spec(Variant::kNopInject);
  s.count = 3;
  const auto j = nlohmann::json::parse(ReportJson(PlainRig().Run(s)));
  EXPECT_EQ(j["variant"], "nop_inject");
  EXPECT_EQ(j["count"], 3);
  EXPECT_EQ(j["reason"], "timeout");
  EXPECT_EQ(j["detected"], true);
}

// --- user kernels -------------------------------------------------------------

TEST(UserKernel, ScratchWordIsLineAligned) {
  EXPECT_EQ(userkernel::ScratchWord(16384), (16384u + 128) / 16);
  EXPECT_EQ(userkernel::ScratchWord(16384) * 16 % 128, 0u);
  EXPECT_EQ(userkernel::ScratchWord(1000, 64) * 16 % 64, 0u);
}

TEST(UserKernel, EmptyWhenNoIterations) {
  EXPECT_TRUE(userkernel::MakeToyKernel(4, 0, 0, 0).empty());
}

TEST(UserKernel, InlineLaunchRunsKernelAfterVf) {
  const Fixture& f = PlainRig();
  vf::VFImage vfk = f.vf;
  const uint32_t base = userkernel::ScratchWord(16384);
  userkernel::InlineLaunch(vfk, base);
  const auto code = userkernel::MakeToyKernel(4, 50, base, vfk.image.code_words);
  const auto bytes = userkernel::KernelBytes(code);
  EXPECT_EQ(bytes.size(), code.size() * isa::kWordBytes);

  verifier::ChallengeGenerator gen(4);
  const vf::Challenge ch = gen.Next(1, kIters);
  const auto plain = verifier::Measure(vf::BindIterations(f.vf, kIters), ch, f.platform, {});
  const auto with = verifier::Measure(
      vf::BindIterations(vfk, kIters), ch, f.platform, {}, [&](device::Machine& m) {
        std::copy(bytes.begin(), bytes.end(), m.memory(0).begin() + base * isa::kWordBytes);
      });
  // The branch shifts the code region the VF reads, so only the reference
  // for the modified image applies.
  EXPECT_NE(with.checksum, plain.checksum);
  EXPECT_EQ(with.checksum, vf::ChecksumReference(vfk, ch, f.platform.topology()));
  // 50 iterations of 8 FMA/ALU instructions per warp.
  EXPECT_GT(with.cycles, plain.cycles + 50 * 8);
  EXPECT_LE(with.result_cycles, with.cycles);
}

}  // namespace
}  // namespace attest::adversary

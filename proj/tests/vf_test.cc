#include "attest/vf.h"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "attest/device.h"
#include "attest/error.h"
#include "attest/prng.h"

namespace attest::vf {
namespace {

using isa::Opcode;

VFParams Small(uint32_t body = 200, uint32_t iterations = 50) {
  VFParams p;
  p.buffer_bytes = 16384;
  p.body_instructions = body;
  p.iterations = iterations;
  return p;
}

VFParams SmallSelfMod(uint32_t body = 300, uint32_t iterations = 30) {
  VFParams p = Small(body, iterations);
  p.self_modifying = true;
  p.icache_bytes = 4096;
  return p;
}

struct Rig {
  device::DeviceConfig cfg;
  Topology topo;

  Rig(int sms = 1, int warps = 2, int warp_size = 2, int warps_per_block = 1) {
    cfg.num_sms = sms;
    cfg.warp_size = warp_size;
    cfg.sched_width = 1;
    cfg.scratch_bytes = 4096;
    cfg.l2_icache_bytes = 4096;
    topo = {warps, warp_size, warps_per_block};
  }

  device::LaunchConfig Launch(int regs = 32) const {
    device::LaunchConfig l;
    l.warps_per_sm = topo.warps_per_sm;
    l.warps_per_block = topo.warps_per_block;
    l.regs_requested = regs;
    return l;
  }

  device::RunResult Run(const VFImage& vf, const Challenge& ch, int regs = 32) const {
    device::Machine m(BindIterations(vf, ch.iterations), cfg, Launch(regs));
    return m.Run(ch.seeds, {});
  }

  device::RunResult RunImage(const isa::Image& img, const Challenge& ch) const {
    device::Machine m(img, cfg, Launch());
    return m.Run(ch.seeds, {});
  }

  Challenge MakeChallenge(uint64_t seed, uint32_t iterations) const {
    Xorshift64Star rng(seed);
    Challenge ch;
    for (int s = 0; s < cfg.num_sms; ++s) ch.seeds.push_back(rng.Next());
    ch.iterations = iterations;
    return ch;
  }
};

int LoopCount(const VFImage& vf, Opcode op) {
  int n = 0;
  for (uint32_t w = vf.layout.loop_begin; w < vf.layout.loop_end; ++w) {
    if (isa::Decode(vf.image.word(w)).opcode == op) ++n;
  }
  return n;
}

TEST(Vf, SmallProfileBodyIsExactAndDeterministic) {
  VFParams p;
  p.iterations = 100000;
  const VFImage a = BuildVf(p, 7);
  const VFImage b = BuildVf(p, 7);
  EXPECT_EQ(a.layout.body_instructions(), 428u);
  EXPECT_EQ(isa::SerializeImage(a.image), isa::SerializeImage(b.image));
  EXPECT_EQ(LoopCount(a, Opcode::kLdg), 1);
  EXPECT_NE(isa::SerializeImage(BuildVf(p, 8).image), isa::SerializeImage(a.image));
}

TEST(Vf, BlocksAlternateFmaAndAluPipes) {
  VFParams p;
  p.unroll = 2;
  const VFImage vf = BuildVf(p, 1);
  EXPECT_EQ(LoopCount(vf, Opcode::kLdg), 2);
  int updates = 0;
  for (const auto& [begin, end] : vf.layout.blocks) {
    for (uint32_t w = begin; w < end; ++w) {
      const isa::Instruction in = isa::Decode(vf.image.word(w));
      const isa::Pipe expect = w % 2 == 0 ? isa::Pipe::kFma : isa::Pipe::kAlu;
      if (in.opcode == Opcode::kLdg) {
        EXPECT_EQ(w % 2, 0u);
        continue;
      }
      EXPECT_EQ(isa::PipeOf(in.opcode), expect) << "word " << w;
      if (in.opcode == Opcode::kImad || in.opcode == Opcode::kLeaHi) ++updates;
    }
  }
  // At least 15 shift-and-add updates per load.
  EXPECT_GE(updates, 15 * 2);
}

TEST(Vf, FoldsDataPointerEveryBlock) {
  VFParams p;
  p.unroll = 3;
  const VFImage vf = BuildVf(p, 1);
  for (const auto& [begin, end] : vf.layout.blocks) {
    int dp_folds = 0;
    for (uint32_t w = begin; w < end; ++w) {
      const isa::Instruction in = isa::Decode(vf.image.word(w));
      if (in.opcode == Opcode::kIadd && in.dst == 0 && in.srcs[1] == isa::Operand::Reg(2)) {
        ++dp_folds;
      }
    }
    EXPECT_EQ(dp_folds, 1);
  }
}

TEST(Vf, SelfModifyingProfileOverflowsCache) {
  VFParams p;
  p.body_instructions = 8342;
  p.iterations = 1000;
  p.self_modifying = true;
  const VFImage vf = BuildVf(p, 3);
  EXPECT_EQ(vf.layout.body_instructions(), 8342u);
  EXPECT_GT(vf.layout.body_instructions() * isa::kWordBytes, 131072u);
  EXPECT_EQ(LoopCount(vf, Opcode::kStc), 1);
  EXPECT_EQ(vf.layout.num_sites, static_cast<uint32_t>(kMaxSites));
  for (uint32_t b = 0; b < vf.layout.num_sites; ++b) {
    const isa::Instruction site = isa::Decode(vf.image.word(vf.layout.site_base + 2 * b));
    EXPECT_EQ(site.opcode, Opcode::kLeaHi);
    EXPECT_EQ(site.srcs[0], isa::Operand::Reg(site.dst));
    EXPECT_EQ(site.srcs[2], isa::Operand::Reg(site.dst));
  }
}

TEST(Vf, BodyWithoutRoomForLoadOverflows) {
  try {
    BuildVf(Small(40), 1);
    FAIL() << "expected LayoutOverflow";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLayoutOverflow);
  }
  VFParams huge = Small(2000);
  EXPECT_THROW(BuildVf(huge, 1), Error);
}

TEST(Vf, SelfModifyingBodyMustExceedCache) {
  VFParams p = SmallSelfMod(200);
  EXPECT_THROW(p.Validate(), Error);
}

TEST(Vf, UsesExactlyThirtyTwoRegisters) {
  const VFImage vf = BuildVf(SmallSelfMod(), 1);
  std::set<int> used;
  for (uint32_t w = 0; w < vf.image.code_words; ++w) {
    const isa::Instruction in = isa::Decode(vf.image.word(w));
    if (isa::WritesRegister(in.opcode)) used.insert(in.dst);
    for (const auto& o : in.srcs) {
      if (o.is_reg()) used.insert(static_cast<int>(o.value));
    }
  }
  EXPECT_EQ(used.size(), 32u);
}

TEST(Vf, ThirtyThreeRegistersSpillEveryIteration) {
  Rig rig;
  const VFImage vf = BuildVf(Small(), 1);
  const Challenge c10 = rig.MakeChallenge(1, 10);
  const Challenge c20 = rig.MakeChallenge(1, 20);
  const uint64_t base = rig.Run(vf, c20).total_cycles - rig.Run(vf, c10).total_cycles;
  const uint64_t spill =
      rig.Run(vf, c20, 33).total_cycles - rig.Run(vf, c10, 33).total_cycles;
  EXPECT_GT(spill, base + 10 * 30);
}

void ExpectAgreement(const Rig& rig, const VFParams& p, uint64_t seed) {
  const VFImage vf = BuildVf(p, seed);
  const Challenge ch = rig.MakeChallenge(seed * 31 + 5, p.iterations);
  const device::RunResult r = rig.Run(vf, ch);
  const ReferenceResult ref = ComputeReference(vf, ch, rig.topo, device::kDataBase);
  EXPECT_EQ(r.sm_results, ref.sm_checksums) << "seed " << seed;
  EXPECT_EQ(r.checksum(), ChecksumReference(vf, ch, rig.topo));
}

TEST(Vf, ReferenceMatchesDevice) {
  ExpectAgreement(Rig(), Small(), 1);
  ExpectAgreement(Rig(2, 3, 4, 1), Small(250, 40), 2);
  VFParams unrolled = Small(400, 20);
  unrolled.unroll = 3;
  ExpectAgreement(Rig(1, 4, 1, 2), unrolled, 3);
}

TEST(Vf, ReferenceMatchesDeviceWithSelfModification) {
  ExpectAgreement(Rig(), SmallSelfMod(), 4);
  ExpectAgreement(Rig(2, 4, 2, 2), SmallSelfMod(300, 25), 5);
  ExpectAgreement(Rig(1, 6, 2, 1), SmallSelfMod(420, 12), 6);
}

TEST(Vf, ReferenceMatchesDeviceWithInnerLoop) {
  VFParams p = Small(300, 15);
  p.inner_instructions = 24;
  p.inner_iterations = 3;
  ExpectAgreement(Rig(), p, 7);
  VFParams q = SmallSelfMod(400, 10);
  q.inner_instructions = 10;
  q.inner_iterations = 2;
  ExpectAgreement(Rig(1, 2, 2, 1), q, 8);
}

TEST(Vf, SelfModificationChangesChecksum) {
  const Rig rig;
  VFParams plain = Small(300, 30);
  plain.icache_bytes = 4096;
  const VFImage a = BuildVf(plain, 9);
  const VFImage b = BuildVf(SmallSelfMod(300, 30), 9);
  const Challenge ch = rig.MakeChallenge(1, 30);
  const ReferenceResult ref = ComputeReference(b, ch, rig.topo, device::kDataBase);
  EXPECT_EQ(ref.patch_values.size(), 30u * 2);
  EXPECT_NE(ChecksumReference(a, ch, rig.topo), ref.checksum);
}

TEST(Vf, InsertedCodeStaysConsistent) {
  const Rig rig;
  VFImage vf = BuildVf(SmallSelfMod(), 10);
  const std::vector<isa::Instruction> nops(3, isa::MakeNop());
  InsertCode(vf, vf.layout.blocks[0].first + 5, nops);
  InsertCode(vf, vf.layout.loop_begin, nops);
  EXPECT_EQ(vf.layout.body_instructions(), 306u);
  const Challenge ch = rig.MakeChallenge(3, 20);
  EXPECT_EQ(rig.Run(vf, ch).checksum(), ChecksumReference(vf, ch, rig.topo));
}

TEST(Vf, DistinctChallengesGiveDistinctChecksums) {
  const Topology topo{2, 2, 1};
  const VFImage vf = BuildVf(Small(), 11);
  std::set<uint64_t> seen;
  Xorshift64Star rng(99);
  for (int i = 0; i < 10000; ++i) {
    Challenge ch{{rng.Next()}, 3, 0};
    seen.insert(ChecksumReference(vf, ch, topo));
  }
  EXPECT_EQ(seen.size(), 10000u);
}

TEST(Vf, DataByteFlipDetectionFollowsInclusionModel) {
  const Topology topo{2, 2, 1};
  VFParams p = Small(200, 300);
  p.buffer_bytes = 8192;
  const VFImage vf = BuildVf(p, 12);
  const Challenge ch{{12345}, 300, 0};
  const uint64_t expect = ChecksumReference(vf, ch, topo);
  const double words = 2048;
  const double loads = 4.0 * (300 + 1);
  const double p_hit = 1.0 - std::pow(1.0 - 1.0 / words, loads);
  Xorshift64Star rng(5);
  const int trials = 400;
  int changed = 0;
  const size_t code_bytes = vf.image.code_words * isa::kWordBytes;
  for (int i = 0; i < trials; ++i) {
    VFImage bad = vf;
    const size_t at = code_bytes + rng.Below(bad.image.buffer.size() - code_bytes);
    bad.image.buffer[at] ^= static_cast<uint8_t>(1 + rng.Below(255));
    if (ChecksumReference(bad, ch, topo) != expect) ++changed;
  }
  const double se = std::sqrt(p_hit * (1 - p_hit) / trials);
  EXPECT_NEAR(changed / static_cast<double>(trials), p_hit, 4 * se);
}

TEST(Vf, PatchValueIsChecksumModThirtyTwo) {
  EXPECT_EQ(SelfModifyImmediate(0), 0u);
  EXPECT_EQ(SelfModifyImmediate(0x2A), 10u);
  EXPECT_EQ(SelfModifyImmediate(~uint64_t{0}), 31u);
}

TEST(Vf, PatchValuesAreUniform) {
  const VFImage vf = BuildVf(SmallSelfMod(260, 100000), 13);
  const Challenge ch{{777}, 100000, 0};
  const ReferenceResult ref = ComputeReference(vf, ch, Topology{1, 2, 1}, device::kDataBase);
  ASSERT_EQ(ref.patch_values.size(), 100000u);
  std::vector<double> hist(32);
  for (uint32_t n : ref.patch_values) hist[n] += 1;
  double chi2 = 0;
  const double expect = 100000.0 / 32;
  for (double h : hist) chi2 += (h - expect) * (h - expect) / expect;
  // Upper 1% point of chi-square with 31 degrees of freedom.
  EXPECT_LT(chi2, 52.191);
}

TEST(Vf, AdjacentDependentSwapsChangeChecksum) {
  const Rig rig;
  const VFImage vf = BuildVf(Small(200, 20), 14);
  const Challenge ch = rig.MakeChallenge(4, 20);
  const uint64_t expect = ChecksumReference(vf, ch, rig.topo);
  // Collect adjacent update pairs where one writes a register the other uses.
  std::vector<uint32_t> pairs;
  const auto [begin, end] = vf.layout.blocks[0];
  for (uint32_t w = begin; w + 1 < end; ++w) {
    const isa::Instruction x = isa::Decode(vf.image.word(w));
    const isa::Instruction y = isa::Decode(vf.image.word(w + 1));
    auto update = [](const isa::Instruction& in) {
      return in.opcode == Opcode::kImad || in.opcode == Opcode::kLeaHi;
    };
    if (!update(x) || !update(y)) continue;
    auto uses = [](const isa::Instruction& in, uint32_t r) {
      return in.srcs[0] == isa::Operand::Reg(r) || in.srcs[2] == isa::Operand::Reg(r);
    };
    if (uses(y, x.dst) || uses(x, y.dst)) pairs.push_back(w);
  }
  ASSERT_GE(pairs.size(), 20u);
  Xorshift64Star rng(15);
  for (int i = 0; i < 100; ++i) {
    const uint32_t w = pairs[rng.Below(pairs.size())];
    isa::Image img = BindIterations(vf, ch.iterations);
    const isa::Word128 a = img.word(w);
    img.set_word(w, img.word(w + 1));
    img.set_word(w + 1, a);
    EXPECT_NE(rig.RunImage(img, ch).checksum(), expect) << "word " << w;
  }
}

TEST(Vf, AggregateSumsOnes) {
  const std::vector<uint64_t> ones(221184, 1);
  EXPECT_EQ(Aggregate(ones, {32, 32, 216}), 221184u);
}

TEST(Vf, AggregateOfOneThreadIsIdentity) {
  const std::vector<uint64_t> one{0xDEADBEEFCAFEull};
  EXPECT_EQ(Aggregate(one, {1, 1, 1}), 0xDEADBEEFCAFEull);
}

TEST(Vf, AggregateEqualsFlatSum) {
  Xorshift64Star rng(16);
  std::vector<uint64_t> v(4 * 3 * 5);
  uint64_t flat = 0;
  for (auto& x : v) {
    x = rng.Next();
    flat += x;
  }
  EXPECT_EQ(Aggregate(v, {4, 3, 5}), flat);
}

TEST(Vf, AggregateRejectsWrongShape) {
  const std::vector<uint64_t> v(10, 1);
  try {
    Aggregate(v, {4, 1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Vf, ParamsJsonRoundTrip) {
  VFParams p = SmallSelfMod();
  p.unroll = 2;
  EXPECT_EQ(ParamsFromJson(ParamsToJson(p)), p);
  EXPECT_THROW(ParamsFromJson(R"({"buffer_bytes": 16384, "bogus": 1})"), Error);
  EXPECT_THROW(ParamsFromJson(R"({"buffer_bytes": 5000})"), Error);
}

TEST(Vf, AsmDumpReassembles) {
  const VFImage vf = BuildVf(SmallSelfMod(), 17);
  const std::string text = DumpAsm(vf);
  size_t start = 0;
  uint32_t w = 0;
  while (start < text.size()) {
    const size_t nl = text.find('\n', start);
    const std::string line = text.substr(start, nl - start);
    EXPECT_EQ(isa::Encode(isa::ParseAsm(line)), vf.image.word(w)) << line;
    start = nl + 1;
    ++w;
  }
  EXPECT_EQ(w, vf.image.code_words);
}

}  // namespace
}  // namespace attest::vf

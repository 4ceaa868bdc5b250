#include "attest/adversary.h"

#include <algorithm>
#include <array>
#include <json.hpp>

#include "attest/error.h"
#include "attest/image.h"
#include "attest/sake.h"
#include "attest/userkernel.h"

namespace attest::adversary {
namespace {

using isa::Instruction;
using isa::Opcode;
using isa::Operand;

constexpr int kC = 0;
constexpr int kDp = 2;
constexpr int kSite = 27;
constexpr int kPatch = 28;
constexpr int kShim = 30;
constexpr int kAddr = 31;

struct Name {
  Variant v;
  const char* name;
};
constexpr std::array<Name, 9> kNames = {{
    {Variant::kNopInject, "nop_inject"},
    {Variant::kMemcopyB, "memcopy_b"},
    {Variant::kMemcopyC, "memcopy_c"},
    {Variant::kMemcopyD, "memcopy_d"},
    {Variant::kDataSubstitution, "data_substitution"},
    {Variant::kProxy, "proxy"},
    {Variant::kParallelTakeover, "parallel_takeover"},
    {Variant::kToctouSwap, "toctou_swap"},
    {Variant::kPrecomputeReplay, "precompute_replay"},
}};

[[noreturn]] void Unsupported(const std::string& why) {
  throw Error(ErrorCode::kUnsupported, why);
}

Instruction Make(Opcode op, int dst, Operand a = {}, Operand b = {}, Operand c = {}) {
  Instruction in;
  in.opcode = op;
  in.dst = static_cast<uint8_t>(dst);
  in.srcs = {a, b, c};
  in.control.stall = 1;
  return in;
}

Operand R(int r) { return Operand::Reg(r); }
Operand I(int64_t v) { return Operand::Imm(v); }

uint32_t PartitionBytes(const verifier::Platform& p, uint32_t buffer) {
  return buffer + device::kResultSlotBytes + p.device.scratch_bytes;
}

uint32_t AlignLine(uint64_t bytes) {
  return static_cast<uint32_t>((bytes + 127) / 128 * 128);
}

// Second patch of the executed copy's own site, so its code sees the same
// immediates the measured region does.
void InsertShadowPatch(vf::VFImage& c) {
  Instruction stc = Make(Opcode::kStc, 0, R(kSite), I(0), R(kPatch));
  stc.predicate = isa::Predicate{0, false};
  vf::InsertCode(c, c.layout.patch_store + 1, std::span(&stc, 1));
}

// Points DP-dependent folds and the result store at a data copy `dp_offset`
// bytes into the partition while the checksum keeps the honest DP value.
void RetargetDataPointer(isa::Image& img, const vf::Layout& L, uint32_t buffer,
                         uint32_t dp_offset) {
  for (uint32_t w = L.loop_begin; w < L.loop_end; ++w) {
    Instruction in = isa::Decode(img.word(w));
    if (in.opcode == Opcode::kIadd && in.dst == kC && in.srcs[0] == R(kC) &&
        in.srcs[1] == R(kDp)) {
      in.srcs[1] = I(static_cast<int64_t>(device::kDataBase));
      img.set_word(w, isa::Encode(in));
    }
  }
  isa::Word128 store = img.word(L.result_store);
  store.set_immediate(static_cast<uint32_t>(static_cast<int64_t>(buffer) - dp_offset));
  img.set_word(L.result_store, store);
}

// Marks the region the adversary now owns.
void WritePayload(isa::Image& img) {
  const size_t n = std::min<size_t>(64, img.buffer.size() - img.code_words * isa::kWordBytes);
  for (size_t i = 0; i < n; ++i) img.buffer[img.buffer.size() - n + i] ^= 0xA5;
}

struct CodeCopy {
  std::vector<isa::Word128> words;
  uint32_t base = 0;
  uint32_t entry = 0;
  uint32_t body = 0;
};

// Relocates `c` to word `base`, binds the iteration count and appends the
// branch to the halt word.
CodeCopy Relocate(vf::VFImage c, uint32_t iterations, uint32_t base, uint32_t halt) {
  isa::Word128 it = c.image.word(c.layout.iterations_word);
  it.set_immediate(iterations);
  c.image.set_word(c.layout.iterations_word, it);
  for (uint32_t w : c.layout.address_words) {
    isa::Word128 word = c.image.word(w);
    word.set_immediate(word.immediate() + base);
    c.image.set_word(w, word);
  }
  CodeCopy out;
  out.base = base;
  out.entry = c.layout.entry + base;
  out.body = c.layout.body_instructions();
  for (uint32_t w = 0; w < c.image.code_words; ++w) out.words.push_back(c.image.word(w));
  out.words.push_back(isa::Encode(Make(Opcode::kBra, 0, I(halt))));
  return out;
}

void CheckFits(const verifier::Platform& p, uint32_t buffer, uint64_t end_bytes) {
  if (end_bytes > PartitionBytes(p, buffer)) {
    Unsupported("scratch too small for the attack (" + std::to_string(end_bytes) +
                " bytes needed)");
  }
}

verifier::Prepare WriteWords(std::vector<isa::Word128> words, uint32_t base) {
  return [words = std::move(words), base](device::Machine& m) {
    for (int sm = 0; sm < m.config().num_sms; ++sm) {
      for (size_t i = 0; i < words.size(); ++i) isa::StoreWord(m.memory(sm), base + i, words[i]);
    }
  };
}

verifier::Prepare Both(verifier::Prepare a, verifier::Prepare b) {
  return [a = std::move(a), b = std::move(b)](device::Machine& m) {
    a(m);
    b(m);
  };
}

verifier::Prepare WriteBytes(std::vector<uint8_t> bytes, uint32_t offset) {
  return [bytes = std::move(bytes), offset](device::Machine& m) {
    for (int sm = 0; sm < m.config().num_sms; ++sm) {
      std::copy(bytes.begin(), bytes.end(), m.memory(sm).begin() + offset);
    }
  };
}

// Executed copy of `c` in scratch; the loaded image stays `bound`.
AttackedSetup RunCopy(const vf::VFImage& c, const isa::Image& bound,
                      const verifier::Platform& p, uint32_t iterations) {
  const uint32_t buffer = static_cast<uint32_t>(bound.buffer.size());
  const uint32_t base = userkernel::ScratchWord(buffer);
  CodeCopy copy = Relocate(c, iterations, base, bound.code_words);
  CheckFits(p, buffer, (uint64_t{base} + copy.words.size()) * isa::kWordBytes);
  AttackedSetup s;
  s.image = bound;
  s.launch = p.launch;
  s.launch.entry = copy.entry;
  s.executed_body = copy.body;
  s.prepare = WriteWords(std::move(copy.words), base);
  return s;
}

}  // namespace

std::string_view VariantName(Variant v) {
  for (const auto& n : kNames) {
    if (n.v == v) return n.name;
  }
  return "?";
}

Variant VariantFromName(std::string_view name) {
  if (name == "nop") return Variant::kNopInject;
  if (name == "proxy_latency") return Variant::kProxy;
  for (const auto& n : kNames) {
    if (name == n.name) return n.v;
  }
  throw Error(ErrorCode::kConfigError, "unknown attack variant '" + std::string(name) + "'");
}

AttackedSetup ApplyAttack(const vf::VFImage& vf, const isa::Image& bound,
                          const verifier::Platform& p, uint32_t iterations,
                          const AttackSpec& spec) {
  const vf::Layout& L = vf.layout;
  const uint32_t buffer = vf.params.buffer_bytes;
  const bool selfmod = vf.params.self_modifying;

  AttackedSetup honest;
  honest.image = bound;
  honest.launch = p.launch;
  honest.executed_body = L.body_instructions();

  switch (spec.variant) {
    case Variant::kNopInject: {
      if (spec.count == 0) Unsupported("nop_inject needs count >= 1");
      vf::VFImage c = vf;
      const std::vector<Instruction> nops(spec.count, isa::MakeNop({.stall = 1}));
      vf::InsertCode(c, c.layout.blocks.front().first, nops);
      if (selfmod) InsertShadowPatch(c);
      return RunCopy(c, bound, p, iterations);
    }

    case Variant::kMemcopyB: {
      vf::VFImage c = vf;
      if (selfmod) InsertShadowPatch(c);
      return RunCopy(c, bound, p, iterations);
    }

    case Variant::kMemcopyC: {
      const uint32_t dp = AlignLine(uint64_t{buffer} + device::kResultSlotBytes);
      CheckFits(p, buffer, uint64_t{dp} + buffer);
      AttackedSetup s = honest;
      RetargetDataPointer(s.image, L, buffer, dp);
      WritePayload(s.image);
      s.launch.dp_offset = dp;
      s.prepare = WriteBytes(bound.buffer, dp);
      return s;
    }

    case Variant::kMemcopyD: {
      vf::VFImage c = vf;
      const uint32_t base = userkernel::ScratchWord(buffer);
      const uint32_t dp =
          AlignLine((uint64_t{base} + c.image.code_words + 1) * isa::kWordBytes);
      RetargetDataPointer(c.image, c.layout, buffer, dp);
      CodeCopy copy = Relocate(c, iterations, base, bound.code_words);
      CheckFits(p, buffer, uint64_t{dp} + buffer);
      AttackedSetup s = honest;
      WritePayload(s.image);
      s.launch.entry = copy.entry;
      s.launch.dp_offset = dp;
      s.prepare = Both(WriteWords(std::move(copy.words), base), WriteBytes(bound.buffer, dp));
      return s;
    }

    case Variant::kDataSubstitution: {
      if (spec.words.empty()) Unsupported("data_substitution needs a modified word set");
      if (vf.params.inner_instructions > 0) {
        Unsupported("data_substitution shim needs R30, which the inner loop uses");
      }
      const uint32_t words = buffer / 4;
      const uint32_t code_end = bound.code_words * static_cast<uint32_t>(isa::kWordBytes);
      for (uint32_t w : spec.words) {
        if (w >= words) Unsupported("modified word outside the buffer");
        if (selfmod && 4 * w < code_end) Unsupported("modified word inside self-modifying code");
      }
      vf::VFImage c = vf;
      if (selfmod) InsertShadowPatch(c);
      const uint32_t base = userkernel::ScratchWord(buffer);
      // Pristine copies of the modified words follow the code copy.
      const uint64_t code_words_after =
          c.image.code_words + c.layout.loads.size() * spec.words.size() * kShimInstructionsPerWord + 1;
      const uint32_t shadow = AlignLine((base + code_words_after) * isa::kWordBytes);
      std::vector<Instruction> shim;
      for (size_t i = 0; i < spec.words.size(); ++i) {
        const int64_t target = static_cast<int64_t>(device::kDataBase) + 4 * spec.words[i];
        const int64_t delta = static_cast<int64_t>(device::kDataBase) + shadow + 4 * i - target;
        shim.push_back(Make(Opcode::kLopXor, kShim, R(kAddr), I(target)));
        shim.push_back(Make(Opcode::kIadd, kShim, R(kShim), I(-1)));
        shim.push_back(Make(Opcode::kShfR, kShim, R(kShim), I(63)));
        shim.push_back(Make(Opcode::kImad, kAddr, R(kShim), I(delta), R(kAddr)));
      }
      std::vector<uint32_t> loads = c.layout.loads;
      std::sort(loads.rbegin(), loads.rend());
      for (uint32_t at : loads) vf::InsertCode(c, at, shim);
      AttackedSetup s = RunCopy(c, bound, p, iterations);
      CheckFits(p, buffer, uint64_t{shadow} + 4 * spec.words.size());
      std::vector<uint8_t> pristine;
      for (uint32_t w : spec.words) {
        pristine.insert(pristine.end(), bound.buffer.begin() + 4 * w,
                        bound.buffer.begin() + 4 * w + 4);
        for (int k = 0; k < 4; ++k) s.image.buffer[4 * w + k] ^= 0xFF;
      }
      s.prepare = Both(std::move(s.prepare), WriteBytes(std::move(pristine), shadow));
      return s;
    }

    case Variant::kProxy: {
      if (spec.latency < 0) Unsupported("negative proxy latency");
      AttackedSetup s = honest;
      s.channel_latency = spec.latency;
      return s;
    }

    case Variant::kParallelTakeover: {
      if (spec.warps < 1 ||
          p.launch.warps_per_sm + spec.warps > p.device.max_warps_per_sm) {
        Unsupported("takeover warps exceed the SM's warp slots");
      }
      const uint32_t base = userkernel::ScratchWord(buffer);
      const uint32_t n = spec.takeover_iterations
                             ? spec.takeover_iterations
                             : iterations * L.body_instructions() / 19 + 1;
      const auto code = userkernel::MakeToyKernel(8, n, base, bound.code_words);
      std::vector<isa::Word128> words;
      for (const auto& in : code) words.push_back(isa::Encode(in));
      CheckFits(p, buffer, (uint64_t{base} + words.size()) * isa::kWordBytes);
      AttackedSetup s = honest;
      s.launch.extra_warps = spec.warps;
      s.launch.extra_entry = base;
      s.prepare = WriteWords(std::move(words), base);
      return s;
    }

    case Variant::kToctouSwap:
    case Variant::kPrecomputeReplay:
      return honest;
  }
  Unsupported("unknown variant");
}

namespace {

struct KernelCheck {
  crypto::Bytes r;
  crypto::Digest expected{};
  uint32_t base = 0;
  size_t bytes = 0;
};

bool KernelMatches(const device::Machine& m, const KernelCheck& k) {
  for (int sm = 0; sm < m.config().num_sms; ++sm) {
    const auto mem = m.memory(sm).subspan(size_t{k.base} * isa::kWordBytes, k.bytes);
    if (sake::AuthenticateKernel(k.r, mem) != k.expected) return false;
  }
  return true;
}

}  // namespace

DetectionReport Evaluate(const vf::VFImage& vf, const verifier::Platform& platform,
                         const verifier::TimingModel& model, uint32_t iterations,
                         const AttackSpec& spec, uint64_t seed, bool jitter) {
  verifier::Session session(seed, model);
  const vf::Topology topo = platform.topology();
  const int sms = platform.device.num_sms;
  vf::Challenge ch = session.Issue(sms, iterations);
  const device::RunOptions opts{jitter, ch.nonce};

  DetectionReport r;
  r.attack = spec;

  if (spec.variant == Variant::kToctouSwap) {
    // Inline launch: the epilog branches straight into the hashed kernel, so
    // the only window for a swap is before the VF runs.
    vf::VFImage vfk = vf;
    const uint32_t base = userkernel::ScratchWord(vf.params.buffer_bytes);
    userkernel::InlineLaunch(vfk, base);
    const uint32_t halt = vfk.image.code_words;
    const auto good = userkernel::KernelBytes(userkernel::MakeToyKernel(4, 8, base, halt));
    const auto bad = userkernel::KernelBytes(userkernel::MakeToyKernel(4, 9, base, halt));
    crypto::Csprng rng(seed ^ ch.nonce);
    KernelCheck k{rng.Take(32), {}, base, good.size()};
    k.expected = sake::AuthenticateKernel(k.r, good);
    const isa::Image bound = vf::BindIterations(vfk, iterations);
    const uint64_t expected = vf::ChecksumReference(vfk, ch, topo);
    const uint32_t offset = base * static_cast<uint32_t>(isa::kWordBytes);

    // The model times the plain VF; the inserted branch moves its last store
    // by a few cycles. Take that offset from jitter-free runs of both images.
    const int64_t shift =
        static_cast<int64_t>(
            verifier::Measure(bound, ch, platform, {}, WriteBytes(good, offset)).result_cycles) -
        static_cast<int64_t>(
            verifier::Measure(vf::BindIterations(vf, iterations), ch, platform, {}).cycles);

    auto judge = [&](const crypto::Bytes& kernel, bool through_session) {
      bool hash_ok = false;
      const verifier::Measurement m =
          verifier::Measure(bound, ch, platform, opts, WriteBytes(kernel, offset),
                            [&](const device::Machine& mc) { hash_ok = KernelMatches(mc, k); });
      const double elapsed = static_cast<double>(static_cast<int64_t>(m.result_cycles) - shift);
      verifier::Verdict v = through_session
                                ? session.Check(ch.nonce, m.checksum, elapsed, expected)
                                : verifier::Verify(m.checksum, elapsed, expected, model);
      if (v.accepted && !hash_ok) {
        v.accepted = false;
        v.reason = verifier::Reason::kKernelHashMismatch;
      }
      return std::pair{m, v};
    };
    auto [hm, hv] = judge(good, false);
    auto [am, av] = judge(bad, true);
    r.honest_cycles = hm.result_cycles;
    r.attacked_cycles = am.result_cycles;
    r.honest = hv;
    r.verdict = av;
    r.checksum_correct = am.checksum == expected;
  } else {
    const isa::Image bound = vf::BindIterations(vf, iterations);
    const uint64_t expected = vf::ChecksumReference(vf, ch, topo);
    const verifier::Measurement honest = verifier::Measure(bound, ch, platform, opts);
    r.honest_cycles = honest.cycles;
    r.honest = verifier::Verify(honest.checksum, static_cast<double>(honest.cycles),
                                expected, model);

    if (spec.variant == Variant::kPrecomputeReplay) {
      // The honest answer above closes this round; the adversary replays it
      // against the next challenge without computing anything.
      session.Check(ch.nonce, honest.checksum, static_cast<double>(honest.cycles), expected);
      const vf::Challenge next = session.Issue(sms, iterations);
      const uint64_t next_expected = vf::ChecksumReference(vf, next, topo);
      r.attacked_cycles = honest.cycles;
      r.checksum_correct = honest.checksum == next_expected;
      r.verdict = session.Check(ch.nonce, honest.checksum,
                                static_cast<double>(honest.cycles), next_expected);
    } else {
      const AttackedSetup s = ApplyAttack(vf, bound, platform, iterations, spec);
      verifier::Platform attacked = platform;
      attacked.launch = s.launch;
      const verifier::Measurement m =
          verifier::Measure(s.image, ch, attacked, opts, s.prepare);
      const double elapsed = static_cast<double>(m.cycles) + 2 * s.channel_latency;
      r.attacked_cycles = m.cycles;
      r.checksum_correct = m.checksum == expected;
      r.verdict = session.Check(ch.nonce, m.checksum, elapsed, expected);
    }
  }
  r.overhead_per_iteration =
      (static_cast<double>(r.attacked_cycles) - static_cast<double>(r.honest_cycles)) /
      iterations;
  return r;
}

std::string ReportJson(const DetectionReport& r) {
  nlohmann::ordered_json j;
  j["variant"] = VariantName(r.attack.variant);
  if (r.attack.variant == Variant::kNopInject) j["count"] = r.attack.count;
  if (r.attack.variant == Variant::kDataSubstitution) j["words"] = r.attack.words;
  if (r.attack.variant == Variant::kProxy) j["latency"] = r.attack.latency;
  if (r.attack.variant == Variant::kParallelTakeover) j["warps"] = r.attack.warps;
  j["honest_cycles"] = r.honest_cycles;
  j["attacked_cycles"] = r.attacked_cycles;
  j["overhead_per_iteration"] = r.overhead_per_iteration;
  j["checksum_correct"] = r.checksum_correct;
  j["detected"] = r.detected();
  j["reason"] = verifier::ReasonName(r.verdict.reason);
  j["measured"] = r.verdict.measured;
  j["honest_accepted"] = r.honest.accepted;
  return j.dump(2);
}

}  // namespace attest::adversary

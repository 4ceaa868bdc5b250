#include "attest/vf.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <deque>
#include <limits>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "attest/device.h"
#include "attest/error.h"
#include "attest/prng.h"

namespace attest::vf {
namespace {

using isa::Instruction;
using isa::Opcode;
using isa::Operand;

constexpr int kC = 0;
constexpr int kIter = 1;
constexpr int kDp = 2;
constexpr int kLoaded = 3;
constexpr int kAcc0 = 4;
constexpr int kMask = 26;
constexpr int kSite = 27;
constexpr int kPatch = 28;
constexpr int kTmp = 29;
constexpr int kPatchAddr = 29;  // loop: data-view site address
constexpr int kState = 30;  // PRNG state at init, inner counter in the loop
constexpr int kAddr = 31;
constexpr int kRawDistance = 4;

Operand R(int r) { return Operand::Reg(r); }
Operand I(int64_t v) { return Operand::Imm(v); }

Instruction Make(Opcode op, int dst, Operand a = {}, Operand b = {},
                 Operand c = {}) {
  Instruction in;
  in.opcode = op;
  in.dst = static_cast<uint8_t>(dst);
  in.srcs = {a, b, c};
  in.control.stall = 1;
  return in;
}

Instruction Store(Opcode op, int base, int64_t offset, int value) {
  return Make(op, 0, R(base), I(offset), R(value));
}

int Acc(int k) { return kAcc0 + k; }

[[noreturn]] void BadParam(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::kConfigError, field + ": " + why);
}

// An ordered chain operation waiting for an issue slot.
struct Pending {
  Instruction instr;
  std::vector<int> reads;
  std::optional<Step> step;
  bool needs_consume = false;  // must follow the block's consume step
};

class Generator {
 public:
  Generator(const VFParams& p, uint64_t fill_seed)
      : p_(p), fill_seed_(fill_seed) {
    last_write_.fill(std::numeric_limits<int64_t>::min() / 2);
  }

  VFImage Build() {
    const uint32_t words = p_.buffer_bytes / 4;
    Layout& L = layout_;

    if (p_.self_modifying) {
      L.site_base = 0;
      L.num_sites = kMaxSites;
      for (uint32_t b = 0; b < kMaxSites; ++b) {
        Emit(Make(Opcode::kLeaHi, Acc(0), R(Acc(0)), I(0), R(Acc(0))));
        L.address_words.push_back(Pos());
        Emit(Make(Opcode::kBra, 0, I(0)));  // return target fixed below
      }
    }
    L.entry = Pos();

    if (p_.self_modifying) {
      Emit(Make(Opcode::kShfL, kSite, R(kLoaded), I(1)));
      L.address_words.push_back(Pos());
      Emit(Make(Opcode::kIadd, kSite, R(kSite), I(L.site_base)));
    }
    LoadConstant(kTmp, kGolden);
    Emit(Make(Opcode::kIadd, kState, R(kIter), I(1)));
    Emit(Make(Opcode::kImad, kState, R(kState), R(kTmp), R(Acc(21))));
    Emit(Make(Opcode::kLopXor, kState, R(kC), R(kState)));
    LoadConstant(kTmp, kXorshiftMultiplier);
    for (int k = 0; k <= kAccumulators; ++k) {
      const int target = k < kAccumulators ? Acc(k) : kC;
      const int zero = k < kAccumulators - 1 ? Acc(21) : kMask;
      Emit(Make(Opcode::kShfR, kPatch, R(kState), I(12)));
      Emit(Make(Opcode::kLopXor, kState, R(kState), R(kPatch)));
      Emit(Make(Opcode::kShfL, kPatch, R(kState), I(25)));
      Emit(Make(Opcode::kLopXor, kState, R(kState), R(kPatch)));
      Emit(Make(Opcode::kShfR, kPatch, R(kState), I(27)));
      Emit(Make(Opcode::kLopXor, kState, R(kState), R(kPatch)));
      Emit(Make(Opcode::kImad, target, R(kState), R(kTmp), R(zero)));
    }
    Emit(Make(Opcode::kMov, kMask, I(words - 1)));
    L.iterations_word = Pos();
    Emit(Make(Opcode::kMov, kIter, I(p_.iterations)));
    if (p_.self_modifying) {
      // Patch target through the data view: site word of this block counted
      // from DP, so it only matches R27 when code and data coincide.
      Emit(Make(Opcode::kShfL, kPatchAddr, R(kLoaded), I(1)));
      Emit(Make(Opcode::kIadd, kPatchAddr, R(kPatchAddr), I(L.site_base)));
      Emit(Make(Opcode::kShfR, kPatch, R(kDp), I(4)));
      Emit(Make(Opcode::kIadd, kPatchAddr, R(kPatchAddr), R(kPatch)));
      Emit(Make(Opcode::kIadd, kPatchAddr, R(kPatchAddr),
                I(-static_cast<int64_t>(device::kDataBase >> 4))));
    }
    Emit(Make(Opcode::kLopAnd, kAddr, R(kC), R(kMask)));
    Emit(Make(Opcode::kShfL, kAddr, R(kAddr), I(2)));
    Emit(Make(Opcode::kIadd, kAddr, R(kAddr), R(kDp)));
    Emit(Make(Opcode::kLdg, kLoaded, R(kAddr), I(0)));

    // Loop body.
    L.loop_begin = Pos();
    if (p_.self_modifying) {
      Emit(Make(Opcode::kBarSync, 0));
      Emit(Make(Opcode::kBra, 0, R(kSite)));
      L.site_return = Pos();
      for (uint32_t b = 0; b < kMaxSites; ++b) {
        SetImmediate(L.site_base + kSiteWords * b + 1, L.site_return);
      }
      // The site's update of A0 lands just before the first block.
      last_write_[Acc(0)] = Pos() - 2;
    }
    const uint32_t control = ControlWords();
    if (p_.body_instructions <= control) {
      throw Error(ErrorCode::kLayoutOverflow, "loop body leaves no room for blocks");
    }
    const uint32_t block_total = p_.body_instructions - control;
    for (uint32_t b = 0; b < p_.unroll; ++b) {
      const uint32_t size =
          block_total / p_.unroll + (b < block_total % p_.unroll ? 1 : 0);
      EmitBlock(b, size, b + 1 == p_.unroll);
    }
    if (p_.inner_instructions > 0) {
      Emit(Make(Opcode::kMov, kState, I(p_.inner_iterations)));
      const uint32_t top = Pos();
      EmitInner(p_.inner_instructions);
      L.address_words.push_back(Pos());
      Emit(Make(Opcode::kBra, 0, R(kState), I(top)));
      L.inner_iterations = p_.inner_iterations;
    }
    if (p_.self_modifying) {
      Emit(Make(Opcode::kBarSync, 0));
      L.patch_store = Pos();
      Instruction stc = Store(Opcode::kStc, kPatchAddr, 0, kPatch);
      stc.predicate = isa::Predicate{0, false};
      Emit(stc);
    }
    L.address_words.push_back(Pos());
    Emit(Make(Opcode::kBra, 0, R(kIter), I(L.loop_begin)));
    L.loop_end = Pos();

    L.epilog = Pos();
    Emit(Make(Opcode::kIadd, kC, R(kC), R(kLoaded)));
    for (int k = 0; k < kAccumulators; ++k) {
      Emit(Make(Opcode::kLopXor, kC, R(kC), R(Acc(k))));
    }
    L.result_store = Pos();
    Emit(Store(Opcode::kAtomAdd, kDp, p_.buffer_bytes, kC));

    if (static_cast<uint64_t>(code_.size()) * isa::kWordBytes > p_.buffer_bytes) {
      throw Error(ErrorCode::kLayoutOverflow,
                  std::to_string(code_.size()) + " code words exceed the buffer");
    }
    VFImage vf;
    vf.params = p_;
    vf.image = isa::MakeImage(code_, p_.buffer_bytes, L.entry);
    Fill(vf.image);
    std::sort(L.address_words.begin(), L.address_words.end());
    vf.layout = std::move(layout_);
    return vf;
  }

 private:
  uint32_t Pos() const { return static_cast<uint32_t>(code_.size()); }

  void Emit(const Instruction& in) {
    if (isa::WritesRegister(in.opcode)) last_write_[in.dst] = Pos();
    code_.push_back(in);
  }

  void SetImmediate(uint32_t at, uint32_t value) {
    for (auto& o : code_[at].srcs) {
      if (o.is_imm()) o.value = value;
    }
  }

  void LoadConstant(int reg, uint64_t value) {
    Emit(Make(Opcode::kMov, reg, I(static_cast<uint32_t>(value >> 32))));
    Emit(Make(Opcode::kShfL, reg, R(reg), I(32)));
    Emit(Make(Opcode::kLopXor, reg, R(reg), I(static_cast<uint32_t>(value))));
  }

  uint32_t ControlWords() const {
    uint32_t n = 1;  // closing branch
    if (p_.self_modifying) n += 4;
    if (p_.inner_instructions > 0) n += p_.inner_instructions + 2;
    return n;
  }

  bool Ready(int reg) const {
    return static_cast<int64_t>(Pos()) - last_write_[reg] >= kRawDistance;
  }

  bool Ready(const Pending& op) const {
    if (op.needs_consume && !consumed_) return false;
    return std::all_of(op.reads.begin(), op.reads.end(),
                       [&](int r) { return Ready(r); });
  }

  void EmitChain(std::deque<Pending>& q, std::vector<Step>& steps) {
    const Pending op = q.front();
    q.pop_front();
    if (op.step) {
      if (op.step->kind == Step::Kind::kConsume) consumed_ = true;
      if (op.step->kind == Step::Kind::kLoad) layout_.loads.push_back(Pos());
      steps.push_back(*op.step);
    }
    Emit(op.instr);
  }

  // Shift-and-add update of the next accumulator whose operands are ready.
  void EmitFiller(bool fma, Xorshift64Star& rng, std::vector<Step>& steps) {
    int j = rot_;
    for (int tries = 0; tries < kAccumulators; ++tries) {
      const int c = (rot_ + tries) % kAccumulators;
      if (Ready(Acc(c)) && Ready(Acc((c + 1) % kAccumulators))) {
        j = c;
        break;
      }
    }
    const int e = (j + 1) % kAccumulators;
    rot_ = e;
    const auto s = static_cast<uint8_t>(1 + rng.Below(31));
    if (fma) {
      Emit(Make(Opcode::kImad, Acc(j), R(Acc(j)), I(int64_t{1} << s), R(Acc(e))));
      steps.push_back({Step::Kind::kImadAcc, static_cast<uint8_t>(j),
                       static_cast<uint8_t>(e), s});
    } else {
      Emit(Make(Opcode::kLeaHi, Acc(j), R(Acc(j)), I(s), R(Acc(e))));
      steps.push_back({Step::Kind::kLeaAcc, static_cast<uint8_t>(j),
                       static_cast<uint8_t>(e), s});
    }
  }

  // Issues `size` words alternating FMA and ALU slots. Chain operations take
  // the first slot of their pipe where their operands are ready; the rest
  // are accumulator updates. The load replaces an FMA-slot update.
  void Schedule(uint32_t size, std::deque<Pending>& addr_q,
                std::deque<Pending>& c_q, Xorshift64Star& rng,
                std::vector<Step>& steps) {
    for (uint32_t i = 0; i < size; ++i) {
      const bool fma_slot = Pos() % 2 == 0;
      if (fma_slot) {
        if (!addr_q.empty() && addr_q.front().instr.opcode == Opcode::kLdg &&
            Ready(addr_q.front())) {
          EmitChain(addr_q, steps);
        } else {
          EmitFiller(true, rng, steps);
        }
        continue;
      }
      if (!addr_q.empty() && addr_q.front().instr.opcode != Opcode::kLdg &&
          Ready(addr_q.front())) {
        EmitChain(addr_q, steps);
      } else if (!c_q.empty() && Ready(c_q.front())) {
        EmitChain(c_q, steps);
      } else {
        EmitFiller(false, rng, steps);
      }
    }
    if (!addr_q.empty() || !c_q.empty()) {
      throw Error(ErrorCode::kLayoutOverflow,
                  "block of " + std::to_string(size) +
                      " words cannot hold its load and fold chain");
    }
  }

  Xorshift64Star BlockRng(uint32_t block) const {
    return Xorshift64Star(fill_seed_ ^ ((block + 1) * kGolden));
  }

  void EmitBlock(uint32_t b, uint32_t size, bool last) {
    using K = Step::Kind;
    std::deque<Pending> addr_q;
    std::deque<Pending> c_q;
    if (last) {
      addr_q.push_back({Make(Opcode::kIadd, kIter, R(kIter), I(-1)), {kIter},
                        Step{K::kDecIter}});
    }
    addr_q.push_back({Make(Opcode::kLopAnd, kAddr, R(kC), R(kMask)),
                      {kC, kMask}, Step{K::kAddress}, true});
    addr_q.push_back({Make(Opcode::kShfL, kAddr, R(kAddr), I(2)), {kAddr}, {}});
    addr_q.push_back({Make(Opcode::kIadd, kAddr, R(kAddr), R(kDp)), {kAddr, kDp}, {}});
    addr_q.push_back({Make(Opcode::kLdg, kLoaded, R(kAddr), I(0)), {kAddr},
                      Step{K::kLoad}});

    c_q.push_back({Make(Opcode::kIadd, kC, R(kC), R(kLoaded)), {kC, kLoaded},
                   Step{K::kConsume}});
    for (int k = 0; k < kAccumulators; ++k) {
      c_q.push_back({Make(Opcode::kLopXor, kC, R(kC), R(Acc(k))), {kC, Acc(k)},
                     Step{K::kFoldAcc, static_cast<uint8_t>(k)}});
    }
    c_q.push_back({Make(Opcode::kIadd, kC, R(kC), R(kDp)), {kC, kDp},
                   Step{K::kFoldDp}});
    c_q.push_back({Make(Opcode::kLopXor, kC, R(kC), R(kIter)), {kC, kIter},
                   Step{K::kFoldIter}});
    if (last && p_.self_modifying) {
      c_q.push_back({Make(Opcode::kLopAnd, kPatch, R(kC), I(31)), {kC},
                     Step{K::kPatchValue}});
    }
    const uint32_t begin = Pos();
    consumed_ = false;
    Xorshift64Star rng = BlockRng(b);
    Schedule(size, addr_q, c_q, rng, layout_.steps);
    layout_.blocks.emplace_back(begin, Pos());
  }

  void EmitInner(uint32_t size) {
    std::deque<Pending> addr_q;
    std::deque<Pending> c_q;
    addr_q.push_back({Make(Opcode::kIadd, kState, R(kState), I(-1)), {kState}, {}});
    Xorshift64Star rng = BlockRng(p_.unroll);
    Schedule(size, addr_q, c_q, rng, layout_.inner_steps);
  }

  void Fill(isa::Image& image) const {
    Xorshift64Star rng(fill_seed_);
    const size_t start = static_cast<size_t>(image.code_words) * isa::kWordBytes;
    uint64_t v = 0;
    for (size_t i = start; i < image.buffer.size(); ++i) {
      if ((i - start) % 8 == 0) v = rng.Next();
      image.buffer[i] = static_cast<uint8_t>(v >> (8 * ((i - start) % 8)));
    }
  }

  VFParams p_;
  uint64_t fill_seed_;
  std::vector<Instruction> code_;
  Layout layout_;
  std::array<int64_t, isa::kNumRegisters> last_write_{};
  int rot_ = 0;
  bool consumed_ = false;
};

uint32_t Load32(const std::vector<uint8_t>& mem, uint64_t off) {
  uint32_t v;
  std::memcpy(&v, mem.data() + off, 4);
  return v;
}

uint64_t TreeSum(std::span<const uint64_t> v) {
  if (v.empty()) return 0;
  if (v.size() == 1) return v[0];
  const size_t half = v.size() / 2;
  return TreeSum(v.first(half)) + TreeSum(v.subspan(half));
}

}  // namespace

void VFParams::Validate() const {
  if (buffer_bytes < 4096 || !std::has_single_bit(buffer_bytes) ||
      buffer_bytes > (1u << 30)) {
    BadParam("buffer_bytes", "must be a power of two in [4096, 2^30]");
  }
  if (body_instructions == 0) BadParam("body_instructions", "must be positive");
  if (unroll == 0) BadParam("unroll", "must be positive");
  if (iterations == 0 || iterations > static_cast<uint32_t>(INT32_MAX)) {
    BadParam("iterations", "must be in [1, 2^31)");
  }
  if (inner_instructions > 0) {
    if (inner_instructions < 2) BadParam("inner_instructions", "must be 0 or >= 2");
    if (inner_iterations == 0 || inner_iterations > static_cast<uint32_t>(INT32_MAX)) {
      BadParam("inner_iterations", "must be in [1, 2^31) with an inner loop");
    }
  }
  if (static_cast<uint64_t>(body_instructions) * isa::kWordBytes > buffer_bytes) {
    throw Error(ErrorCode::kLayoutOverflow, "loop body exceeds the buffer");
  }
  if (self_modifying &&
      static_cast<uint64_t>(body_instructions) * isa::kWordBytes <= icache_bytes) {
    BadParam("body_instructions",
             "a self-modifying body must be larger than icache_bytes");
  }
}

VFParams ParamsFromJson(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("vf params: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kConfigError, "vf params: not an object");
  VFParams p;
  for (const auto& [key, value] : j.items()) {
    auto u32 = [&](uint32_t& out) {
      if (!value.is_number_unsigned() || value.get<uint64_t>() > UINT32_MAX) {
        BadParam(key, "expects an unsigned 32-bit integer");
      }
      out = value.get<uint32_t>();
    };
    if (key == "buffer_bytes") u32(p.buffer_bytes);
    else if (key == "body_instructions") u32(p.body_instructions);
    else if (key == "unroll") u32(p.unroll);
    else if (key == "iterations") u32(p.iterations);
    else if (key == "inner_iterations") u32(p.inner_iterations);
    else if (key == "inner_instructions") u32(p.inner_instructions);
    else if (key == "icache_bytes") u32(p.icache_bytes);
    else if (key == "self_modifying") {
      if (!value.is_boolean()) BadParam(key, "expects a boolean");
      p.self_modifying = value.get<bool>();
    } else {
      BadParam(key, "unknown field");
    }
  }
  p.Validate();
  return p;
}

std::string ParamsToJson(const VFParams& p) {
  nlohmann::ordered_json j;
  j["buffer_bytes"] = p.buffer_bytes;
  j["body_instructions"] = p.body_instructions;
  j["unroll"] = p.unroll;
  j["iterations"] = p.iterations;
  j["self_modifying"] = p.self_modifying;
  j["inner_iterations"] = p.inner_iterations;
  j["inner_instructions"] = p.inner_instructions;
  j["icache_bytes"] = p.icache_bytes;
  return j.dump(2);
}

VFImage BuildVf(const VFParams& params, uint64_t fill_seed) {
  params.Validate();
  return Generator(params, fill_seed).Build();
}

void InsertCode(VFImage& vf, uint32_t at, std::span<const Instruction> words) {
  Layout& L = vf.layout;
  isa::Image& img = vf.image;
  if (at > img.code_words) {
    throw Error(ErrorCode::kOutOfRange, "insertion point past the code");
  }
  const auto k = static_cast<uint32_t>(words.size());
  if (static_cast<uint64_t>(img.code_words + k) * isa::kWordBytes > img.buffer.size()) {
    throw Error(ErrorCode::kLayoutOverflow, "inserted code does not fit the buffer");
  }
  // Labels move when strictly after the insertion point, instructions when
  // at or after it.
  auto label = [&](uint32_t& v) { if (v > at) v += k; };
  auto instr = [&](uint32_t& v) { if (v >= at) v += k; };

  std::vector<uint8_t> bytes(words.size() * isa::kWordBytes);
  for (size_t i = 0; i < words.size(); ++i) {
    isa::StoreWord(bytes, i, isa::Encode(words[i]));
  }
  const size_t off = static_cast<size_t>(at) * isa::kWordBytes;
  img.buffer.insert(img.buffer.begin() + static_cast<ptrdiff_t>(off), bytes.begin(),
                    bytes.end());
  img.buffer.resize(img.buffer.size() - bytes.size());
  img.code_words += k;

  for (uint32_t& w : L.address_words) {
    instr(w);
    isa::Word128 word = img.word(w);
    uint32_t target = word.immediate();
    label(target);
    word.set_immediate(target);
    img.set_word(w, word);
  }
  label(L.entry);
  img.entry = L.entry;
  if (L.num_sites > 0) label(L.site_base);
  instr(L.iterations_word);
  label(L.loop_begin);
  label(L.loop_end);
  label(L.site_return);
  if (vf.params.self_modifying) instr(L.patch_store);
  label(L.epilog);
  instr(L.result_store);
  for (auto& [b, e] : L.blocks) {
    label(b);
    label(e);
  }
  for (uint32_t& w : L.loads) instr(w);
}

isa::Image BindIterations(const VFImage& vf, uint32_t iterations) {
  if (iterations == 0 || iterations > static_cast<uint32_t>(INT32_MAX)) {
    throw Error(ErrorCode::kOutOfRange, "iteration count must be in [1, 2^31)");
  }
  isa::Image img = vf.image;
  isa::Word128 w = img.word(vf.layout.iterations_word);
  w.set_immediate(iterations);
  img.set_word(vf.layout.iterations_word, w);
  return img;
}

ReferenceResult ComputeReference(const VFImage& vf, const Challenge& challenge,
                                 const Topology& topo, uint64_t dp) {
  const Layout& L = vf.layout;
  if (topo.warps_per_sm < 1 || topo.warp_size < 1 || topo.warps_per_block < 1 ||
      topo.warps_per_sm % topo.warps_per_block != 0) {
    throw Error(ErrorCode::kShapeMismatch, "warps_per_sm must be a multiple of warps_per_block");
  }
  if (L.num_sites > 0 && topo.blocks_per_sm() > static_cast<int>(L.num_sites)) {
    throw Error(ErrorCode::kShapeMismatch, "more thread blocks than self-modify sites");
  }
  if (challenge.seeds.empty()) throw Error(ErrorCode::kShapeMismatch, "no SM seeds");
  if (challenge.iterations == 0) throw Error(ErrorCode::kOutOfRange, "zero iterations");

  const size_t T = static_cast<size_t>(topo.threads_per_sm());
  const size_t tpb = static_cast<size_t>(topo.warps_per_block * topo.warp_size);
  const uint64_t mask = vf.params.buffer_bytes / 4 - 1;
  const bool selfmod = L.num_sites > 0;

  ReferenceResult out;
  std::vector<uint64_t> C(T), Ld(T), Ad(T), N(T);
  std::vector<std::vector<uint64_t>> A(kAccumulators, std::vector<uint64_t>(T));

  auto run = [&](const std::vector<Step>& steps, uint64_t& iter,
                 const std::vector<uint8_t>& mem) {
    for (const Step& st : steps) {
      switch (st.kind) {
        case Step::Kind::kConsume:
          for (size_t t = 0; t < T; ++t) C[t] += Ld[t];
          break;
        case Step::Kind::kAddress:
          for (size_t t = 0; t < T; ++t) Ad[t] = 4 * (C[t] & mask);
          break;
        case Step::Kind::kLoad:
          for (size_t t = 0; t < T; ++t) Ld[t] = Load32(mem, Ad[t]);
          break;
        case Step::Kind::kFoldAcc: {
          const uint64_t* a = A[st.a].data();
          for (size_t t = 0; t < T; ++t) C[t] ^= a[t];
          break;
        }
        case Step::Kind::kFoldDp:
          for (size_t t = 0; t < T; ++t) C[t] += dp;
          break;
        case Step::Kind::kFoldIter:
          for (size_t t = 0; t < T; ++t) C[t] ^= iter;
          break;
        case Step::Kind::kDecIter:
          --iter;
          break;
        case Step::Kind::kPatchValue:
          for (size_t t = 0; t < T; ++t) N[t] = C[t] & 31;
          break;
        case Step::Kind::kImadAcc: {
          uint64_t* a = A[st.a].data();
          const uint64_t* b = A[st.b].data();
          const uint64_t m = uint64_t{1} << st.s;
          for (size_t t = 0; t < T; ++t) a[t] = a[t] * m + b[t];
          break;
        }
        case Step::Kind::kLeaAcc: {
          uint64_t* a = A[st.a].data();
          const uint64_t* b = A[st.b].data();
          for (size_t t = 0; t < T; ++t) a[t] = (a[t] >> st.s) + b[t];
          break;
        }
      }
    }
  };

  for (size_t sm = 0; sm < challenge.seeds.size(); ++sm) {
    std::vector<uint8_t> mem = vf.image.buffer;
    const uint64_t seed = challenge.seeds[sm];
    for (size_t t = 0; t < T; ++t) {
      uint64_t x = seed ^ ((t + 1) * kGolden);
      for (int k = 0; k < kAccumulators; ++k) {
        x = Xorshift64Star::Step(x);
        A[k][t] = x * kXorshiftMultiplier;
      }
      x = Xorshift64Star::Step(x);
      C[t] = x * kXorshiftMultiplier;
      Ld[t] = Load32(mem, 4 * (C[t] & mask));
    }
    uint64_t iter = challenge.iterations;
    do {
      if (selfmod) {
        for (size_t t = 0; t < T; ++t) {
          const size_t site = L.site_base + kSiteWords * (t / tpb);
          const uint32_t n = Load32(mem, site * isa::kWordBytes + 8);
          A[0][t] += A[0][t] >> (n & 63);
        }
      }
      run(L.steps, iter, mem);
      for (uint32_t r = 0; r < L.inner_iterations; ++r) run(L.inner_steps, iter, mem);
      if (selfmod) {
        for (size_t t = 0; t < T; t += tpb) {
          const size_t site = L.site_base + kSiteWords * (t / tpb);
          const auto n = static_cast<uint32_t>(N[t]);
          std::memcpy(mem.data() + site * isa::kWordBytes + 8, &n, 4);
          out.patch_values.push_back(n);
        }
      }
    } while (iter != 0);
    uint64_t sum = 0;
    for (size_t t = 0; t < T; ++t) {
      C[t] += Ld[t];
      for (int k = 0; k < kAccumulators; ++k) C[t] ^= A[k][t];
      sum += C[t];
      out.thread_values.push_back(C[t]);
    }
    out.sm_checksums.push_back(sum);
    out.checksum += sum;
  }
  return out;
}

uint64_t ChecksumReference(const VFImage& vf, const Challenge& challenge,
                           const Topology& topology) {
  return ComputeReference(vf, challenge, topology, device::kDataBase).checksum;
}

uint64_t Aggregate(std::span<const uint64_t> per_thread, const Shape& s) {
  if (s.warp_size < 1 || s.warps_per_block < 1 || s.blocks < 1 ||
      per_thread.size() != static_cast<size_t>(s.warp_size) * s.warps_per_block * s.blocks) {
    throw Error(ErrorCode::kShapeMismatch,
                std::to_string(per_thread.size()) + " values do not match the shape");
  }
  const auto ws = static_cast<size_t>(s.warp_size);
  std::vector<uint64_t> warps;
  for (size_t i = 0; i < per_thread.size(); i += ws) {
    warps.push_back(TreeSum(per_thread.subspan(i, ws)));
  }
  std::vector<uint64_t> blocks;
  const auto wpb = static_cast<size_t>(s.warps_per_block);
  for (size_t i = 0; i < warps.size(); i += wpb) {
    blocks.push_back(TreeSum(std::span<const uint64_t>(warps).subspan(i, wpb)));
  }
  uint64_t grid = 0;
  for (uint64_t b : blocks) grid += b;
  return grid;
}

std::string DumpAsm(const VFImage& vf) {
  std::ostringstream out;
  for (uint32_t w = 0; w < vf.image.code_words; ++w) {
    out << isa::EmitAsm(isa::Decode(vf.image.word(w))) << '\n';
  }
  return out.str();
}

}  // namespace attest::vf

#include "attest/device.h"

#include <algorithm>
#include <bit>
#include <deque>

#include "attest/error.h"
#include "attest/prng.h"

namespace attest::device {
namespace {

using isa::Opcode;
using isa::Operand;

constexpr uint64_t kNever = std::numeric_limits<uint64_t>::max();

enum PipeId : uint8_t { kFmaPipe, kAluPipe, kMemPipe, kCtrlPipe };

// Pseudo registers appended to the architectural file: a constant zero and a
// per-instruction broadcast of the immediate.
constexpr int kZeroReg = isa::kNumRegisters;
constexpr int kImmReg = isa::kNumRegisters + 1;
constexpr int kFileRegs = isa::kNumRegisters + 2;

// Instruction pre-decoded for execution.
struct Uop {
  bool valid = false;
  Opcode op = Opcode::kNop;
  uint8_t pipe = kCtrlPipe;
  uint8_t dst = 0;
  bool writes = false;
  int8_t pred = -1;
  bool pred_neg = false;
  uint8_t kind[3] = {0, 0, 0};
  uint8_t reg[3] = {0, 0, 0};
  uint64_t imm = 0;  // extended per opcode
  uint8_t stall = 1;
  uint8_t wait_mask = 0;
  uint8_t read_barrier = isa::kBarrierNone;
  uint8_t write_barrier = isa::kBarrierNone;
  uint8_t nready = 0;     // registers that must be ready before issue
  uint8_t ready_regs[4];  // padded with kZeroReg
  bool alu = false;
  bool has_imm = false;
  bool barriers = false;  // sets a read or write barrier
  uint32_t spill_cycles = 0;
  // Operand offsets into the warp register file; see kZeroReg / kImmReg.
  uint32_t off[3] = {0, 0, 0};
  uint32_t doff = 0;
};


bool SignExtends(Opcode op) {
  switch (op) {
    case Opcode::kIadd:
    case Opcode::kMov:
    case Opcode::kLdg:
    case Opcode::kStg:
    case Opcode::kStc:
    case Opcode::kAtomAdd:
      return true;
    default:
      return false;
  }
}

Uop MakeUop(const isa::Word128& word, int first_spilled, int lanes,
            int spill_latency) {
  Uop u;
  isa::Instruction in;
  try {
    in = isa::Decode(word);
  } catch (const Error&) {
    return u;
  }
  u.valid = true;
  u.op = in.opcode;
  u.pipe = static_cast<uint8_t>(isa::PipeOf(in.opcode));
  u.dst = in.dst;
  u.writes = isa::WritesRegister(in.opcode);
  if (in.predicate) {
    u.pred = static_cast<int8_t>(in.predicate->index);
    u.pred_neg = in.predicate->negate;
  }
  int hits = 0;
  for (int i = 0; i < 3; ++i) {
    const Operand& o = in.srcs[i];
    u.kind[i] = static_cast<uint8_t>(o.kind);
    if (o.is_reg()) {
      u.reg[i] = static_cast<uint8_t>(o.value);
      if (o.value >= static_cast<uint32_t>(first_spilled)) ++hits;
    } else if (o.is_imm()) {
      u.imm = SignExtends(in.opcode)
                  ? static_cast<uint64_t>(static_cast<int64_t>(
                        static_cast<int32_t>(o.value)))
                  : o.value;
    }
  }
  if (u.writes && u.dst >= first_spilled) ++hits;
  for (int i = 0; i < 3; ++i) {
    if (in.srcs[i].is_reg()) u.ready_regs[u.nready++] = u.reg[i];
  }
  if (u.writes) u.ready_regs[u.nready++] = u.dst;
  for (int i = u.nready; i < 4; ++i) u.ready_regs[i] = kZeroReg;
  u.stall = std::max<uint8_t>(in.control.stall, 1);
  u.wait_mask = in.control.wait_mask;
  u.read_barrier = in.control.read_barrier;
  u.write_barrier = in.control.write_barrier;
  u.spill_cycles = static_cast<uint32_t>(hits * spill_latency);
  u.barriers = u.read_barrier != isa::kBarrierNone ||
               u.write_barrier != isa::kBarrierNone;
  for (int i = 0; i < 3; ++i) {
    const Operand& o = in.srcs[i];
    const int r = o.is_reg() ? static_cast<int>(o.value)
                             : (o.is_imm() ? kImmReg : kZeroReg);
    u.off[i] = static_cast<uint32_t>(r * lanes);
    u.has_imm |= o.is_imm();
  }
  u.doff = static_cast<uint32_t>(u.dst * lanes);
  switch (in.opcode) {
    case Opcode::kImad: case Opcode::kLeaHi: case Opcode::kShfL:
    case Opcode::kShfR: case Opcode::kLopXor: case Opcode::kLopAnd:
    case Opcode::kIadd: case Opcode::kMov: case Opcode::kLepc:
      u.alu = true;
      break;
    default:
      break;
  }
  return u;
}

enum LineState : uint8_t { kAbsent, kPending, kResident };

struct Warp {
  uint32_t pc = 0;
  int sched = 0;
  int group = 0;  // 0 = launched warps, 1 = extra warps
  bool halted = false;
  bool at_barrier = false;
  uint8_t next_pipe = kCtrlPipe;
  uint64_t own_ready = 0;
  uint64_t spill_ready = 0;
  // Earliest issue cycle of the instruction at pc from the warp's own
  // hazards. Valid while wake_epoch matches the SM's decode epoch.
  uint64_t wake = 0;
  uint64_t wake_epoch = 0;
  std::array<uint64_t, kFileRegs> reg_ready{};
  std::array<bool, kFileRegs> reg_from_memory{};
  std::array<uint64_t, isa::kNumBarriers> barrier_ready{};
  std::vector<uint64_t> regs;  // reg-major: regs[r * lanes + lane]
  std::vector<uint8_t> preds;  // predicate bits per lane
};

struct Scheduler {
  std::vector<int> warps;
  size_t last = 0;  // position in `warps` of the last issuer
  uint64_t port_free[2] = {0, 0};
  StallCause blame = StallCause::kNone;
  int blame_warp = -1;  // -1 when the scheduler issued this cycle
};

// One SM worth of simulation state. kLanes > 0 fixes the warp size at compile
// time; 0 reads it from the config.
template <int kLanes>
class SmSim {
 public:
  SmSim(const DeviceConfig& cfg, const LaunchConfig& launch,
        std::span<uint8_t> mem, uint32_t code_words, uint32_t entry,
        const std::vector<uint32_t>& warm_lines,
        const std::vector<isa::Word128>& warm_words, uint64_t seed,
        const RunOptions& options, int sm_index)
      : cfg_(cfg),
        mem_(mem),
        code_words_(code_words),
        lanes_(kLanes > 0 ? kLanes : cfg.warp_size),
        words_(static_cast<uint32_t>(mem.size() / isa::kWordBytes)),
        line_words_(static_cast<uint32_t>(cfg.icache_line_bytes /
                                          isa::kWordBytes)),
        line_shift_(std::countr_zero(line_words_)),
        capacity_(static_cast<size_t>(cfg.l2_icache_bytes /
                                      cfg.icache_line_bytes)),
        jitter_(options.jitter),
        rng_(options.jitter_seed ^ (kGolden * (sm_index + 1))) {
    first_spilled_ =
        isa::kNumRegisters -
        std::max(0, launch.regs_requested - cfg.regs_per_thread);
    dec_.resize(words_);
    line_state_.assign((words_ + line_words_ - 1) / line_words_, kAbsent);
    fill_done_.assign(line_state_.size(), 0);
    for (size_t i = 0; i < warm_lines.size(); ++i) {
      const uint32_t line = warm_lines[i];
      for (uint32_t k = 0; k < line_words_; ++k) {
        const uint32_t w = line * line_words_ + k;
        if (w < words_) dec_[w] = MakeUop(warm_words[i * line_words_ + k],
                                          first_spilled_, lanes_, cfg.shared_mem_latency);
      }
      line_state_[line] = kResident;
      fifo_.push_back(line);
    }

    const int width = std::max(1, cfg.sched_width);
    scheds_.resize(width);
    const int launched = launch.warps_per_sm;
    const int total = launched + launch.extra_warps;
    warps_.resize(total);
    const uint64_t dp = kDataBase + static_cast<uint64_t>(launch.dp_offset);
    for (int w = 0; w < total; ++w) {
      Warp& warp = warps_[w];
      warp.group = w < launched ? 0 : 1;
      warp.pc = warp.group == 0 ? entry : launch.extra_entry;
      warp.sched = w % width;
      warp.regs.assign(static_cast<size_t>(kFileRegs) * lanes_, 0);
      warp.preds.assign(lanes_, 0);
      const int group_warp = warp.group == 0 ? w : w - launched;
      const int block = group_warp / std::max(1, launch.warps_per_block);
      for (int lane = 0; lane < Lanes(); ++lane) {
        const uint64_t tid = static_cast<uint64_t>(group_warp) * lanes_ + lane;
        warp.regs[0 * lanes_ + lane] = seed;
        warp.regs[1 * lanes_ + lane] = tid;
        warp.regs[2 * lanes_ + lane] = dp;
        warp.regs[3 * lanes_ + lane] = static_cast<uint64_t>(block);
        const bool leader =
            (group_warp % std::max(1, launch.warps_per_block)) == 0 &&
            lane == 0;
        warp.preds[lane] = leader ? 1 : 0;
      }
      scheds_[warp.sched].warps.push_back(w);
      if (warp.pc == code_words_) {
        warp.halted = true;
      } else {
        ++live_[warp.group];
      }
    }
    for (auto& s : scheds_) s.last = s.warps.empty() ? 0 : s.warps.size() - 1;
    per_warp_.resize(total);
  }

  void Run() {
    std::vector<Scheduler*> active;
    for (auto& s : scheds_) {
      if (!s.warps.empty()) active.push_back(&s);
    }
    uint64_t t = 0;
    while (live_[0] + live_[1] > 0) {
      if (!pending_fills_.empty()) CompleteFills(t);
      if (active.size() == 1) {
        t = AluStreak(*active[0], t);
        if (live_[0] + live_[1] == 0) break;
        if (!pending_fills_.empty()) CompleteFills(t);
      }
      if (active.size() == 1 && FastIssue(*active[0], t)) {
        if (++t > cfg_.cycle_budget) BudgetExceeded();
        continue;
      }
      bool any = false;
      uint64_t next = kNever;
      for (Scheduler* sp : active) {
        Scheduler& s = *sp;
        uint64_t earliest = kNever;
        if (TryIssue(s, t, &earliest)) {
          any = true;
        } else {
          next = std::min(next, earliest);
        }
      }
      uint64_t step = 1;
      if (!any) {
        if (!pending_fills_.empty()) {
          next = std::min(next, pending_fills_.front().first);
        }
        if (next == kNever) {
          throw Error(ErrorCode::kTrap, "all warps blocked (barrier deadlock)",
                      warps_.empty() ? -1 : warps_[0].pc);
        }
        step = next - t;
      }
      if (blamed_) AccountEmptySlots(step);
      t += step;
      if (t > cfg_.cycle_budget) BudgetExceeded();
    }
    uint64_t last = t;
    for (const Warp& w : warps_) {
      for (uint64_t r : w.reg_ready) last = std::max(last, r);
      for (uint64_t b : w.barrier_ready) last = std::max(last, b);
    }
    cycles_ = last;
    slots_ = cycles_ * static_cast<uint64_t>(active.size());
    // Drain after the last issue counts as idle.
    const uint64_t accounted = issued_ + stalls_.total();
    if (slots_ > accounted) stalls_.none += slots_ - accounted;
  }

  uint64_t cycles() const { return cycles_; }
  uint64_t slots() const { return slots_; }
  uint64_t issued() const { return issued_; }
  uint64_t result_cycle() const { return result_cycle_; }
  const StallBreakdown& stalls() const { return stalls_; }
  const std::vector<StallBreakdown>& per_warp() const { return per_warp_; }

 private:
  int Lanes() const {
    if constexpr (kLanes > 0) {
      return kLanes;
    } else {
      return lanes_;
    }
  }

  struct Blame {
    StallCause cause = StallCause::kNone;
    int warp = -1;
    uint64_t until = kNever;
  };

  void CompleteFills(uint64_t t) {
    while (!pending_fills_.empty() && pending_fills_.front().first <= t) {
      const uint32_t line = pending_fills_.front().second;
      pending_fills_.pop_front();
      if (line_state_[line] != kPending) continue;
      ++epoch_;
      while (fifo_.size() >= capacity_) {
        line_state_[fifo_.front()] = kAbsent;
        fifo_.pop_front();
      }
      for (uint32_t k = 0; k < line_words_; ++k) {
        const uint32_t w = line * line_words_ + k;
        if (w < words_) {
          dec_[w] = MakeUop(isa::LoadWord(mem_, w), first_spilled_, lanes_,
                           cfg_.shared_mem_latency);
        }
      }
      line_state_[line] = kResident;
      fifo_.push_back(line);
    }
  }

  void RequestFill(uint32_t line, uint64_t t) {
    line_state_[line] = kPending;
    const uint64_t done = t + static_cast<uint64_t>(cfg_.icache_fetch_penalty);
    fill_done_[line] = done;
    // Fills complete in request order because the penalty is constant.
    pending_fills_.emplace_back(done, line);
  }

  [[noreturn]] void Trap(uint32_t pc, const std::string& why) const {
    throw Error(ErrorCode::kTrap, why + " at pc " + std::to_string(pc), pc);
  }

  // Earliest cycle the warp's next instruction could issue and its binding
  // cause. May start an instruction fetch.
  uint64_t Earliest(Warp& w, Scheduler& s, uint64_t t, StallCause* cause) {
    if (w.at_barrier) {
      *cause = StallCause::kPipeline;
      return kNever;
    }
    uint64_t e = w.own_ready;
    StallCause c = StallCause::kNone;
    if (w.spill_ready > e) {
      e = w.spill_ready;
      c = StallCause::kMemory;
    }
    if (w.pc >= words_) Trap(w.pc, "fetch outside partition");
    const uint32_t line = w.pc >> line_shift_;
    if (line_state_[line] != kResident) {
      if (line_state_[line] == kAbsent) {
        if (e > t) {
          *cause = c;
          return e;
        }
        RequestFill(line, t);
      }
      *cause = StallCause::kIcache;
      return std::max(e, fill_done_[line]);
    }
    const Uop& u = dec_[w.pc];
    if (!u.valid) {
      *cause = c;
      return e;  // traps at issue
    }
    for (int i = 0; i < 3; ++i) {
      if (u.kind[i] != static_cast<uint8_t>(Operand::Kind::kReg)) continue;
      const uint64_t r = w.reg_ready[u.reg[i]];
      if (r > e) {
        e = r;
        c = w.reg_from_memory[u.reg[i]] ? StallCause::kMemory
                                        : StallCause::kPipeline;
      }
    }
    if (u.writes && w.reg_ready[u.dst] > e) {
      e = w.reg_ready[u.dst];
      c = w.reg_from_memory[u.dst] ? StallCause::kMemory
                                   : StallCause::kPipeline;
    }
    if (u.wait_mask) {
      for (int b = 0; b < isa::kNumBarriers; ++b) {
        if ((u.wait_mask >> b & 1) && w.barrier_ready[b] > e) {
          e = w.barrier_ready[b];
          c = StallCause::kMemory;
        }
      }
    }
    if (u.pipe <= kAluPipe && s.port_free[u.pipe] > e) {
      e = s.port_free[u.pipe];
      c = StallCause::kPipeline;
    }
    *cause = c;
    return e;
  }

  // Recomputes w.wake from the decoded instruction at pc. Leaves it invalid
  // while the line is not resident, requesting the fetch once the warp's own
  // stall has elapsed.
  void Refresh(Warp& w, uint64_t t) {
    if (w.pc >= words_) Trap(w.pc, "fetch outside partition");
    const uint32_t line = w.pc >> line_shift_;
    if (line_state_[line] != kResident) {
      if (line_state_[line] == kAbsent && w.spill_ready <= t) {
        RequestFill(line, t);
      }
      w.wake_epoch = 0;
      return;
    }
    RefreshResident(w);
  }

  // Refresh for a pc whose line is known to be resident.
  void RefreshResident(Warp& w) {
    const Uop& u = dec_[w.pc];
    w.wake_epoch = epoch_;
    if (!u.valid) {  // traps at issue
      w.wake = w.spill_ready;
      w.next_pipe = kCtrlPipe;
      return;
    }
    const uint64_t* rr = w.reg_ready.data();
    const uint8_t* q = u.ready_regs;
    uint64_t e = std::max(std::max(rr[q[0]], rr[q[1]]),
                          std::max(rr[q[2]], rr[q[3]]));
    e = std::max(e, w.spill_ready);
    if (u.wait_mask) {
      for (int b = 0; b < isa::kNumBarriers; ++b) {
        if (u.wait_mask >> b & 1) e = std::max(e, w.barrier_ready[b]);
      }
    }
    w.wake = e;
    w.next_pipe = u.pipe;
  }

  bool ReadyNow(Warp& w, const Scheduler& s, uint64_t t) {
    if (w.halted || w.at_barrier) return false;
    if (w.wake_epoch != epoch_) {
      Refresh(w, t);
      if (w.wake_epoch != epoch_) return false;
    }
    return w.wake <= t &&
           (w.next_pipe > kAluPipe || s.port_free[w.next_pipe] <= t);
  }

  [[noreturn]] void BudgetExceeded() const {
    throw Error(ErrorCode::kNonTermination,
                "cycle budget " + std::to_string(cfg_.cycle_budget) +
                    " exceeded");
  }

  // Issues consecutive ALU instructions on a lone scheduler with the hot state
  // in locals. Returns at the first cycle needing the general path, with the
  // round-robin position untouched so that path makes the same choice.
  uint64_t AluStreak(Scheduler& s, uint64_t t) {
    Warp* const warps = warps_.data();
    const int* const order = s.warps.data();
    const size_t n = s.warps.size();
    const Uop* const dec = dec_.data();
    const uint64_t raw = static_cast<uint64_t>(cfg_.raw_dependency_latency);
    const uint64_t dispatch[2] = {
        static_cast<uint64_t>(cfg_.fma_dispatch_latency),
        static_cast<uint64_t>(cfg_.alu_dispatch_latency)};
    const uint64_t budget = cfg_.cycle_budget;
    const uint32_t last_pc = code_words_ - 1;
    const uint32_t line_mask = line_words_ - 1;
    uint64_t port[2] = {s.port_free[0], s.port_free[1]};
    size_t pos = s.last;
    uint64_t issued = 0;
    while (pending_fills_.empty()) {
      Warp* w = nullptr;
      size_t p = pos;
      for (size_t k = 0; k < n; ++k) {
        if (++p == n) p = 0;
        Warp& c = warps[order[p]];
        if (!c.halted && !c.at_barrier && c.wake_epoch == epoch_ &&
            c.wake <= t && (c.next_pipe > kAluPipe || port[c.next_pipe] <= t)) {
          w = &c;
          break;
        }
      }
      if (w == nullptr) break;
      const Uop& u = dec[w->pc];
      if (!u.alu || u.barriers || w->pc == last_pc) break;
      pos = p;
      ExecuteAlu(*w, u, w->pc);
      port[u.pipe] = t + dispatch[u.pipe];
      w->reg_from_memory[u.dst] = false;
      w->reg_ready[u.dst] = t + raw;
      w->own_ready = t + u.stall;
      w->spill_ready = w->own_ready + u.spill_cycles;
      ++w->pc;
      // No fill completes inside a streak, so the line just executed from is
      // still resident.
      if ((w->pc & line_mask) != 0 && w->pc < words_) RefreshResident(*w);
      else Refresh(*w, t);
      ++issued;
      if (++t > budget) BudgetExceeded();
    }
    s.port_free[0] = port[0];
    s.port_free[1] = port[1];
    s.last = pos;
    issued_ += issued;
    return t;
  }

  // Round-robin pass over warps that are ready without further checks.
  bool FastIssue(Scheduler& s, uint64_t t) {
    const size_t n = s.warps.size();
    size_t pos = s.last;
    for (size_t k = 0; k < n; ++k) {
      if (++pos == n) pos = 0;
      Warp& w = warps_[s.warps[pos]];
      if (ReadyNow(w, s, t)) {
        Issue(w, s, t);
        s.last = pos;
        s.blame_warp = -1;
        return true;
      }
    }
    return false;
  }

  bool TryIssue(Scheduler& s, uint64_t t, uint64_t* earliest) {
    if (FastIssue(s, t)) return true;
    const size_t n = s.warps.size();
    Blame blame;
    for (size_t k = 1; k <= n; ++k) {
      const size_t pos = (s.last + k) % n;
      Warp& w = warps_[s.warps[pos]];
      if (w.halted) continue;
      StallCause cause;
      const uint64_t e = Earliest(w, s, t, &cause);
      if (e <= t) {
        Issue(w, s, t);
        s.last = pos;
        s.blame_warp = -1;
        return true;
      }
      // Prefer a real hazard over a warp idling on its own stall count.
      const bool better =
          blame.warp < 0 ||
          (blame.cause == StallCause::kNone && cause != StallCause::kNone) ||
          ((blame.cause == StallCause::kNone) ==
               (cause == StallCause::kNone) &&
           e < blame.until);
      if (better) blame = {cause, s.warps[pos], e};
      *earliest = std::min(*earliest, e);
    }
    s.blame = blame.cause;
    s.blame_warp = blame.warp;
    blamed_ |= blame.warp >= 0;
    return false;
  }

  void AccountEmptySlots(uint64_t cycles) {
    for (Scheduler& s : scheds_) {
      // Schedulers that issued, or whose warps all halted, carry no blame;
      // the latter's slots are counted as idle drain at the end.
      if (s.blame_warp < 0) continue;
      stalls_.Add(s.blame, cycles);
      per_warp_[s.blame_warp].Add(s.blame, cycles);
      s.blame_warp = -1;
    }
    blamed_ = false;
  }

  [[gnu::always_inline]] void ExecuteAlu(Warp& w, const Uop& u,
                                         uint32_t pc) const {
    const int L = Lanes();
    uint64_t* R = w.regs.data();
    if (u.has_imm) std::fill_n(R + kImmReg * L, L, u.imm);
    const uint64_t* a = R + u.off[0];
    const uint64_t* b = R + u.off[1];
    const uint64_t* c = R + u.off[2];
    uint64_t* d = R + u.doff;
    uint64_t tmp[64];
    uint64_t* out = u.pred < 0 ? d : tmp;
    switch (u.op) {
      case Opcode::kImad:
        for (int l = 0; l < L; ++l) out[l] = a[l] * b[l] + c[l];
        break;
      case Opcode::kLeaHi:
        for (int l = 0; l < L; ++l) out[l] = (a[l] >> (b[l] & 63)) + c[l];
        break;
      case Opcode::kShfL:
        for (int l = 0; l < L; ++l) out[l] = a[l] << (b[l] & 63);
        break;
      case Opcode::kShfR:
        for (int l = 0; l < L; ++l) out[l] = a[l] >> (b[l] & 63);
        break;
      case Opcode::kLopXor:
        for (int l = 0; l < L; ++l) out[l] = a[l] ^ b[l];
        break;
      case Opcode::kLopAnd:
        for (int l = 0; l < L; ++l) out[l] = a[l] & b[l];
        break;
      case Opcode::kIadd:
        for (int l = 0; l < L; ++l) out[l] = a[l] + b[l];
        break;
      case Opcode::kMov:
        for (int l = 0; l < L; ++l) out[l] = a[l];
        break;
      default:  // LEPC
        for (int l = 0; l < L; ++l) out[l] = pc;
        break;
    }
    if (u.pred >= 0) {
      for (int l = 0; l < L; ++l) {
        if (LaneActive(w, u, l)) d[l] = tmp[l];
      }
    }
  }

  uint64_t Src(const Warp& w, const Uop& u, int i, int lane) const {
    switch (static_cast<Operand::Kind>(u.kind[i])) {
      case Operand::Kind::kReg:
        return w.regs[u.reg[i] * Lanes() + lane];
      case Operand::Kind::kImm:
        return u.imm;
      default:
        return 0;
    }
  }

  bool LaneActive(const Warp& w, const Uop& u, int lane) const {
    if (u.pred < 0) return true;
    const bool bit = (w.preds[lane] >> u.pred) & 1;
    return bit != u.pred_neg;
  }

  size_t DataOffset(uint64_t addr, size_t bytes, uint32_t pc) const {
    if (addr < kDataBase || addr - kDataBase + bytes > mem_.size() ||
        (addr - kDataBase) % bytes != 0) {
      Trap(pc, "data access out of bounds");
    }
    return static_cast<size_t>(addr - kDataBase);
  }

  uint64_t LoadLatency() {
    const uint64_t base = static_cast<uint64_t>(cfg_.global_mem_latency);
    return jitter_ ? base + rng_.Below(base + 1) : base;
  }

  // Reads a warp-uniform value; lanes must agree.
  uint64_t Uniform(const Warp& w, const Uop& u, int i, uint32_t pc) const {
    const uint64_t v = Src(w, u, i, 0);
    for (int lane = 1; lane < Lanes(); ++lane) {
      if (Src(w, u, i, lane) != v) Trap(pc, "divergent branch");
    }
    return v;
  }

  [[gnu::always_inline]] void Issue(Warp& w, Scheduler& s, uint64_t t) {
    const uint32_t pc = w.pc;
    const Uop& u = dec_[pc];
    if (!u.alu) {
      IssueOther(w, s, t);
      return;
    }
    ++issued_;
    {
      ExecuteAlu(w, u, pc);
      const uint64_t done = t + static_cast<uint64_t>(cfg_.raw_dependency_latency);
      s.port_free[u.pipe] = t + static_cast<uint64_t>(
          u.pipe == kFmaPipe ? cfg_.fma_dispatch_latency : cfg_.alu_dispatch_latency);
      w.reg_from_memory[u.dst] = false;
      Retire(w, u, t, done, pc + 1);
    }
  }

  [[gnu::noinline]] void IssueOther(Warp& w, Scheduler&, uint64_t t) {
    const uint32_t pc = w.pc;
    const Uop& u = dec_[pc];
    if (!u.valid) Trap(pc, "illegal instruction");
    ++issued_;
    uint32_t next_pc = pc + 1;
    uint64_t done = t + 1;
    const int L = Lanes();
    uint64_t* d = u.writes ? &w.regs[u.doff] : nullptr;

    switch (u.op) {
      case Opcode::kLdg:
        for (int lane = 0; lane < L; ++lane) {
          if (!LaneActive(w, u, lane)) continue;
          const uint64_t addr = Src(w, u, 0, lane) + Src(w, u, 1, lane);
          const size_t off = DataOffset(addr, 4, pc);
          uint32_t v = 0;
          for (int k = 0; k < 4; ++k) {
            v |= static_cast<uint32_t>(mem_[off + k]) << (8 * k);
          }
          d[lane] = v;
        }
        done = t + LoadLatency();
        w.reg_from_memory[u.dst] = true;
        break;
      case Opcode::kStg:
        for (int lane = 0; lane < L; ++lane) {
          if (!LaneActive(w, u, lane)) continue;
          const uint64_t addr = Src(w, u, 0, lane) + Src(w, u, 1, lane);
          const size_t off = DataOffset(addr, 4, pc);
          const uint64_t v = Src(w, u, 2, lane);
          for (int k = 0; k < 4; ++k) mem_[off + k] = static_cast<uint8_t>(v >> (8 * k));
        }
        break;
      case Opcode::kAtomAdd:
        for (int lane = 0; lane < L; ++lane) {
          if (!LaneActive(w, u, lane)) continue;
          const uint64_t addr = Src(w, u, 0, lane) + Src(w, u, 1, lane);
          const size_t off = DataOffset(addr, 8, pc);
          uint64_t v = 0;
          for (int k = 0; k < 8; ++k) v |= static_cast<uint64_t>(mem_[off + k]) << (8 * k);
          v += Src(w, u, 2, lane);
          for (int k = 0; k < 8; ++k) mem_[off + k] = static_cast<uint8_t>(v >> (8 * k));
        }
        result_cycle_ = t + 1;
        break;
      case Opcode::kStc:
        for (int lane = 0; lane < L; ++lane) {
          if (!LaneActive(w, u, lane)) continue;
          const uint64_t addr = Src(w, u, 0, lane) + Src(w, u, 1, lane);
          if (addr >= words_) Trap(pc, "code store out of bounds");
          const uint64_t v = Src(w, u, 2, lane);
          const size_t off = static_cast<size_t>(addr) * isa::kWordBytes + 8;
          for (int k = 0; k < 4; ++k) mem_[off + k] = static_cast<uint8_t>(v >> (8 * k));
        }
        break;
      case Opcode::kBarSync:
        if (u.pred < 0 || LaneActive(w, u, 0)) {
          w.at_barrier = true;
          ++arrived_[w.group];
        }
        break;
      case Opcode::kBra: {
        bool take = true;
        if (u.pred >= 0) {
          take = LaneActive(w, u, 0);
          for (int lane = 1; lane < L; ++lane) {
            if (LaneActive(w, u, lane) != take) Trap(pc, "divergent branch");
          }
        }
        if (!take) break;
        const auto k0 = static_cast<Operand::Kind>(u.kind[0]);
        const auto k1 = static_cast<Operand::Kind>(u.kind[1]);
        if (k0 == Operand::Kind::kImm) {
          next_pc = static_cast<uint32_t>(u.imm);
        } else if (k1 == Operand::Kind::kImm) {
          if (Uniform(w, u, 0, pc) != 0) next_pc = static_cast<uint32_t>(u.imm);
        } else {
          const uint64_t target = Uniform(w, u, 0, pc);
          if (target > UINT32_MAX) Trap(pc, "branch target out of range");
          next_pc = static_cast<uint32_t>(target);
        }
        break;
      }
      case Opcode::kIcinv:
        for (uint32_t line : fifo_) line_state_[line] = kAbsent;
        fifo_.clear();
        ++epoch_;
        break;
      default:  // NOP
        break;
    }
    Retire(w, u, t, done, next_pc);
  }

  [[gnu::always_inline]] void Retire(Warp& w, const Uop& u, uint64_t t,
                                     uint64_t done,
              uint32_t next_pc) {

    // Writes complete in issue order per register, so the last completion
    // is recovered from reg_ready and barrier_ready at the end.
    if (u.writes) w.reg_ready[u.dst] = done;
    if (u.barriers) {
      if (u.write_barrier != isa::kBarrierNone) {
        w.barrier_ready[u.write_barrier] = done;
      }
      if (u.read_barrier != isa::kBarrierNone) {
        w.barrier_ready[u.read_barrier] = t + 1;
      }
    }
    w.own_ready = t + u.stall;
    w.spill_ready = w.own_ready + u.spill_cycles;
    w.pc = next_pc;
    if (w.pc == code_words_) {
      w.halted = true;
      --live_[w.group];
      if (w.at_barrier) {
        w.at_barrier = false;
        --arrived_[w.group];
      }
    }
    if (arrived_[w.group] != 0) MaybeReleaseBarrier(w.group, t);
    if (!w.halted) Refresh(w, t);
  }

  void MaybeReleaseBarrier(int group, uint64_t t) {
    if (arrived_[group] == 0 || arrived_[group] < live_[group]) return;
    for (Warp& other : warps_) {
      if (other.group != group || !other.at_barrier) continue;
      other.at_barrier = false;
      other.own_ready = std::max(other.own_ready, t + 1);
      other.wake = std::max(other.wake, t + 1);
    }
    arrived_[group] = 0;
  }

  const DeviceConfig& cfg_;
  std::span<uint8_t> mem_;
  uint32_t code_words_;
  int lanes_;
  uint32_t words_;
  uint32_t line_words_;
  int line_shift_;
  size_t capacity_;
  bool jitter_;
  Xorshift64Star rng_;
  int first_spilled_ = isa::kNumRegisters;

  std::vector<Uop> dec_;
  std::vector<uint8_t> line_state_;
  std::vector<uint64_t> fill_done_;
  std::deque<uint32_t> fifo_;
  std::deque<std::pair<uint64_t, uint32_t>> pending_fills_;

  std::vector<Warp> warps_;
  std::vector<Scheduler> scheds_;
  int live_[2] = {0, 0};
  int arrived_[2] = {0, 0};
  bool blamed_ = false;
  uint64_t epoch_ = 1;

  uint64_t issued_ = 0;
  uint64_t result_cycle_ = 0;  // completion of the last ATOM_ADD
  uint64_t cycles_ = 0;
  uint64_t slots_ = 0;
  StallBreakdown stalls_;
  std::vector<StallBreakdown> per_warp_;
};

void Require(bool ok, const char* field) {
  if (!ok) {
    throw Error(ErrorCode::kConfigError,
                std::string("invalid device config field ") + field);
  }
}

}  // namespace

void DeviceConfig::Validate() const {
  Require(num_sms > 0, "num_sms");
  Require(max_warps_per_sm > 0, "max_warps_per_sm");
  Require(warp_size > 0 && warp_size <= 64, "warp_size");
  Require(sched_width > 0 && sched_width <= 64, "sched_width");
  Require(regs_per_sm > 0, "regs_per_sm");
  Require(regs_per_thread > 0 && regs_per_thread <= isa::kNumRegisters,
          "regs_per_thread");
  Require(static_cast<int64_t>(regs_per_thread) * warp_size *
                  max_warps_per_sm <=
              regs_per_sm,
          "regs_per_thread");
  Require(fma_dispatch_latency > 0, "fma_dispatch_latency");
  Require(alu_dispatch_latency > 0, "alu_dispatch_latency");
  Require(raw_dependency_latency > 0, "raw_dependency_latency");
  Require(global_mem_latency > 0, "global_mem_latency");
  Require(register_access_latency > 0, "register_access_latency");
  Require(shared_mem_latency > 0, "shared_mem_latency");
  Require(l0_icache_words > 0, "l0_icache_words");
  Require(icache_line_bytes >= static_cast<int>(isa::kWordBytes) &&
              std::has_single_bit(static_cast<unsigned>(icache_line_bytes)),
          "icache_line_bytes");
  Require(l2_icache_bytes >= icache_line_bytes, "l2_icache_bytes");
  Require(icache_fetch_penalty > 0, "icache_fetch_penalty");
  Require(cycle_budget > 0, "cycle_budget");
}

void StallBreakdown::Add(StallCause cause, uint64_t cycles) {
  switch (cause) {
    case StallCause::kIcache: icache += cycles; break;
    case StallCause::kMemory: memory += cycles; break;
    case StallCause::kPipeline: pipeline += cycles; break;
    case StallCause::kNone: none += cycles; break;
  }
}

StallBreakdown& StallBreakdown::operator+=(const StallBreakdown& o) {
  icache += o.icache;
  memory += o.memory;
  pipeline += o.pipeline;
  none += o.none;
  return *this;
}

uint64_t RunResult::checksum() const {
  uint64_t sum = 0;
  for (uint64_t v : sm_results) sum += v;
  return sum;
}

double RunResult::utilization() const {
  return issue_slots == 0 ? 0.0
                          : static_cast<double>(issued) /
                                static_cast<double>(issue_slots);
}

std::vector<StallRow> StallReport(const RunResult& result) {
  const StallBreakdown& s = result.stalls;
  const double total = static_cast<double>(s.total());
  auto row = [&](const char* name, uint64_t v) {
    return StallRow{name, v, total > 0 ? static_cast<double>(v) / total : 0.0};
  };
  return {row("icache", s.icache), row("memory", s.memory),
          row("pipeline", s.pipeline), row("none", s.none)};
}

Machine::Machine(const isa::Image& image, const DeviceConfig& config,
                 const LaunchConfig& launch)
    : config_(config), launch_(launch) {
  config_.Validate();
  if (launch.warps_per_sm < 1 || launch.warps_per_block < 1 ||
      launch.warps_per_sm + launch.extra_warps > config.max_warps_per_sm ||
      launch.extra_warps < 0 || launch.regs_requested < 1) {
    throw Error(ErrorCode::kConfigError, "invalid launch shape");
  }
  if (static_cast<uint64_t>(image.code_words) * isa::kWordBytes >
      image.buffer.size()) {
    throw Error(ErrorCode::kImageTooLarge, "code exceeds buffer");
  }
  const uint64_t partition = image.buffer.size() + kResultSlotBytes +
                             static_cast<uint64_t>(config.scratch_bytes);
  if (partition > (1ull << 31)) {
    throw Error(ErrorCode::kImageTooLarge, "partition exceeds 2 GiB");
  }
  entry_ = launch.entry.value_or(image.entry);
  code_words_ = image.code_words;
  buffer_bytes_ = static_cast<uint32_t>(image.buffer.size());
  partition_bytes_ = static_cast<uint32_t>(
      (partition + isa::kWordBytes - 1) / isa::kWordBytes * isa::kWordBytes);
  memory_.assign(config.num_sms, std::vector<uint8_t>(partition_bytes_, 0));
  for (auto& m : memory_) {
    std::copy(image.buffer.begin(), image.buffer.end(), m.begin());
  }
  const uint32_t line_words =
      static_cast<uint32_t>(config.icache_line_bytes / isa::kWordBytes);
  const uint32_t code_lines = (code_words_ + line_words - 1) / line_words;
  const uint32_t capacity =
      static_cast<uint32_t>(config.l2_icache_bytes / config.icache_line_bytes);
  const uint32_t warm = std::min(code_lines, capacity);
  for (uint32_t line = 0; line < warm; ++line) {
    warm_lines_.push_back(line);
    for (uint32_t k = 0; k < line_words; ++k) {
      warm_words_.push_back(
          isa::LoadWord(memory_[0], static_cast<size_t>(line) * line_words + k));
    }
  }
}

void Machine::WriteCode(uint32_t addr, uint32_t value) {
  if (addr >= code_words_) {
    throw Error(ErrorCode::kOutOfRange,
                "code address " + std::to_string(addr) + " beyond code region");
  }
  for (auto& m : memory_) {
    auto w = isa::LoadWord(m, addr);
    w.set_immediate(value);
    isa::StoreWord(m, addr, w);
  }
}

template <int kLanes>
Machine::SmOutcome Machine::Simulate(int sm, uint64_t seed, const RunOptions& options) {
  SmSim<kLanes> sim(config_, launch_, memory_[sm], code_words_, entry_,
                    warm_lines_, warm_words_, seed, options, sm);
  sim.Run();
  return {sim.cycles(), sim.slots(), sim.issued(), sim.stalls(),
          sim.per_warp(), sim.result_cycle()};
}

RunResult Machine::Run(std::span<const uint64_t> sm_seeds,
                       const RunOptions& options) {
  if (sm_seeds.size() != static_cast<size_t>(config_.num_sms)) {
    throw Error(ErrorCode::kConfigError, "need one seed per SM");
  }
  RunResult result;
  for (int sm = 0; sm < config_.num_sms; ++sm) {
    SmOutcome sim;
    switch (config_.warp_size) {
      case 1: sim = Simulate<1>(sm, sm_seeds[sm], options); break;
      case 2: sim = Simulate<2>(sm, sm_seeds[sm], options); break;
      case 4: sim = Simulate<4>(sm, sm_seeds[sm], options); break;
      case 8: sim = Simulate<8>(sm, sm_seeds[sm], options); break;
      case 32: sim = Simulate<32>(sm, sm_seeds[sm], options); break;
      default: sim = Simulate<0>(sm, sm_seeds[sm], options); break;
    }
    uint64_t slot = 0;
    for (int k = 0; k < 8; ++k) {
      slot |= static_cast<uint64_t>(memory_[sm][buffer_bytes_ + k]) << (8 * k);
    }
    result.sm_results.push_back(slot);
    result.sm_cycles.push_back(sim.cycles);
    result.total_cycles = std::max(result.total_cycles, sim.cycles);
    result.sm_result_cycles.push_back(sim.result_cycle);
    result.result_cycles = std::max(result.result_cycles, sim.result_cycle);
    result.issued += sim.issued;
    result.issue_slots += sim.slots;
    result.stalls += sim.stalls;
    result.per_warp.insert(result.per_warp.end(), sim.per_warp.begin(),
                           sim.per_warp.end());
  }
  return result;
}

}  // namespace attest::device

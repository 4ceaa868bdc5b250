#include "attest/isa.h"

#include <cctype>
#include <charconv>
#include <cstdio>

#include "attest/error.h"

namespace attest::isa {
namespace {

using Kind = Operand::Kind;

// Operand shape accepted by each opcode.
enum class Form : uint8_t {
  kThreeSrc,   // d, a, b, c
  kTwoSrc,     // d, a, b
  kOneSrc,     // d, a
  kDstOnly,    // d
  kLoad,       // d, [a + off?]
  kStore,      // [a + off?], c
  kNoOperand,
  kBranch,     // target | cond, target | [reg]
};

struct OpInfo {
  std::string_view mnemonic;
  Form form;
  Pipe pipe;
};

constexpr std::array<OpInfo, kNumOpcodes> kOpTable = {{
    {"IMAD.U32", Form::kThreeSrc, Pipe::kFma},
    {"LEA.HI", Form::kThreeSrc, Pipe::kAlu},
    {"SHF.L", Form::kTwoSrc, Pipe::kAlu},
    {"SHF.R", Form::kTwoSrc, Pipe::kAlu},
    {"LOP.XOR", Form::kTwoSrc, Pipe::kAlu},
    {"LOP.AND", Form::kTwoSrc, Pipe::kAlu},
    {"IADD", Form::kTwoSrc, Pipe::kAlu},
    {"MOV", Form::kOneSrc, Pipe::kAlu},
    {"LDG", Form::kLoad, Pipe::kMem},
    {"STG", Form::kStore, Pipe::kMem},
    {"STC", Form::kStore, Pipe::kMem},
    {"ATOM.ADD", Form::kStore, Pipe::kMem},
    {"BAR.SYNC", Form::kNoOperand, Pipe::kCtrl},
    {"BRA", Form::kBranch, Pipe::kCtrl},
    {"NOP", Form::kNoOperand, Pipe::kCtrl},
    {"LEPC", Form::kDstOnly, Pipe::kAlu},
    {"ICINV", Form::kNoOperand, Pipe::kCtrl},
}};

const OpInfo& Info(Opcode op) { return kOpTable[static_cast<size_t>(op)]; }

[[noreturn]] void BadForm(const Instruction& instr, const char* why) {
  throw Error(ErrorCode::kInvalidEncoding,
              std::string(Mnemonic(instr.opcode)) + ": " + why);
}

bool IsRegOrImm(const Operand& o) { return o.is_reg() || o.is_imm(); }

void ValidateForm(const Instruction& instr) {
  const auto& s = instr.srcs;
  int imm_count = 0;
  for (const auto& o : s) {
    if (o.is_reg() && o.value >= kNumRegisters) {
      throw Error(ErrorCode::kInvalidRegister,
                  "register R" + std::to_string(o.value));
    }
    if (o.is_none() && o.value != 0) BadForm(instr, "none operand with value");
    if (o.is_imm()) ++imm_count;
  }
  if (imm_count > 1) {
    throw Error(ErrorCode::kImmediateOutOfRange,
                "at most one immediate operand");
  }
  if (instr.dst >= kNumRegisters) {
    throw Error(ErrorCode::kInvalidRegister,
                "register R" + std::to_string(instr.dst));
  }
  if (!WritesRegister(instr.opcode) && instr.dst != 0) {
    BadForm(instr, "opcode has no destination register");
  }
  if (instr.predicate && instr.predicate->index >= kNumPredicates) {
    BadForm(instr, "predicate index out of range");
  }
  if (!instr.control.Valid()) BadForm(instr, "control field overflow");

  switch (Info(instr.opcode).form) {
    case Form::kThreeSrc:
      if (!IsRegOrImm(s[0]) || !IsRegOrImm(s[1]) || !IsRegOrImm(s[2])) {
        BadForm(instr, "expects three source operands");
      }
      break;
    case Form::kTwoSrc:
      if (!IsRegOrImm(s[0]) || !IsRegOrImm(s[1]) || !s[2].is_none()) {
        BadForm(instr, "expects two source operands");
      }
      break;
    case Form::kOneSrc:
      if (!IsRegOrImm(s[0]) || !s[1].is_none() || !s[2].is_none()) {
        BadForm(instr, "expects one source operand");
      }
      break;
    case Form::kDstOnly:
    case Form::kNoOperand:
      if (!s[0].is_none() || !s[1].is_none() || !s[2].is_none()) {
        BadForm(instr, "takes no source operands");
      }
      break;
    case Form::kLoad:
      if (!s[0].is_reg() || s[1].is_reg() || !s[2].is_none()) {
        BadForm(instr, "expects [reg + imm?]");
      }
      break;
    case Form::kStore:
      if (!s[0].is_reg() || s[1].is_reg() || !s[2].is_reg()) {
        BadForm(instr, "expects [reg + imm?], reg");
      }
      break;
    case Form::kBranch: {
      const bool direct = s[0].is_imm() && s[1].is_none();
      const bool conditional = s[0].is_reg() && s[1].is_imm();
      const bool indirect = s[0].is_reg() && s[1].is_none();
      if (!(direct || conditional || indirect) || !s[2].is_none()) {
        BadForm(instr, "expects target, cond + target, or [reg]");
      }
      break;
    }
  }
}

uint64_t Bits(uint64_t word, int offset, int width) {
  return (word >> offset) & ((uint64_t{1} << width) - 1);
}

// --- assembly text ---------------------------------------------------------

class Cursor {
 public:
  explicit Cursor(std::string_view text) : text_(text) {}

  size_t pos() const { return pos_; }
  bool done() const { return pos_ >= text_.size(); }
  char peek() const { return done() ? '\0' : text_[pos_]; }
  char take() { return done() ? '\0' : text_[pos_++]; }

  [[noreturn]] void Fail(const std::string& what) const {
    throw Error(ErrorCode::kSyntaxError,
                what + " at column " + std::to_string(pos_),
                static_cast<int64_t>(pos_));
  }

  void Expect(char c) {
    if (peek() != c) Fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  bool Accept(char c) {
    if (peek() != c) return false;
    ++pos_;
    return true;
  }
  void SkipSpace() {
    while (!done() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
  }

  std::string_view Word() {
    const size_t start = pos_;
    while (!done() && (std::isalnum(static_cast<unsigned char>(peek())) ||
                       peek() == '.' || peek() == '_')) {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

 private:
  std::string_view text_;
  size_t pos_ = 0;
};

uint8_t ParseBarrierIndex(Cursor& c) {
  if (c.Accept('.')) return kBarrierNone;
  const char ch = c.peek();
  if (ch < '0' || ch > '9') c.Fail("expected barrier index or '.'");
  c.take();
  const int v = ch - '0';
  if (v >= kNumBarriers) {
    throw Error(ErrorCode::kFieldOverflow,
                "barrier index " + std::to_string(v) + " at column " +
                    std::to_string(c.pos() - 1),
                static_cast<int64_t>(c.pos() - 1));
  }
  return static_cast<uint8_t>(v);
}

ControlInfo ParseControl(Cursor& c) {
  ControlInfo ctrl;
  c.Expect('B');
  for (int i = 0; i < kNumBarriers; ++i) {
    const char ch = c.peek();
    if (ch == '.') {
      c.take();
    } else if (ch == '0' + i) {
      c.take();
      ctrl.wait_mask |= static_cast<uint8_t>(1u << i);
    } else {
      c.Fail("expected '.' or '" + std::to_string(i) + "' in wait mask");
    }
  }
  c.Expect('|');
  c.Expect('R');
  ctrl.read_barrier = ParseBarrierIndex(c);
  c.Expect('|');
  c.Expect('W');
  ctrl.write_barrier = ParseBarrierIndex(c);
  c.Expect('|');
  c.Expect('Y');
  const char y = c.take();
  if (y != '0' && y != '1') {
    if (y == '\0') c.Fail("expected yield flag");
    throw Error(ErrorCode::kSyntaxError,
                "yield flag must be 0 or 1 at column " +
                    std::to_string(c.pos() - 1),
                static_cast<int64_t>(c.pos() - 1));
  }
  ctrl.yield = (y == '1');
  c.Expect('|');
  c.Expect('S');
  const char s = c.take();
  if (!std::isxdigit(static_cast<unsigned char>(s))) {
    c.Fail("expected hex stall count");
  }
  ctrl.stall = static_cast<uint8_t>(
      std::isdigit(static_cast<unsigned char>(s))
          ? s - '0'
          : std::tolower(static_cast<unsigned char>(s)) - 'a' + 10);
  c.Expect('|');
  if (c.Accept('U')) {
    for (int i = 0; i < 4; ++i) {
      const char ch = c.peek();
      if (ch == '.') {
        c.take();
      } else if (ch == '0' + i) {
        c.take();
        ctrl.reuse |= static_cast<uint8_t>(1u << i);
      } else {
        c.Fail("expected '.' or '" + std::to_string(i) + "' in reuse mask");
      }
    }
    c.Expect('|');
  }
  return ctrl;
}

int ParseRegister(Cursor& c) {
  if (c.peek() != 'R') c.Fail("expected register");
  c.take();
  const size_t start = c.pos();
  int value = 0;
  int digits = 0;
  while (std::isdigit(static_cast<unsigned char>(c.peek()))) {
    value = value * 10 + (c.take() - '0');
    if (++digits > 3) c.Fail("register id too long");
  }
  if (digits == 0) c.Fail("expected register number");
  if (value >= kNumRegisters) {
    throw Error(ErrorCode::kInvalidRegister,
                "register R" + std::to_string(value) + " at column " +
                    std::to_string(start),
                static_cast<int64_t>(start));
  }
  return value;
}

uint32_t ParseImmediate(Cursor& c) {
  const size_t start = c.pos();
  const bool negative = c.Accept('-');
  uint64_t value = 0;
  int digits = 0;
  auto overflow = [&] {
    throw Error(ErrorCode::kFieldOverflow,
                "immediate does not fit 32 bits at column " +
                    std::to_string(start),
                static_cast<int64_t>(start));
  };
  if (c.peek() == '0' && !c.done()) {
    c.take();
    ++digits;
    if (c.Accept('x') || c.Accept('X')) {
      digits = 0;
      while (std::isxdigit(static_cast<unsigned char>(c.peek()))) {
        const char ch = static_cast<char>(
            std::tolower(static_cast<unsigned char>(c.take())));
        value = value * 16 + (std::isdigit(static_cast<unsigned char>(ch))
                                  ? ch - '0'
                                  : ch - 'a' + 10);
        if (++digits > 8) overflow();
      }
      if (digits == 0) c.Fail("expected hex digits");
      if (negative) c.Fail("negative hex immediate");
      return static_cast<uint32_t>(value);
    }
  }
  while (std::isdigit(static_cast<unsigned char>(c.peek()))) {
    value = value * 10 + static_cast<uint64_t>(c.take() - '0');
    ++digits;
    if (value > 0xFFFFFFFFull) overflow();
  }
  if (digits == 0) c.Fail("expected immediate");
  if (negative) {
    if (value > 0x80000000ull) overflow();
    return static_cast<uint32_t>(-static_cast<int64_t>(value));
  }
  return static_cast<uint32_t>(value);
}

Operand ParseRegOrImm(Cursor& c) {
  if (c.peek() == 'R') return Operand::Reg(ParseRegister(c));
  Operand o;
  o.kind = Kind::kImm;
  o.value = ParseImmediate(c);
  return o;
}

// Parses "[Rn]", "[Rn+imm]" or "[Rn-imm]" into slots 0 and 1.
void ParseMemory(Cursor& c, Instruction& instr) {
  c.Expect('[');
  c.SkipSpace();
  instr.srcs[0] = Operand::Reg(ParseRegister(c));
  c.SkipSpace();
  if (c.Accept('+')) {
    c.SkipSpace();
    instr.srcs[1] = {Kind::kImm, ParseImmediate(c)};
  } else if (c.peek() == '-') {
    instr.srcs[1] = {Kind::kImm, ParseImmediate(c)};
  }
  c.SkipSpace();
  c.Expect(']');
}

void ParseComma(Cursor& c) {
  c.SkipSpace();
  c.Expect(',');
  c.SkipSpace();
}

std::optional<Opcode> LookupMnemonic(std::string_view word) {
  for (int i = 0; i < kNumOpcodes; ++i) {
    if (kOpTable[i].mnemonic == word) return static_cast<Opcode>(i);
  }
  // Accepted aliases.
  if (word == "IMAD") return Opcode::kImad;
  if (word == "LEA_HI") return Opcode::kLeaHi;
  if (word == "SHF_L") return Opcode::kShfL;
  if (word == "SHF_R") return Opcode::kShfR;
  if (word == "LOP_XOR") return Opcode::kLopXor;
  if (word == "LOP_AND") return Opcode::kLopAnd;
  if (word == "ATOM_ADD") return Opcode::kAtomAdd;
  if (word == "BAR_SYNC") return Opcode::kBarSync;
  return std::nullopt;
}

std::string FormatImmediate(uint32_t raw) {
  const auto s = static_cast<int32_t>(raw);
  if (s >= -65536 && s <= 65535) return std::to_string(s);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%X", raw);
  return buf;
}

std::string FormatOperand(const Operand& o) {
  if (o.is_reg()) return "R" + std::to_string(o.value);
  return FormatImmediate(o.value);
}

std::string FormatMemory(const Instruction& instr) {
  std::string out = "[R" + std::to_string(instr.srcs[0].value);
  if (instr.srcs[1].is_imm()) {
    const auto s = static_cast<int32_t>(instr.srcs[1].value);
    if (s < 0 && s >= -65536) {
      out += "-" + std::to_string(-static_cast<int64_t>(s));
    } else {
      out += "+" + FormatImmediate(instr.srcs[1].value);
    }
  }
  return out + "]";
}

}  // namespace

// --- ControlInfo -----------------------------------------------------------

uint32_t ControlInfo::Pack() const {
  uint32_t bits = 0;
  bits |= static_cast<uint32_t>(reuse & 0xF);
  bits |= static_cast<uint32_t>(wait_mask & 0x3F) << 4;
  bits |= static_cast<uint32_t>((read_barrier ^ 7) & 0x7) << 10;
  bits |= static_cast<uint32_t>((write_barrier ^ 7) & 0x7) << 13;
  bits |= static_cast<uint32_t>(yield ? 1 : 0) << 16;
  bits |= static_cast<uint32_t>(stall & 0xF) << 17;
  return bits;
}

ControlInfo ControlInfo::Unpack(uint32_t bits) {
  ControlInfo c;
  c.reuse = static_cast<uint8_t>(bits & 0xF);
  c.wait_mask = static_cast<uint8_t>((bits >> 4) & 0x3F);
  c.read_barrier = static_cast<uint8_t>(((bits >> 10) & 0x7) ^ 7);
  c.write_barrier = static_cast<uint8_t>(((bits >> 13) & 0x7) ^ 7);
  c.yield = ((bits >> 16) & 1) != 0;
  c.stall = static_cast<uint8_t>((bits >> 17) & 0xF);
  return c;
}

bool ControlInfo::Valid() const {
  auto barrier_ok = [](uint8_t b) {
    return b == kBarrierNone || b < kNumBarriers;
  };
  return reuse < 16 && wait_mask < 64 && barrier_ok(read_barrier) &&
         barrier_ok(write_barrier) && stall < 16;
}

// --- Operand / opcode metadata ---------------------------------------------

Operand Operand::Reg(int id) {
  if (id < 0 || id >= kNumRegisters) {
    throw Error(ErrorCode::kInvalidRegister, "register R" + std::to_string(id));
  }
  return {Kind::kReg, static_cast<uint32_t>(id)};
}

Operand Operand::Imm(int64_t value) {
  if (value < INT32_MIN || value > static_cast<int64_t>(UINT32_MAX)) {
    throw Error(ErrorCode::kImmediateOutOfRange,
                "immediate " + std::to_string(value) + " does not fit 32 bits");
  }
  return {Kind::kImm, static_cast<uint32_t>(value)};
}

Pipe PipeOf(Opcode op) { return Info(op).pipe; }

bool WritesRegister(Opcode op) {
  switch (Info(op).form) {
    case Form::kThreeSrc:
    case Form::kTwoSrc:
    case Form::kOneSrc:
    case Form::kDstOnly:
    case Form::kLoad:
      return true;
    default:
      return false;
  }
}

std::string_view Mnemonic(Opcode op) { return Info(op).mnemonic; }

uint32_t Word128::control_bits() const {
  return static_cast<uint32_t>(Bits(hi, kControlBitOffset - 64, kControlBits));
}

Instruction MakeNop(ControlInfo control) {
  Instruction i;
  i.opcode = Opcode::kNop;
  i.control = control;
  return i;
}

// --- binary codec ----------------------------------------------------------

void Validate(const Instruction& instr) {
  if (static_cast<int>(instr.opcode) >= kNumOpcodes) {
    throw Error(ErrorCode::kUnknownOpcode, "opcode out of range");
  }
  ValidateForm(instr);
}

Word128 Encode(const Instruction& instr) {
  Validate(instr);
  uint64_t lo = static_cast<uint64_t>(instr.opcode);
  lo |= static_cast<uint64_t>(instr.dst) << 8;
  if (instr.predicate) {
    lo |= uint64_t{1} << 13;
    lo |= static_cast<uint64_t>(instr.predicate->index) << 14;
    lo |= static_cast<uint64_t>(instr.predicate->negate ? 1 : 0) << 17;
  }
  uint64_t hi = 0;
  for (int slot = 0; slot < 3; ++slot) {
    const Operand& o = instr.srcs[slot];
    lo |= static_cast<uint64_t>(o.kind) << (18 + 2 * slot);
    if (o.is_reg()) lo |= static_cast<uint64_t>(o.value) << (24 + 5 * slot);
    if (o.is_imm()) hi |= o.value;
  }
  hi |= static_cast<uint64_t>(instr.control.Pack())
        << (kControlBitOffset - 64);
  return {lo, hi};
}

Instruction Decode(const Word128& word) {
  const uint64_t op = Bits(word.lo, 0, 8);
  if (op >= static_cast<uint64_t>(kNumOpcodes)) {
    throw Error(ErrorCode::kUnknownOpcode,
                "opcode field " + std::to_string(op));
  }
  if (Bits(word.lo, 39, 25) != 0 || Bits(word.hi, 32, 9) != 0 ||
      Bits(word.hi, 62, 2) != 0) {
    throw Error(ErrorCode::kInvalidEncoding, "reserved bits set");
  }
  Instruction instr;
  instr.opcode = static_cast<Opcode>(op);
  instr.dst = static_cast<uint8_t>(Bits(word.lo, 8, 5));
  const bool has_pred = Bits(word.lo, 13, 1) != 0;
  const auto pred_index = static_cast<uint8_t>(Bits(word.lo, 14, 3));
  const bool pred_neg = Bits(word.lo, 17, 1) != 0;
  if (has_pred) {
    instr.predicate = Predicate{pred_index, pred_neg};
  } else if (pred_index != 0 || pred_neg) {
    throw Error(ErrorCode::kInvalidEncoding, "predicate bits without guard");
  }
  bool any_imm = false;
  for (int slot = 0; slot < 3; ++slot) {
    const auto kind = Bits(word.lo, 18 + 2 * slot, 2);
    const auto reg = static_cast<uint32_t>(Bits(word.lo, 24 + 5 * slot, 5));
    if (kind > 2) throw Error(ErrorCode::kInvalidEncoding, "operand kind 3");
    Operand& o = instr.srcs[slot];
    o.kind = static_cast<Kind>(kind);
    if (o.is_reg()) {
      o.value = reg;
    } else {
      if (reg != 0) {
        throw Error(ErrorCode::kInvalidEncoding, "stray register bits");
      }
      if (o.is_imm()) {
        o.value = word.immediate();
        any_imm = true;
      }
    }
  }
  if (!any_imm && word.immediate() != 0) {
    throw Error(ErrorCode::kInvalidEncoding, "stray immediate bits");
  }
  instr.control = ControlInfo::Unpack(word.control_bits());
  ValidateForm(instr);
  return instr;
}

// --- assembly --------------------------------------------------------------

Instruction ParseAsm(std::string_view line) {
  Cursor c(line);
  Instruction instr;
  c.SkipSpace();
  instr.control = ParseControl(c);
  c.SkipSpace();
  if (c.Accept('@')) {
    Predicate p;
    p.negate = c.Accept('!');
    c.Expect('P');
    const char d = c.take();
    if (d < '0' || d >= '0' + kNumPredicates) c.Fail("bad predicate register");
    p.index = static_cast<uint8_t>(d - '0');
    instr.predicate = p;
    c.SkipSpace();
  }
  const size_t mnemonic_pos = c.pos();
  const auto word = c.Word();
  const auto op = LookupMnemonic(word);
  if (!op) {
    throw Error(ErrorCode::kSyntaxError,
                "unknown mnemonic '" + std::string(word) + "' at column " +
                    std::to_string(mnemonic_pos),
                static_cast<int64_t>(mnemonic_pos));
  }
  instr.opcode = *op;
  c.SkipSpace();

  switch (Info(*op).form) {
    case Form::kThreeSrc:
    case Form::kTwoSrc:
    case Form::kOneSrc: {
      instr.dst = static_cast<uint8_t>(ParseRegister(c));
      const int count = Info(*op).form == Form::kThreeSrc ? 3
                        : Info(*op).form == Form::kTwoSrc ? 2
                                                          : 1;
      for (int i = 0; i < count; ++i) {
        ParseComma(c);
        instr.srcs[i] = ParseRegOrImm(c);
      }
      break;
    }
    case Form::kDstOnly:
      instr.dst = static_cast<uint8_t>(ParseRegister(c));
      break;
    case Form::kLoad:
      instr.dst = static_cast<uint8_t>(ParseRegister(c));
      ParseComma(c);
      ParseMemory(c, instr);
      break;
    case Form::kStore:
      ParseMemory(c, instr);
      ParseComma(c);
      instr.srcs[2] = Operand::Reg(ParseRegister(c));
      break;
    case Form::kNoOperand:
      break;
    case Form::kBranch:
      if (c.Accept('[')) {
        c.SkipSpace();
        instr.srcs[0] = Operand::Reg(ParseRegister(c));
        c.SkipSpace();
        c.Expect(']');
      } else if (c.peek() == 'R') {
        instr.srcs[0] = Operand::Reg(ParseRegister(c));
        ParseComma(c);
        instr.srcs[1] = {Kind::kImm, ParseImmediate(c)};
      } else {
        instr.srcs[0] = {Kind::kImm, ParseImmediate(c)};
      }
      break;
  }
  c.SkipSpace();
  c.Expect(';');
  c.SkipSpace();
  if (!c.done()) c.Fail("trailing characters");
  try {
    ValidateForm(instr);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidEncoding) {
      throw Error(ErrorCode::kSyntaxError, e.what(),
                  static_cast<int64_t>(mnemonic_pos));
    }
    throw;
  }
  return instr;
}

std::string EmitAsm(const Instruction& instr) {
  Validate(instr);
  const ControlInfo& k = instr.control;
  std::string out = "B";
  for (int i = 0; i < kNumBarriers; ++i) {
    out += (k.wait_mask >> i) & 1 ? static_cast<char>('0' + i) : '.';
  }
  out += "|R";
  out += k.read_barrier == kBarrierNone ? '.' : static_cast<char>('0' + k.read_barrier);
  out += "|W";
  out += k.write_barrier == kBarrierNone ? '.' : static_cast<char>('0' + k.write_barrier);
  out += "|Y";
  out += k.yield ? '1' : '0';
  out += "|S";
  out += "0123456789ABCDEF"[k.stall & 0xF];
  out += "|";
  if (k.reuse != 0) {
    out += "U";
    for (int i = 0; i < 4; ++i) {
      out += (k.reuse >> i) & 1 ? static_cast<char>('0' + i) : '.';
    }
    out += "|";
  }
  out += " ";
  if (instr.predicate) {
    out += instr.predicate->negate ? "@!P" : "@P";
    out += static_cast<char>('0' + instr.predicate->index);
    out += " ";
  }
  out += Mnemonic(instr.opcode);

  const auto& s = instr.srcs;
  switch (Info(instr.opcode).form) {
    case Form::kThreeSrc:
    case Form::kTwoSrc:
    case Form::kOneSrc:
      out += " R" + std::to_string(instr.dst);
      for (const auto& o : s) {
        if (!o.is_none()) out += ", " + FormatOperand(o);
      }
      break;
    case Form::kDstOnly:
      out += " R" + std::to_string(instr.dst);
      break;
    case Form::kLoad:
      out += " R" + std::to_string(instr.dst) + ", " + FormatMemory(instr);
      break;
    case Form::kStore:
      out += " " + FormatMemory(instr) + ", R" + std::to_string(s[2].value);
      break;
    case Form::kNoOperand:
      break;
    case Form::kBranch:
      if (s[0].is_imm()) {
        out += " " + FormatImmediate(s[0].value);
      } else if (s[1].is_imm()) {
        out += " R" + std::to_string(s[0].value) + ", " +
               FormatImmediate(s[1].value);
      } else {
        out += " [R" + std::to_string(s[0].value) + "]";
      }
      break;
  }
  return out + ";";
}

}  // namespace attest::isa

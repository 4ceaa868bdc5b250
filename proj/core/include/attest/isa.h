#ifndef ATTEST_ISA_H_
#define ATTEST_ISA_H_

// Toy fixed-length instruction set for the simulated accelerator.
//
// Every instruction is one 128-bit word carrying both the operation and its
// scheduling control information. Word layout (bit offsets, little end first):
//
//   [0, 8)     opcode
//   [8, 13)    destination register
//   13         predicate present
//   [14, 17)   predicate register
//   17         predicate negated
//   [18, 24)   operand kinds, two bits per slot (none / reg / imm)
//   [24, 39)   operand register ids, five bits per slot
//   [64, 96)   32-bit immediate (shared by the one immediate operand)
//   [105, 126) control: reuse(4) | wait(6) | read(3) | write(3) | yield(1) |
//              stall(4)
//
// All other bits are reserved and must be zero; Decode rejects words that
// set them.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace attest::isa {

inline constexpr int kNumRegisters = 32;
inline constexpr int kNumPredicates = 7;  // P0..P6
inline constexpr uint8_t kBarrierNone = 7;
inline constexpr int kNumBarriers = 6;
inline constexpr int kControlBitOffset = 105;
inline constexpr int kControlBits = 21;
inline constexpr int kImmediateBitOffset = 64;

struct ControlInfo {
  uint8_t reuse = 0;                     // 4-bit operand reuse mask
  uint8_t wait_mask = 0;                 // 6-bit barrier wait mask
  uint8_t read_barrier = kBarrierNone;   // 0..5, 7 = none
  uint8_t write_barrier = kBarrierNone;  // 0..5, 7 = none
  bool yield = false;
  uint8_t stall = 0;                     // 0..15 cycles

  // Packs into the 21-bit control field. Barrier indices are stored XOR 7 so
  // that "none" packs to zero and a default ControlInfo packs to 0.
  uint32_t Pack() const;
  static ControlInfo Unpack(uint32_t bits);
  bool Valid() const;

  bool operator==(const ControlInfo&) const = default;
};

enum class Opcode : uint8_t {
  kImad,     // d = a * b + c
  kLeaHi,    // d = (a >> (b & 63)) + c
  kShfL,     // d = a << (b & 63)
  kShfR,     // d = a >> (b & 63), logical
  kLopXor,   // d = a ^ b
  kLopAnd,   // d = a & b
  kIadd,     // d = a + b
  kMov,      // d = a
  kLdg,      // d = zext(mem32[a + off])
  kStg,      // mem32[a + off] = c
  kStc,      // code[a + off].immediate = c  (store-to-code)
  kAtomAdd,  // mem64[a + off] += c
  kBarSync,  // barrier across all warps of the SM
  kBra,      // branch: direct, conditional on a != 0, or indirect
  kNop,
  kLepc,     // d = pc
  kIcinv,    // invalidate the SM instruction cache
  kCount,
};

inline constexpr int kNumOpcodes = static_cast<int>(Opcode::kCount);

enum class Pipe : uint8_t { kFma, kAlu, kMem, kCtrl };

Pipe PipeOf(Opcode op);
bool WritesRegister(Opcode op);
std::string_view Mnemonic(Opcode op);

struct Operand {
  enum class Kind : uint8_t { kNone, kReg, kImm };
  Kind kind = Kind::kNone;
  uint32_t value = 0;  // register id or raw immediate bits

  static Operand None() { return {}; }
  static Operand Reg(int id);
  // Accepts any value representable as int32 or uint32.
  static Operand Imm(int64_t value);

  bool is_reg() const { return kind == Kind::kReg; }
  bool is_imm() const { return kind == Kind::kImm; }
  bool is_none() const { return kind == Kind::kNone; }

  bool operator==(const Operand&) const = default;
};

struct Predicate {
  uint8_t index = 0;
  bool negate = false;
  bool operator==(const Predicate&) const = default;
};

struct Instruction {
  std::optional<Predicate> predicate;
  Opcode opcode = Opcode::kNop;
  uint8_t dst = 0;
  std::array<Operand, 3> srcs{};
  ControlInfo control;

  bool operator==(const Instruction&) const = default;
};

struct Word128 {
  uint64_t lo = 0;
  uint64_t hi = 0;

  uint32_t control_bits() const;
  uint32_t immediate() const { return static_cast<uint32_t>(hi); }
  void set_immediate(uint32_t value) {
    hi = (hi & ~uint64_t{0xFFFFFFFF}) | value;
  }

  bool operator==(const Word128&) const = default;
};

// Throws Error{kInvalidRegister | kImmediateOutOfRange | kInvalidEncoding}
// when the instruction does not satisfy the operand form of its opcode.
void Validate(const Instruction& instr);

Word128 Encode(const Instruction& instr);
// Throws kUnknownOpcode for unassigned opcode values and kInvalidEncoding for
// words with reserved bits set or malformed operand forms.
Instruction Decode(const Word128& word);

// Assembly text, e.g.
//   B......|R.|W.|Y1|S1| IMAD.U32 R28, R28, 2048, R28;
// An optional reuse field "U<4 dot-or-digit>|" may follow the stall field.
Instruction ParseAsm(std::string_view line);
std::string EmitAsm(const Instruction& instr);

// Convenience constructors used by the generators and tests.
Instruction MakeNop(ControlInfo control = {});

}  // namespace attest::isa

#endif  // ATTEST_ISA_H_

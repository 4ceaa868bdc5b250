#include "attest/userkernel.h"

#include "attest/device.h"
#include "attest/image.h"

namespace attest::userkernel {
namespace {

using isa::Instruction;
using isa::Opcode;
using isa::Operand;

Instruction Make(Opcode op, int dst, Operand a = {}, Operand b = {}, Operand c = {}) {
  Instruction in;
  in.opcode = op;
  in.dst = static_cast<uint8_t>(dst);
  in.srcs = {a, b, c};
  in.control.stall = 1;
  return in;
}

constexpr int kCounter = 31;

}  // namespace

std::vector<Instruction> MakeToyKernel(uint32_t pairs, uint32_t iterations,
                                       uint32_t base, uint32_t halt_word) {
  std::vector<Instruction> k;
  if (iterations == 0) return k;
  k.push_back(Make(Opcode::kMov, kCounter, Operand::Imm(iterations)));
  const uint32_t top = base + static_cast<uint32_t>(k.size());
  for (uint32_t i = 0; i < pairs; ++i) {
    // Eight rotating registers per pipe keep every operand 4+ slots old.
    const int a = 4 + static_cast<int>(i % 8);
    const int b = 12 + static_cast<int>(i % 8);
    k.push_back(Make(Opcode::kImad, a, Operand::Reg(a), Operand::Imm(3), Operand::Reg(20)));
    k.push_back(Make(Opcode::kLeaHi, b, Operand::Reg(b), Operand::Imm(3), Operand::Reg(21)));
  }
  k.push_back(Make(Opcode::kIadd, kCounter, Operand::Reg(kCounter), Operand::Imm(-1)));
  k.push_back(Make(Opcode::kBra, 0, Operand::Reg(kCounter), Operand::Imm(top)));
  k.push_back(Make(Opcode::kBra, 0, Operand::Imm(halt_word)));
  return k;
}

crypto::Bytes KernelBytes(std::span<const Instruction> code) {
  crypto::Bytes out(code.size() * isa::kWordBytes);
  for (size_t i = 0; i < code.size(); ++i) isa::StoreWord(out, i, isa::Encode(code[i]));
  return out;
}

uint32_t InlineLaunch(vf::VFImage& vf, uint32_t target) {
  const uint32_t at = vf.layout.result_store + 1;
  const Instruction bra = Make(Opcode::kBra, 0, Operand::Imm(target));
  vf::InsertCode(vf, at, std::span(&bra, 1));
  return at;
}

uint32_t ScratchWord(uint32_t buffer_bytes, uint32_t line_bytes) {
  const uint64_t start = uint64_t{buffer_bytes} + device::kResultSlotBytes;
  const uint64_t aligned = (start + line_bytes - 1) / line_bytes * line_bytes;
  return static_cast<uint32_t>(aligned / isa::kWordBytes);
}

}  // namespace attest::userkernel

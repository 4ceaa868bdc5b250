#ifndef ATTEST_USERKERNEL_H_
#define ATTEST_USERKERNEL_H_

// Toy user kernels and the inline launch that hands control from the VF
// epilog straight to the kernel.

#include <cstdint>
#include <span>
#include <vector>

#include "attest/crypto.h"
#include "attest/isa.h"
#include "attest/vf.h"

namespace attest::userkernel {

// Code placed at absolute word `base`: a counted loop of `pairs` independent
// IMAD/LEA_HI pairs run `iterations` times, then BRA `halt_word`. Zero
// iterations yields no code; launch it by branching to the halt word.
std::vector<isa::Instruction> MakeToyKernel(uint32_t pairs, uint32_t iterations,
                                            uint32_t base, uint32_t halt_word);

crypto::Bytes KernelBytes(std::span<const isa::Instruction> code);

// Inserts `BRA target` right after the result store so every warp jumps to
// the kernel once its checksum is published. Returns the branch word.
uint32_t InlineLaunch(vf::VFImage& vf, uint32_t target);

// First line-aligned word of the scratch area of a partition whose VF buffer
// is `buffer_bytes` long.
uint32_t ScratchWord(uint32_t buffer_bytes, uint32_t line_bytes = 128);

}  // namespace attest::userkernel

#endif  // ATTEST_USERKERNEL_H_

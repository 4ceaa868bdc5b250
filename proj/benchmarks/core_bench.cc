#include <benchmark/benchmark.h>

#include "attest/crypto.h"
#include "attest/experiment.h"
#include "attest/isa.h"
#include "attest/trng.h"
#include "attest/verifier.h"
#include "attest/vf.h"

namespace {

using namespace attest;

void BM_EncodeDecode(benchmark::State& state) {
  isa::Instruction in;
  in.opcode = isa::Opcode::kImad;
  in.dst = 5;
  in.srcs = {isa::Operand::Reg(5), isa::Operand::Imm(1 << 12), isa::Operand::Reg(6)};
  in.control.stall = 1;
  for (auto _ : state) {
    const isa::Word128 w = isa::Encode(in);
    benchmark::DoNotOptimize(isa::Decode(w));
  }
}
BENCHMARK(BM_EncodeDecode);

void BM_EmitParse(benchmark::State& state) {
  const std::string text = "B......|R.|W.|Y0|S1| IMAD.U32 R5, R5, 0x1000, R6;";
  for (auto _ : state) benchmark::DoNotOptimize(isa::EmitAsm(isa::ParseAsm(text)));
}
BENCHMARK(BM_EmitParse);

// Simulated cycles per second on the desk device.
void BM_DeviceRun(benchmark::State& state) {
  experiment::Profile p = experiment::BuiltinProfile("quick");
  p.vf.iterations = static_cast<uint32_t>(state.range(0));
  p.vf.self_modifying = state.range(1) != 0;
  if (p.vf.self_modifying) p.vf.body_instructions = 8342;
  const vf::VFImage vf = vf::BuildVf(p.vf, 1);
  const isa::Image img = vf::BindIterations(vf, p.vf.iterations);
  verifier::ChallengeGenerator gen(1);
  const vf::Challenge ch = gen.Next(1, p.vf.iterations);
  uint64_t cycles = 0;
  for (auto _ : state) cycles += verifier::Measure(img, ch, p.platform, {true, 7}).cycles;
  state.counters["sim_cycles/s"] =
      benchmark::Counter(static_cast<double>(cycles), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_DeviceRun)->Args({1000, 0})->Args({20, 1})->Unit(benchmark::kMillisecond);

void BM_ChecksumReference(benchmark::State& state) {
  experiment::Profile p = experiment::BuiltinProfile("quick");
  p.vf.iterations = static_cast<uint32_t>(state.range(0));
  const vf::VFImage vf = vf::BuildVf(p.vf, 1);
  verifier::ChallengeGenerator gen(1);
  const vf::Challenge ch = gen.Next(1, p.vf.iterations);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vf::ChecksumReference(vf, ch, p.platform.topology()));
  }
}
BENCHMARK(BM_ChecksumReference)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_BuildVf(benchmark::State& state) {
  vf::VFParams params;
  params.body_instructions = static_cast<uint32_t>(state.range(0));
  params.self_modifying = params.body_instructions > 1000;
  for (auto _ : state) benchmark::DoNotOptimize(vf::BuildVf(params, 1));
}
BENCHMARK(BM_BuildVf)->Arg(428)->Arg(8342)->Unit(benchmark::kMillisecond);

void BM_Sha256(benchmark::State& state) {
  const crypto::Bytes data(static_cast<size_t>(state.range(0)), 0xAB);
  for (auto _ : state) benchmark::DoNotOptimize(crypto::Sha256(data));
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_Sha256)->Arg(64)->Arg(4096);

void BM_AesCmac(benchmark::State& state) {
  const crypto::Key128 key{};
  const crypto::Bytes data(static_cast<size_t>(state.range(0)), 0x11);
  for (auto _ : state) benchmark::DoNotOptimize(crypto::AesCmac(key, data));
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_AesCmac)->Arg(64)->Arg(4096);

void BM_EntropyReport(benchmark::State& state) {
  crypto::Csprng rng(1);
  const auto sample = rng.Take(65536);
  for (auto _ : state) benchmark::DoNotOptimize(trng::Report(sample));
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) * 65536);
}
BENCHMARK(BM_EntropyReport);

// Raw race bits per second; reported, not asserted.
void BM_RawBits(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(trng::RawBits(2, 1 << 16));
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * (1 << 16));
}
BENCHMARK(BM_RawBits)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include "attest/trng.h"

#include <sched.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <thread>

#include "attest/crypto.h"
#include "attest/error.h"

namespace attest::trng {

int AvailableParallelism() {
  cpu_set_t set;
  CPU_ZERO(&set);
  if (sched_getaffinity(0, sizeof(set), &set) == 0) return std::max(1, CPU_COUNT(&set));
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<uint8_t> VonNeumann(std::span<const uint8_t> bits) {
  std::vector<uint8_t> out;
  out.reserve(bits.size() / 4);
  for (size_t i = 0; i + 1 < bits.size(); i += 2) {
    const uint8_t a = bits[i] & 1, b = bits[i + 1] & 1;
    if (a != b) out.push_back(a);
  }
  return out;
}

std::vector<uint8_t> Condition(std::span<const uint8_t> debiased_bits) {
  const size_t block_bits = kConditionBlockBytes * 8;
  std::vector<uint8_t> out;
  std::array<uint8_t, kConditionBlockBytes> block{};
  for (size_t start = 0; start + block_bits <= debiased_bits.size(); start += block_bits) {
    block.fill(0);
    for (size_t i = 0; i < block_bits; ++i) {
      block[i / 8] |= static_cast<uint8_t>((debiased_bits[start + i] & 1) << (7 - i % 8));
    }
    const crypto::Digest d = crypto::Sha256(block);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

std::vector<uint8_t> RawBits(int workers, size_t bits) {
  // Every worker does a non-atomic read-increment-write on one shared counter
  // and keeps the low bit of what it read. Lost and interleaved updates
  // between cores decide the values.
  std::atomic<uint64_t> counter{0};
  std::atomic<int> ready{0};
  const size_t per = (bits + workers - 1) / workers;
  std::vector<std::vector<uint8_t>> seen(workers, std::vector<uint8_t>(per));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      ready.fetch_add(1);
      while (ready.load() < workers) {
      }
      auto& mine = seen[w];
      for (size_t i = 0; i < per; ++i) {
        const uint64_t v = counter.load(std::memory_order_relaxed);
        counter.store(v + 1, std::memory_order_relaxed);
        mine[i] = static_cast<uint8_t>(v & 1);
      }
    });
  }
  for (auto& t : pool) t.join();
  std::vector<uint8_t> out;
  out.reserve(per * workers);
  for (size_t i = 0; i < per; ++i) {
    for (int w = 0; w < workers; ++w) out.push_back(seen[w][i]);
  }
  return out;
}

std::vector<uint8_t> Harvest(int workers, size_t bytes) {
  if (workers < 2) {
    throw Error(ErrorCode::kInsufficientParallelism, "harvest needs at least 2 workers",
                workers);
  }
  const int cpus = AvailableParallelism();
  if (cpus < 2) {
    throw Error(ErrorCode::kInsufficientParallelism,
                "only one CPU available; racing workers would not overlap", cpus);
  }
  std::vector<uint8_t> out;
  // A block of 64 debiased bytes needs about 2048 raw bits at best.
  size_t want = std::max<size_t>(1 << 16, (bytes + 31) / 32 * 4096);
  while (out.size() < bytes) {
    const auto raw = RawBits(workers, want);
    const auto cond = Condition(VonNeumann(raw));
    out.insert(out.end(), cond.begin(), cond.end());
    want = std::max<size_t>(1 << 16, (bytes - std::min(bytes, out.size()) + 31) / 32 * 4096);
  }
  out.resize(bytes);
  return out;
}

double ChiSquareSurvival(double statistic, double dof) {
  return boost::math::gamma_q(dof / 2, statistic / 2);
}

bool EntropyReport::PassesMonobit(double tolerance) const {
  return std::abs(monobit - 0.5) < tolerance;
}

bool EntropyReport::PassesChiSquare(double alpha) const { return chi_square_p > alpha; }

EntropyReport Report(std::span<const uint8_t> sample) {
  if (sample.size() < kMinReportBytes) {
    throw Error(ErrorCode::kSampleTooSmall, "entropy report needs at least 1 KiB",
                static_cast<int64_t>(sample.size()));
  }
  std::array<uint64_t, 256> hist{};
  uint64_t ones = 0, sum = 0;
  for (uint8_t b : sample) {
    ++hist[b];
    ones += std::popcount(b);
    sum += b;
  }
  const double n = static_cast<double>(sample.size());
  EntropyReport r;
  r.bytes = sample.size();
  const double expected = n / 256;
  for (uint64_t c : hist) {
    if (c) {
      const double p = c / n;
      r.bits_per_byte -= p * std::log2(p);
    }
    const double d = c - expected;
    r.chi_square += d * d / expected;
  }
  r.bits_per_byte = std::clamp(r.bits_per_byte, 0.0, 8.0);
  r.chi_square_p = ChiSquareSurvival(r.chi_square, 255);
  r.monobit = ones / (8 * n);
  r.mean = sum / n;
  return r;
}

}  // namespace attest::trng

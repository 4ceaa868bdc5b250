#include "attest/trng.h"

#include <gtest/gtest.h>

#include "attest/crypto.h"
#include "attest/error.h"

namespace attest::trng {
namespace {

TEST(Trng, AllZeroSample) {
  const std::vector<uint8_t> zeros(4096, 0);
  const EntropyReport r = Report(zeros);
  EXPECT_EQ(r.bits_per_byte, 0.0);
  EXPECT_LT(r.chi_square_p, 1e-9);
  EXPECT_EQ(r.monobit, 0.0);
  EXPECT_EQ(r.mean, 0.0);
  // (4096 - 16)^2 / 16 + 255 * 16
  EXPECT_DOUBLE_EQ(r.chi_square, 1044480.0);
}

TEST(Trng, AlternatingIsOneBit) {
  std::vector<uint8_t> s(4096);
  for (size_t i = 0; i < s.size(); ++i) s[i] = i % 2 ? 0xFF : 0x00;
  const EntropyReport r = Report(s);
  EXPECT_DOUBLE_EQ(r.bits_per_byte, 1.0);
  EXPECT_DOUBLE_EQ(r.monobit, 0.5);
  EXPECT_DOUBLE_EQ(r.mean, 127.5);
}

TEST(Trng, CsprngSamplePasses) {
  crypto::Csprng rng(2024);
  const auto s = rng.Take(65536);
  const EntropyReport r = Report(s);
  EXPECT_GE(r.bits_per_byte, 7.99);
  EXPECT_GT(r.chi_square_p, 0.001);
  EXPECT_TRUE(r.PassesMonobit());
  EXPECT_EQ(r.bytes, 65536u);
}

TEST(Trng, ChiSquareTailMatchesOracle) {
  // Values from an independent statistics package.
  EXPECT_NEAR(ChiSquareSurvival(255, 255), 0.48822252177040637, 1e-12);
  EXPECT_NEAR(ChiSquareSurvival(300, 255), 0.02772752205390483, 1e-12);
  EXPECT_NEAR(ChiSquareSurvival(200, 255), 0.9954254445419519, 1e-12);
}

TEST(Trng, SmallSampleRejected) {
  const std::vector<uint8_t> s(1023, 7);
  try {
    Report(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSampleTooSmall);
  }
  EXPECT_NO_THROW(Report(std::vector<uint8_t>(1024, 7)));
}

TEST(Trng, VonNeumannPairs) {
  const std::vector<uint8_t> bits = {0, 1, 1, 0, 0, 0, 1, 1, 1, 0, 0};
  EXPECT_EQ(VonNeumann(bits), (std::vector<uint8_t>{0, 1, 1}));
}

TEST(Trng, VonNeumannRemovesBias) {
  // Independent bits with P(1) = 0.8 come out balanced.
  crypto::Csprng rng(5);
  std::vector<uint8_t> bits(400000);
  for (auto& b : bits) b = rng.Below(10) < 8;
  const auto out = VonNeumann(bits);
  double ones = 0;
  for (uint8_t b : out) ones += b;
  EXPECT_NEAR(ones / out.size(), 0.5, 0.01);
  EXPECT_NEAR(static_cast<double>(out.size()) / (bits.size() / 2), 2 * 0.8 * 0.2, 0.01);
}

TEST(Trng, ConditionHashesFullBlocks) {
  std::vector<uint8_t> bits(512 * 2 + 100, 1);
  const auto out = Condition(bits);
  ASSERT_EQ(out.size(), 64u);
  const std::vector<uint8_t> ff(64, 0xFF);
  const crypto::Digest d = crypto::Sha256(ff);
  EXPECT_TRUE(std::equal(d.begin(), d.end(), out.begin()));
  EXPECT_TRUE(std::equal(d.begin(), d.end(), out.begin() + 32));
}

TEST(Trng, OneWorkerIsRejected) {
  try {
    Harvest(1, 1024);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientParallelism);
  }
}

TEST(Trng, RawBitsHasRequestedLength) {
  EXPECT_GE(RawBits(2, 1001).size(), 1001u);
}

TEST(Trng, HarvestNeedsParallelHardware) {
  if (AvailableParallelism() < 2) {
    EXPECT_THROW(Harvest(4, 1024), Error);
    GTEST_SKIP() << "single CPU: racing workers cannot overlap";
  }
  const auto a = Harvest(4, 1024);
  const auto b = Harvest(4, 1024);
  EXPECT_EQ(a.size(), 1024u);
  EXPECT_NE(a, b);
}

}  // namespace
}  // namespace attest::trng

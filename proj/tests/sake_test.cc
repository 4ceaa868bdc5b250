#include "attest/sake.h"

#include <gtest/gtest.h>

#include <json.hpp>

#include "attest/error.h"

namespace attest::sake {
namespace {

// Independent square-and-multiply oracle for the small group.
uint64_t PowMod(uint64_t b, uint64_t e, uint64_t m) {
  uint64_t r = 1;
  b %= m;
  while (e) {
    if (e & 1) r = r * b % m;
    b = b * b % m;
    e >>= 1;
  }
  return r;
}

// Checksum stand-in: any fixed function of the challenge works here.
uint64_t FakeChecksum(const vf::Challenge& ch) {
  uint64_t c = ch.nonce;
  for (uint64_t s : ch.seeds) c = c * 0x100000001b3ull ^ s;
  return c;
}

constexpr double kCycles = 10000;

Prover HonestProver() {
  return [](const vf::Challenge& ch) { return ProverRun{FakeChecksum(ch), kCycles}; };
}

verifier::TimingModel Model() {
  verifier::TimingModel m;
  m.t_avg = kCycles;
  m.threshold = kCycles;
  m.runs = 100;
  return m;
}

struct Pair {
  crypto::Csprng vrng;
  crypto::Csprng drng;
  VerifierSession v;
  DeviceSession d;

  Pair(const DhGroup& g, uint64_t seed, std::optional<BigInt> a = {},
       std::optional<BigInt> b = {})
      : vrng(seed),
        drng(seed + 1),
        v(g, vrng, Model(), FakeChecksum, Options(a)),
        d(g, drng, std::move(b)) {}

  static VerifierSession::Options Options(std::optional<BigInt> a) {
    VerifierSession::Options o;
    o.num_sms = 2;
    o.iterations = 100;
    o.exponent = std::move(a);
    return o;
  }
};

TEST(Sake, TestGroupCommitment) {
  crypto::Csprng rng(1);
  VerifierSession::Options o;
  o.exponent = BigInt(6);
  VerifierSession v(DhGroup::Test(), rng, Model(), FakeChecksum, o);
  const Message m = v.Start(0);
  // v0 = 5^6 mod 23 = 8, one byte wide.
  const HashChain chain = HashChain::From(Bytes{8});
  EXPECT_EQ(PowMod(5, 6, 23), 8u);
  EXPECT_EQ(m.payload, Bytes(chain.c2.begin(), chain.c2.end()));
  EXPECT_EQ(chain.c2, crypto::Sha256(crypto::Sha256(Bytes{8})));
}

TEST(Sake, TestGroupSharedKeyIsTwo) {
  Pair p(DhGroup::Test(), 5, BigInt(6), BigInt(15));
  Channel ch;
  const ProtocolResult r = RunProtocol(p.v, p.d, ch, HonestProver());
  const uint64_t oracle = PowMod(PowMod(5, 15, 23), 6, 23);
  EXPECT_EQ(oracle, PowMod(PowMod(5, 6, 23), 15, 23));
  EXPECT_EQ(oracle, 2u);
  EXPECT_EQ(r.verifier_key, BigInt(oracle));
  EXPECT_EQ(r.device_key, BigInt(oracle));
  EXPECT_EQ(r.elapsed, kCycles);
}

TEST(Sake, RandomExponentsAgreeInBothGroups) {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Pair p(DhGroup::Test(), seed * 7);
    Channel ch;
    const ProtocolResult r = RunProtocol(p.v, p.d, ch, HonestProver());
    EXPECT_EQ(r.verifier_key, r.device_key);
  }
  Pair p(DhGroup::Modp2048(), 3);
  Channel ch;
  const ProtocolResult r = RunProtocol(p.v, p.d, ch, HonestProver());
  EXPECT_EQ(r.verifier_key, r.device_key);
  EXPECT_GT(r.verifier_key.bits(), 1024u);
}

TEST(Sake, SameSeedSameChain) {
  Pair a(DhGroup::Modp2048(), 9), b(DhGroup::Modp2048(), 9);
  EXPECT_EQ(a.v.Start(0).payload, b.v.Start(0).payload);
}

TEST(Sake, EverySingleBitTamperAbortsBeforeKeyDerivation) {
  for (int type = 1; type <= 6; ++type) {
    for (int bit = 0; bit < 64; ++bit) {
      Pair p(DhGroup::Test(), 100 + type, BigInt(6), BigInt(15));
      bool touched = false;
      Channel ch(0, [&](Message& m, double&) {
        if (static_cast<int>(m.type) != type) return;
        const size_t bits = m.payload.size() * 8;
        const size_t at = static_cast<size_t>(bit) % std::min<size_t>(64, bits);
        m.payload[at / 8] ^= static_cast<uint8_t>(0x80 >> (at % 8));
        touched = true;
      });
      try {
        RunProtocol(p.v, p.d, ch, HonestProver());
        ADD_FAILURE() << "type " << type << " bit " << bit << " not detected";
      } catch (const Error& e) {
        EXPECT_TRUE(e.code() == ErrorCode::kAbortMac ||
                    e.code() == ErrorCode::kAbortChainMismatch)
            << e.what();
      }
      EXPECT_TRUE(touched);
      EXPECT_FALSE(p.v.key().has_value());
      // The device only derives after v0, which it checks first.
      if (type <= static_cast<int>(MsgType::kV0)) EXPECT_FALSE(p.d.key().has_value());
    }
  }
}

TEST(Sake, SpecificTamperReasons) {
  auto run = [](MsgType target) {
    Pair p(DhGroup::Test(), 77, BigInt(6), BigInt(15));
    Channel ch(0, [&](Message& m, double&) {
      if (m.type == target) m.payload[0] ^= 1;
    });
    try {
      RunProtocol(p.v, p.d, ch, HonestProver());
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kConfigError;
  };
  EXPECT_EQ(run(MsgType::kV2), ErrorCode::kAbortMac);
  EXPECT_EQ(run(MsgType::kW2Mac), ErrorCode::kAbortMac);
  EXPECT_EQ(run(MsgType::kV1), ErrorCode::kAbortChainMismatch);
  EXPECT_EQ(run(MsgType::kW1K), ErrorCode::kAbortChainMismatch);
  EXPECT_EQ(run(MsgType::kV0), ErrorCode::kAbortChainMismatch);
  EXPECT_EQ(run(MsgType::kW0), ErrorCode::kAbortChainMismatch);
}

TEST(Sake, DelayedCommitmentTimesOut) {
  Pair p(DhGroup::Test(), 4);
  Channel ch(0, [](Message& m, double& delay) {
    if (m.type == MsgType::kW2Mac) delay = 0.06 * kCycles;
  });
  try {
    RunProtocol(p.v, p.d, ch, HonestProver());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAbortTiming);
  }
  // Within the 5% slack is fine.
  Pair q(DhGroup::Test(), 4);
  Channel ok(0, [](Message& m, double& delay) {
    if (m.type == MsgType::kW2Mac) delay = 0.04 * kCycles;
  });
  EXPECT_NO_THROW(RunProtocol(q.v, q.d, ok, HonestProver()));
}

TEST(Sake, WrongChecksumFailsMac) {
  Pair p(DhGroup::Test(), 8);
  Channel ch;
  const Prover liar = [](const vf::Challenge& c) {
    return ProverRun{FakeChecksum(c) ^ 1, kCycles};
  };
  try {
    RunProtocol(p.v, p.d, ch, liar);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAbortMac);
  }
}

TEST(Sake, ForgedCommitmentsNeverAccepted) {
  crypto::Csprng adv(12345);
  int accepted = 0;
  for (int i = 0; i < 100000; ++i) {
    crypto::Csprng rng(static_cast<uint64_t>(i));
    VerifierSession v(DhGroup::Test(), rng, Model(), FakeChecksum, {});
    v.Start(0);
    try {
      v.OnCommitment({MsgType::kW2Mac, adv.Take(48)}, 1);
      ++accepted;
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::kAbortMac);
    }
  }
  EXPECT_EQ(accepted, 0);
}

TEST(Sake, MacBoundToChecksum) {
  crypto::Csprng rng(2);
  DeviceSession d(DhGroup::Test(), rng);
  const Digest v2 = crypto::Sha256(Bytes{1});
  const Message m = d.Respond({MsgType::kV2, Bytes(v2.begin(), v2.end())}, 42);
  const std::span<const uint8_t> w2(m.payload.data(), 32);
  const crypto::Tag tag = crypto::AesCmac(ChecksumKey(42), w2);
  EXPECT_TRUE(std::equal(tag.begin(), tag.end(), m.payload.begin() + 32));
  const crypto::Tag other = crypto::AesCmac(ChecksumKey(42 ^ 1), w2);
  EXPECT_FALSE(std::equal(other.begin(), other.end(), m.payload.begin() + 32));
}

TEST(Sake, DeviceChainIsReproducible) {
  const Digest v2 = crypto::Sha256(Bytes{1});
  crypto::Csprng r1(6), r2(6);
  DeviceSession a(DhGroup::Test(), r1), b(DhGroup::Test(), r2);
  a.Respond({MsgType::kV2, Bytes(v2.begin(), v2.end())}, 9);
  b.Respond({MsgType::kV2, Bytes(v2.begin(), v2.end())}, 9);
  EXPECT_EQ(a.chain().c0, b.chain().c0);
  EXPECT_EQ(a.chain().c2, b.chain().c2);
  EXPECT_EQ(a.chain().c1, crypto::Sha256(a.chain().c0));
}

TEST(Sake, OutOfOrderStepsRejected) {
  crypto::Csprng rng(1);
  DeviceSession d(DhGroup::Test(), rng);
  auto code = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kConfigError;
  };
  EXPECT_EQ(code([&] { d.OnV1({MsgType::kV1, Bytes(32)}); }), ErrorCode::kProtocolState);
  VerifierSession v(DhGroup::Test(), rng, Model(), FakeChecksum, {});
  EXPECT_EQ(code([&] { v.RevealV1(); }), ErrorCode::kProtocolState);
  EXPECT_EQ(code([&] { v.RevealV0(); }), ErrorCode::kProtocolState);
  v.Start(0);
  EXPECT_EQ(code([&] { v.Start(0); }), ErrorCode::kProtocolState);
  EXPECT_EQ(code([&] { v.OnFinal({MsgType::kW0, Bytes(32)}); }), ErrorCode::kProtocolState);
}

TEST(Sake, WireFrames) {
  const Message m{MsgType::kW1K, Bytes{1, 2, 3}};
  const Bytes wire = Encode(m);
  EXPECT_EQ(wire, (Bytes{4, 0, 0, 0, 3, 1, 2, 3}));
  const Message back = Decode(wire);
  EXPECT_EQ(back.type, m.type);
  EXPECT_EQ(back.payload, m.payload);
  EXPECT_THROW(Decode(Bytes{4, 0, 0, 0, 4, 1}), Error);
  EXPECT_THROW(Decode(Bytes{9, 0, 0, 0, 0}), Error);
  EXPECT_THROW(Decode(Bytes{1, 0}), Error);
}

TEST(Sake, TranscriptJsonListsSixMessages) {
  Pair p(DhGroup::Test(), 5, BigInt(6), BigInt(15));
  Channel ch(3);
  std::vector<TranscriptEntry> t;
  RunProtocol(p.v, p.d, ch, HonestProver(), &t);
  ASSERT_EQ(t.size(), 6u);
  const nlohmann::json j = nlohmann::json::parse(TranscriptJson(t));
  EXPECT_EQ(j[0]["type"], "V2");
  EXPECT_EQ(j[1]["from"], "device");
  EXPECT_EQ(j[5]["type"], "W0");
  EXPECT_EQ(j[1]["time"], 3 + kCycles);
}

TEST(Sake, ChallengeFromCommitmentIsDeterministic) {
  const Digest v2 = crypto::Sha256(Bytes{7});
  const vf::Challenge a = ChallengeFromCommitment(v2, 3, 50);
  const vf::Challenge b = ChallengeFromCommitment(v2, 3, 50);
  EXPECT_EQ(a.seeds, b.seeds);
  EXPECT_EQ(a.nonce, b.nonce);
  EXPECT_EQ(a.iterations, 50u);
  EXPECT_NE(a.seeds[0], a.seeds[1]);
}

TEST(KernelHash, ZeroNonceEmptyCode) {
  const Bytes r(32, 0);
  EXPECT_EQ(crypto::ToHex(AuthenticateKernel(r, Bytes{})),
            "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925");
}

TEST(KernelHash, EveryBitFlipChangesHash) {
  crypto::Csprng rng(3);
  const Bytes r = rng.Take(32);
  Bytes code = rng.Take(64);
  const Digest h = AuthenticateKernel(r, code);
  EXPECT_EQ(h, AuthenticateKernel(r, code));
  for (size_t i = 0; i < code.size() * 8; ++i) {
    code[i / 8] ^= static_cast<uint8_t>(1u << (i % 8));
    EXPECT_NE(AuthenticateKernel(r, code), h);
    code[i / 8] ^= static_cast<uint8_t>(1u << (i % 8));
  }
}

TEST(Payload, RoundTripsAndDetectsFlips) {
  crypto::Csprng rng(10);
  const BigInt sk(2);
  for (Protection mode : {Protection::kAuthenticate, Protection::kEncryptAuthenticate}) {
    for (size_t n : {0, 1, 15, 16, 17, 1000}) {
      const Bytes data = rng.Take(n);
      Bytes blob = ProtectPayload(sk, data, mode, rng);
      EXPECT_EQ(UnprotectPayload(sk, blob, mode), data);
      if (mode == Protection::kEncryptAuthenticate && n >= 16) {
        EXPECT_FALSE(std::search(blob.begin(), blob.end(), data.begin(), data.end()) !=
                     blob.end());
      }
      for (size_t bit : {size_t{0}, blob.size() * 4, blob.size() * 8 - 1}) {
        blob[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
        try {
          UnprotectPayload(sk, blob, mode);
          ADD_FAILURE();
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::kTagMismatch);
        }
        blob[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
      }
      EXPECT_THROW(UnprotectPayload(BigInt(3), blob, mode), Error);
    }
  }
}

}  // namespace
}  // namespace attest::sake

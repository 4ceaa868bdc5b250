#include "attest/sake.h"

#include <cstring>
#include <json.hpp>

#include "attest/error.h"

namespace attest::sake {
namespace {

using crypto::Key128;

constexpr size_t kDigest = 32;
constexpr size_t kTag = 16;

Bytes Cat(std::initializer_list<std::span<const uint8_t>> parts) {
  Bytes out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Digest ToDigest(std::span<const uint8_t> b) {
  Digest d{};
  std::memcpy(d.data(), b.data(), d.size());
  return d;
}

void CheckSize(const Message& m, MsgType type, size_t size) {
  if (m.type != type || m.payload.size() != size) {
    throw Error(ErrorCode::kProtocolState,
                "unexpected " + std::string(MsgTypeName(m.type)) + " message");
  }
}

bool TagMatches(const Key128& key, std::span<const uint8_t> data,
                std::span<const uint8_t> tag) {
  return crypto::ConstantTimeEqual(crypto::AesCmac(key, data), tag);
}

BigInt RandomExponent(const DhGroup& g, crypto::Csprng& rng) {
  const size_t bytes = static_cast<size_t>((g.exponent_bits + 7) / 8);
  Bytes e = rng.Take(bytes);
  if (const int extra = static_cast<int>(bytes * 8) - g.exponent_bits; extra > 0) {
    e[0] &= static_cast<uint8_t>(0xff >> extra);
  }
  BigInt x = BigInt::FromBytes(e);
  return x == BigInt(0) ? BigInt(1) : x;
}

}  // namespace

DhGroup DhGroup::Test() { return {BigInt(23), BigInt(5), 4}; }

DhGroup DhGroup::Modp2048() { return {BigInt::Modp2048Prime(), BigInt(2), 256}; }

HashChain HashChain::From(Bytes c0) {
  HashChain h;
  h.c0 = std::move(c0);
  h.c1 = crypto::Sha256(h.c0);
  h.c2 = crypto::Sha256(h.c1);
  return h;
}

std::string_view MsgTypeName(MsgType type) {
  switch (type) {
    case MsgType::kV2: return "V2";
    case MsgType::kW2Mac: return "W2MAC";
    case MsgType::kV1: return "V1";
    case MsgType::kW1K: return "W1K";
    case MsgType::kV0: return "V0";
    case MsgType::kW0: return "W0";
  }
  return "?";
}

Bytes Encode(const Message& m) {
  const uint32_t n = static_cast<uint32_t>(m.payload.size());
  Bytes out(5 + m.payload.size());
  out[0] = static_cast<uint8_t>(m.type);
  for (int i = 0; i < 4; ++i) out[1 + i] = static_cast<uint8_t>(n >> (24 - 8 * i));
  std::copy(m.payload.begin(), m.payload.end(), out.begin() + 5);
  return out;
}

Message Decode(std::span<const uint8_t> wire) {
  if (wire.size() < 5) throw Error(ErrorCode::kProtocolState, "short frame");
  const uint8_t t = wire[0];
  if (t < 1 || t > 6) throw Error(ErrorCode::kProtocolState, "unknown message type", t);
  const uint32_t n = static_cast<uint32_t>(wire[1]) << 24 | wire[2] << 16 | wire[3] << 8 | wire[4];
  if (wire.size() != 5 + static_cast<size_t>(n)) {
    throw Error(ErrorCode::kProtocolState, "frame length mismatch");
  }
  return {static_cast<MsgType>(t), Bytes(wire.begin() + 5, wire.end())};
}

vf::Challenge ChallengeFromCommitment(const Digest& v2, int num_sms, uint32_t iterations) {
  vf::Challenge ch;
  ch.iterations = iterations;
  auto le64 = [](std::span<const uint8_t> b) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  };
  for (int s = 0; s < num_sms; ++s) {
    const uint8_t idx[4] = {static_cast<uint8_t>(s), static_cast<uint8_t>(s >> 8),
                            static_cast<uint8_t>(s >> 16), static_cast<uint8_t>(s >> 24)};
    ch.seeds.push_back(le64(crypto::Sha256(v2, idx)));
  }
  ch.nonce = le64(v2);
  return ch;
}

Key128 ChecksumKey(uint64_t c) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(c >> (8 * i));
  return crypto::DeriveKey(b);
}

// --- verifier ------------------------------------------------------------------

VerifierSession::VerifierSession(DhGroup group, crypto::Csprng& rng,
                                 verifier::TimingModel model, Expect expect,
                                 Options options)
    : group_(std::move(group)),
      model_(model),
      expect_(std::move(expect)),
      opts_(std::move(options)) {
  a_ = opts_.exponent ? *opts_.exponent : RandomExponent(group_, rng);
  v_ = HashChain::From(BigInt::ModExp(group_.g, a_, group_.p).ToBytes(group_.width()));
}

void VerifierSession::Require(State s) const {
  if (state_ != s) throw Error(ErrorCode::kProtocolState, "verifier step out of order");
}

Message VerifierSession::Start(double now) {
  Require(State::kIdle);
  t0_ = now;
  challenge_ = ChallengeFromCommitment(v_.c2, opts_.num_sms, opts_.iterations);
  state_ = State::kAwaitCommit;
  return {MsgType::kV2, Bytes(v_.c2.begin(), v_.c2.end())};
}

void VerifierSession::OnCommitment(const Message& m, double now) {
  Require(State::kAwaitCommit);
  CheckSize(m, MsgType::kW2Mac, kDigest + kTag);
  t1_ = now;
  if (t1_ - t0_ > bound()) {
    throw Error(ErrorCode::kAbortTiming, "response after the expected time");
  }
  const std::span<const uint8_t> w2(m.payload.data(), kDigest);
  const std::span<const uint8_t> tag(m.payload.data() + kDigest, kTag);
  if (!TagMatches(ChecksumKey(expect_(challenge_)), w2, tag)) {
    throw Error(ErrorCode::kAbortMac, "commitment not bound to the expected checksum");
  }
  w2_ = ToDigest(w2);
  state_ = State::kRevealV1;
}

Message VerifierSession::RevealV1() {
  Require(State::kRevealV1);
  state_ = State::kAwaitKey;
  return {MsgType::kV1, Bytes(v_.c1.begin(), v_.c1.end())};
}

void VerifierSession::OnKeyShare(const Message& m) {
  Require(State::kAwaitKey);
  const size_t w = group_.width();
  CheckSize(m, MsgType::kW1K, kDigest + w + kTag);
  const std::span<const uint8_t> w1(m.payload.data(), kDigest);
  const std::span<const uint8_t> k(m.payload.data() + kDigest, w);
  const std::span<const uint8_t> tag(m.payload.data() + kDigest + w, kTag);
  if (crypto::Sha256(w1) != w2_) {
    throw Error(ErrorCode::kAbortChainMismatch, "w1 does not hash to w2");
  }
  if (!TagMatches(crypto::DeriveKey(w2_), k, tag)) {
    throw Error(ErrorCode::kAbortMac, "key share MAC");
  }
  w1_ = ToDigest(w1);
  k_ = BigInt::FromBytes(k);
  state_ = State::kRevealV0;
}

Message VerifierSession::RevealV0() {
  Require(State::kRevealV0);
  state_ = State::kAwaitFinal;
  return {MsgType::kV0, v_.c0};
}

void VerifierSession::OnFinal(const Message& m) {
  Require(State::kAwaitFinal);
  CheckSize(m, MsgType::kW0, kDigest);
  if (crypto::Sha256(m.payload) != w1_) {
    throw Error(ErrorCode::kAbortChainMismatch, "w0 does not hash to w1");
  }
  key_ = BigInt::ModExp(k_, a_, group_.p);
  state_ = State::kDone;
}

// --- device --------------------------------------------------------------------

DeviceSession::DeviceSession(DhGroup group, crypto::Csprng& rng,
                             std::optional<BigInt> exponent)
    : group_(std::move(group)), rng_(rng), b_override_(std::move(exponent)) {}

void DeviceSession::Require(State s) const {
  if (state_ != s) throw Error(ErrorCode::kProtocolState, "device step out of order");
}

Message DeviceSession::Respond(const Message& m, uint64_t c) {
  Require(State::kIdle);
  CheckSize(m, MsgType::kV2, kDigest);
  v2_ = ToDigest(m.payload);
  uint8_t cb[8];
  for (int i = 0; i < 8; ++i) cb[i] = static_cast<uint8_t>(c >> (8 * i));
  const Bytes r = rng_.Take(32);
  const Digest w0 = crypto::Sha256(cb, r);
  w_ = HashChain::From(Bytes(w0.begin(), w0.end()));
  const crypto::Tag tag = crypto::AesCmac(ChecksumKey(c), w_.c2);
  state_ = State::kAwaitV1;
  return {MsgType::kW2Mac, Cat({w_.c2, tag})};
}

Message DeviceSession::OnV1(const Message& m) {
  Require(State::kAwaitV1);
  CheckSize(m, MsgType::kV1, kDigest);
  if (crypto::Sha256(m.payload) != v2_) {
    throw Error(ErrorCode::kAbortChainMismatch, "v1 does not hash to v2");
  }
  v1_ = ToDigest(m.payload);
  b_ = b_override_ ? *b_override_ : RandomExponent(group_, rng_);
  const Bytes k = BigInt::ModExp(group_.g, b_, group_.p).ToBytes(group_.width());
  const crypto::Tag tag = crypto::AesCmac(crypto::DeriveKey(w_.c2), k);
  state_ = State::kAwaitV0;
  return {MsgType::kW1K, Cat({w_.c1, k, tag})};
}

Message DeviceSession::OnV0(const Message& m) {
  Require(State::kAwaitV0);
  CheckSize(m, MsgType::kV0, group_.width());
  if (crypto::Sha256(m.payload) != v1_) {
    throw Error(ErrorCode::kAbortChainMismatch, "v0 does not hash to v1");
  }
  key_ = BigInt::ModExp(BigInt::FromBytes(m.payload), b_, group_.p);
  state_ = State::kDone;
  return {MsgType::kW0, w_.c0};
}

// --- channel and driver ----------------------------------------------------------

void Channel::Send(Message m, double now) {
  double delay = latency_;
  if (tamper_) tamper_(m, delay);
  queue_.push_back({Encode(m), now + delay});
}

Message Channel::Receive(double& now) {
  if (queue_.empty()) throw Error(ErrorCode::kProtocolState, "channel empty");
  InFlight f = std::move(queue_.front());
  queue_.pop_front();
  now = std::max(now, f.arrival);
  return Decode(f.wire);
}

ProtocolResult RunProtocol(VerifierSession& verifier, DeviceSession& device,
                           Channel& channel, const Prover& prover,
                           std::vector<TranscriptEntry>* transcript) {
  double now = 0;
  auto log = [&](const char* from, const Message& m) {
    if (transcript) transcript->push_back({from, m.type, m.payload, now});
  };
  auto send = [&](const char* from, Message m) {
    log(from, m);
    channel.Send(std::move(m), now);
  };

  send("verifier", verifier.Start(now));
  Message m = channel.Receive(now);
  // The device derives its challenge from whatever v2 it actually received.
  const vf::Challenge ch = ChallengeFromCommitment(
      ToDigest(m.payload.size() >= kDigest ? m.payload : Bytes(kDigest)),
      static_cast<int>(verifier.challenge().seeds.size()), verifier.challenge().iterations);
  const ProverRun run = prover(ch);
  now += run.cycles;
  send("device", device.Respond(m, run.checksum));
  const Message commit = channel.Receive(now);
  verifier.OnCommitment(commit, now);

  send("verifier", verifier.RevealV1());
  send("device", device.OnV1(channel.Receive(now)));
  verifier.OnKeyShare(channel.Receive(now));

  send("verifier", verifier.RevealV0());
  send("device", device.OnV0(channel.Receive(now)));
  verifier.OnFinal(channel.Receive(now));

  return {*verifier.key(), *device.key(), verifier.elapsed()};
}

std::string TranscriptJson(const std::vector<TranscriptEntry>& transcript) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : transcript) {
    j.push_back({{"from", e.from},
                 {"type", MsgTypeName(e.type)},
                 {"payload", crypto::ToHex(e.payload)},
                 {"time", e.time}});
  }
  return j.dump(2);
}

Digest AuthenticateKernel(std::span<const uint8_t> r, std::span<const uint8_t> code) {
  return crypto::Sha256(r, code);
}

namespace {

struct PayloadKeys {
  Key128 enc{};
  Key128 mac{};
};

PayloadKeys KeysFor(const BigInt& sk) {
  const Digest d = crypto::Sha256(sk.ToBytes());
  PayloadKeys k;
  std::memcpy(k.enc.data(), d.data(), 16);
  std::memcpy(k.mac.data(), d.data() + 16, 16);
  return k;
}

}  // namespace

Bytes ProtectPayload(const BigInt& sk, std::span<const uint8_t> data, Protection mode,
                     crypto::Csprng& rng) {
  const PayloadKeys k = KeysFor(sk);
  if (mode == Protection::kAuthenticate) {
    return Cat({data, crypto::AesCmac(k.mac, data)});
  }
  std::array<uint8_t, 16> iv{};
  rng.Fill(iv);
  const Bytes body = Cat({iv, crypto::AesCtr(k.enc, iv, data)});
  return Cat({body, crypto::AesCmac(k.mac, body)});
}

Bytes UnprotectPayload(const BigInt& sk, std::span<const uint8_t> blob, Protection mode) {
  const size_t min = mode == Protection::kAuthenticate ? kTag : kTag + 16;
  if (blob.size() < min) throw Error(ErrorCode::kTagMismatch, "blob too short");
  const PayloadKeys k = KeysFor(sk);
  const auto body = blob.first(blob.size() - kTag);
  if (!TagMatches(k.mac, body, blob.last(kTag))) {
    throw Error(ErrorCode::kTagMismatch, "payload tag");
  }
  if (mode == Protection::kAuthenticate) return Bytes(body.begin(), body.end());
  std::array<uint8_t, 16> iv{};
  std::memcpy(iv.data(), body.data(), 16);
  return crypto::AesCtr(k.enc, iv, body.subspan(16));
}

}  // namespace attest::sake

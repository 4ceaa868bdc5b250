#ifndef ATTEST_SAKE_H_
#define ATTEST_SAKE_H_

// Attestation-bootstrapped key establishment: the verifier commits to a DH
// share through a three-element hash chain, the device answers with a chain
// seeded by its checksum result, and both sides reveal the chains step by
// step before deriving g^(ab) mod p.
//
//   V -> D  v2                      (verifier records t0)
//   D -> V  w2, MAC_c(w2)           (verifier records t1, checks the time)
//   V -> D  v1
//   D -> V  w1, k, MAC_w2(k)
//   V -> D  v0
//   D -> V  w0

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "attest/crypto.h"
#include "attest/verifier.h"
#include "attest/vf.h"

namespace attest::sake {

using crypto::BigInt;
using crypto::Bytes;
using crypto::Digest;

struct DhGroup {
  BigInt p;
  BigInt g;
  int exponent_bits = 256;

  static DhGroup Test();      // p = 23, g = 5
  static DhGroup Modp2048();  // 2048-bit MODP group, g = 2
  // Encoded width of a group element in bytes.
  size_t width() const { return (p.bits() + 7) / 8; }
};

struct HashChain {
  Bytes c0;
  Digest c1{};
  Digest c2{};

  static HashChain From(Bytes c0);
};

enum class MsgType : uint8_t { kV2 = 1, kW2Mac, kV1, kW1K, kV0, kW0 };

std::string_view MsgTypeName(MsgType type);

struct Message {
  MsgType type = MsgType::kV2;
  Bytes payload;
};

// type byte, big-endian u32 length, payload. Decode throws kProtocolState on
// a malformed frame.
Bytes Encode(const Message& m);
Message Decode(std::span<const uint8_t> wire);

// Per-SM seeds and nonce derived from the verifier's commitment.
vf::Challenge ChallengeFromCommitment(const Digest& v2, int num_sms,
                                      uint32_t iterations);

// Keys the checksum-bound MAC: SHA-256(le64(c))[0..16).
crypto::Key128 ChecksumKey(uint64_t c);

class VerifierSession {
 public:
  using Expect = std::function<uint64_t(const vf::Challenge&)>;

  struct Options {
    int num_sms = 1;
    uint32_t iterations = 1000;
    double slack = 0.05;  // added to the timing threshold
    std::optional<BigInt> exponent;  // random when unset
  };

  VerifierSession(DhGroup group, crypto::Csprng& rng, verifier::TimingModel model,
                  Expect expect, Options options);

  Message Start(double now);
  // Timing check, then MAC_c(w2).
  void OnCommitment(const Message& m, double now);
  Message RevealV1();
  // Chain check on w1, then MAC_w2(k).
  void OnKeyShare(const Message& m);
  Message RevealV0();
  // Chain check on w0, then key derivation.
  void OnFinal(const Message& m);

  const std::optional<BigInt>& key() const { return key_; }
  const vf::Challenge& challenge() const { return challenge_; }
  double elapsed() const { return t1_ - t0_; }
  double bound() const { return model_.threshold * (1 + opts_.slack); }

 private:
  enum class State { kIdle, kAwaitCommit, kRevealV1, kAwaitKey, kRevealV0, kAwaitFinal, kDone };
  void Require(State s) const;

  DhGroup group_;
  verifier::TimingModel model_;
  Expect expect_;
  Options opts_;
  BigInt a_;
  HashChain v_;
  State state_ = State::kIdle;
  vf::Challenge challenge_;
  double t0_ = 0, t1_ = 0;
  Digest w2_{};
  Digest w1_{};
  BigInt k_;
  std::optional<BigInt> key_;
};

class DeviceSession {
 public:
  DeviceSession(DhGroup group, crypto::Csprng& rng,
                std::optional<BigInt> exponent = std::nullopt);

  // `c` is the checksum computed for ChallengeFromCommitment(v2).
  Message Respond(const Message& v2, uint64_t c);
  Message OnV1(const Message& m);
  // Chain check on v0, then key derivation.
  Message OnV0(const Message& m);

  const std::optional<BigInt>& key() const { return key_; }
  const Digest& commitment() const { return v2_; }
  const HashChain& chain() const { return w_; }

 private:
  enum class State { kIdle, kAwaitV1, kAwaitV0, kDone };
  void Require(State s) const;

  DhGroup group_;
  crypto::Csprng& rng_;
  std::optional<BigInt> b_override_;
  State state_ = State::kIdle;
  Digest v2_{};
  Digest v1_{};
  HashChain w_;
  BigInt b_;
  std::optional<BigInt> key_;
};

// Explicit message queue between the sessions with a per-message latency and
// an optional tamper hook (may rewrite the message or add delay).
class Channel {
 public:
  using Tamper = std::function<void(Message&, double& delay)>;

  explicit Channel(double latency = 0, Tamper tamper = {})
      : latency_(latency), tamper_(std::move(tamper)) {}

  void Send(Message m, double now);
  // Pops the next message; `now` advances to its arrival time.
  Message Receive(double& now);
  bool empty() const { return queue_.empty(); }

 private:
  struct InFlight {
    Bytes wire;
    double arrival;
  };
  double latency_;
  Tamper tamper_;
  std::deque<InFlight> queue_;
};

struct TranscriptEntry {
  std::string from;
  MsgType type;
  Bytes payload;
  double time;
};

struct ProverRun {
  uint64_t checksum = 0;
  double cycles = 0;
};
using Prover = std::function<ProverRun(const vf::Challenge&)>;

struct ProtocolResult {
  BigInt verifier_key;
  BigInt device_key;
  double elapsed = 0;
};

// Drives both sessions over the channel. The device runs `prover` on the
// challenge it derives from v2. Throws kAbortTiming, kAbortChainMismatch,
// kAbortMac from whichever side detects a problem. Messages sent so far are
// appended to `transcript` even when the run aborts.
ProtocolResult RunProtocol(VerifierSession& verifier, DeviceSession& device,
                           Channel& channel, const Prover& prover,
                           std::vector<TranscriptEntry>* transcript = nullptr);

std::string TranscriptJson(const std::vector<TranscriptEntry>& transcript);

// h = SHA-256(r || code).
Digest AuthenticateKernel(std::span<const uint8_t> r, std::span<const uint8_t> code);

enum class Protection : uint8_t { kAuthenticate = 1, kEncryptAuthenticate = 2 };

// Mode 1: data || CMAC(data). Mode 2: iv || AES-CTR(data) || CMAC(iv || ct).
// Keys: SHA-256(sk) split into encryption [0,16) and MAC [16,32) halves.
Bytes ProtectPayload(const BigInt& sk, std::span<const uint8_t> data, Protection mode,
                     crypto::Csprng& rng);
// Throws kTagMismatch.
Bytes UnprotectPayload(const BigInt& sk, std::span<const uint8_t> blob, Protection mode);

}  // namespace attest::sake

#endif  // ATTEST_SAKE_H_

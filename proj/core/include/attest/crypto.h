#ifndef ATTEST_CRYPTO_H_
#define ATTEST_CRYPTO_H_

// Thin wrappers over libcrypto: SHA-256, AES-128-CMAC, AES-128-CTR, modular
// exponentiation, and a seeded AES-CTR byte generator.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attest::crypto {

using Bytes = std::vector<uint8_t>;
using Digest = std::array<uint8_t, 32>;
using Key128 = std::array<uint8_t, 16>;
using Tag = std::array<uint8_t, 16>;

Digest Sha256(std::span<const uint8_t> data);
Digest Sha256(std::span<const uint8_t> a, std::span<const uint8_t> b);

Tag AesCmac(const Key128& key, std::span<const uint8_t> message);

// Counter-mode keystream starting at the 16-byte counter block; the block is
// incremented as a 128-bit big-endian integer.
Bytes AesCtr(const Key128& key, const std::array<uint8_t, 16>& counter,
             std::span<const uint8_t> data);

// First 16 bytes of SHA-256(data).
Key128 DeriveKey(std::span<const uint8_t> data);

bool ConstantTimeEqual(std::span<const uint8_t> a, std::span<const uint8_t> b);

std::string ToHex(std::span<const uint8_t> data);
// Throws kSyntaxError on odd length or a non-hex digit.
Bytes FromHex(std::string_view hex);

// Arbitrary-precision non-negative integer.
class BigInt {
 public:
  BigInt();
  explicit BigInt(uint64_t v);
  BigInt(const BigInt& o);
  BigInt& operator=(const BigInt& o);
  BigInt(BigInt&&) noexcept;
  BigInt& operator=(BigInt&&) noexcept;
  ~BigInt();

  static BigInt FromBytes(std::span<const uint8_t> big_endian);
  static BigInt FromHex(std::string_view hex);
  // Big-endian, left-padded to `width` bytes (0 = minimal length).
  Bytes ToBytes(size_t width = 0) const;
  std::string ToHex() const;
  size_t bits() const;
  bool operator==(const BigInt& o) const;
  bool operator<(const BigInt& o) const;

  static BigInt ModExp(const BigInt& base, const BigInt& exp, const BigInt& mod);
  // 2048-bit MODP group prime (generator 2).
  static BigInt Modp2048Prime();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Deterministic generator: AES-128-CTR keystream under SHA-256(seed).
class Csprng {
 public:
  explicit Csprng(uint64_t seed);
  void Fill(std::span<uint8_t> out);
  Bytes Take(size_t n);
  uint64_t NextU64();
  // Uniform in [0, bound), bound > 0.
  uint64_t Below(uint64_t bound);

 private:
  Key128 key_{};
  std::array<uint8_t, 16> counter_{};
  std::array<uint8_t, 64> pool_{};
  size_t used_ = 64;
};

}  // namespace attest::crypto

#endif  // ATTEST_CRYPTO_H_

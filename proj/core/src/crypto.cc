#include "attest/crypto.h"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/crypto.h>
#include <openssl/evp.h>

#include <cstring>

#include "attest/error.h"

namespace attest::crypto {
namespace {

[[noreturn]] void Fail(const char* what) {
  throw std::runtime_error(std::string("libcrypto: ") + what);
}

struct CtxFree {
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
  void operator()(EVP_MAC* m) const { EVP_MAC_free(m); }
  void operator()(EVP_MAC_CTX* c) const { EVP_MAC_CTX_free(c); }
  void operator()(BN_CTX* c) const { BN_CTX_free(c); }
};

template <typename T>
using Owned = std::unique_ptr<T, CtxFree>;

}  // namespace

Digest Sha256(std::span<const uint8_t> data) { return Sha256(data, {}); }

Digest Sha256(std::span<const uint8_t> a, std::span<const uint8_t> b) {
  Owned<EVP_MD_CTX> ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), a.data(), a.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), b.data(), b.size()) != 1) {
    Fail("sha256");
  }
  Digest out{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1) Fail("sha256 final");
  return out;
}

Tag AesCmac(const Key128& key, std::span<const uint8_t> message) {
  Owned<EVP_MAC> mac(EVP_MAC_fetch(nullptr, "CMAC", nullptr));
  if (!mac) Fail("cmac fetch");
  Owned<EVP_MAC_CTX> ctx(EVP_MAC_CTX_new(mac.get()));
  char cipher[] = "AES-128-CBC";
  OSSL_PARAM params[] = {
      OSSL_PARAM_construct_utf8_string(OSSL_MAC_PARAM_CIPHER, cipher, 0),
      OSSL_PARAM_construct_end()};
  if (!ctx || EVP_MAC_init(ctx.get(), key.data(), key.size(), params) != 1 ||
      EVP_MAC_update(ctx.get(), message.data(), message.size()) != 1) {
    Fail("cmac");
  }
  Tag out{};
  size_t len = 0;
  if (EVP_MAC_final(ctx.get(), out.data(), &len, out.size()) != 1) Fail("cmac final");
  return out;
}

Bytes AesCtr(const Key128& key, const std::array<uint8_t, 16>& counter,
             std::span<const uint8_t> data) {
  Owned<EVP_CIPHER_CTX> ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_128_ctr(), nullptr, key.data(),
                                 counter.data()) != 1) {
    Fail("aes-ctr init");
  }
  Bytes out(data.size() + 16);
  int len = 0;
  int fin = 0;
  if (EVP_EncryptUpdate(ctx.get(), out.data(), &len, data.data(),
                        static_cast<int>(data.size())) != 1 ||
      EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &fin) != 1) {
    Fail("aes-ctr");
  }
  out.resize(static_cast<size_t>(len + fin));
  return out;
}

Key128 DeriveKey(std::span<const uint8_t> data) {
  const Digest d = Sha256(data);
  Key128 k{};
  std::memcpy(k.data(), d.data(), k.size());
  return k;
}

bool ConstantTimeEqual(std::span<const uint8_t> a, std::span<const uint8_t> b) {
  return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

std::string ToHex(std::span<const uint8_t> data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (uint8_t b : data) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 15]);
  }
  return s;
}

Bytes FromHex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error(ErrorCode::kSyntaxError, "odd hex length");
  auto nibble = [&](char c, size_t at) -> uint8_t {
    if (c >= '0' && c <= '9') return static_cast<uint8_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<uint8_t>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<uint8_t>(c - 'A' + 10);
    throw Error(ErrorCode::kSyntaxError, "bad hex digit", static_cast<int64_t>(at));
  };
  Bytes out(hex.size() / 2);
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<uint8_t>(nibble(hex[2 * i], 2 * i) << 4 | nibble(hex[2 * i + 1], 2 * i + 1));
  }
  return out;
}

// --- BigInt ------------------------------------------------------------------

struct BigInt::Impl {
  BIGNUM* bn;
  Impl() : bn(BN_new()) {
    if (!bn) Fail("bn alloc");
  }
  ~Impl() { BN_free(bn); }
};

BigInt::BigInt() : impl_(std::make_unique<Impl>()) {}

BigInt::BigInt(uint64_t v) : BigInt() {
  Bytes b(8);
  for (int i = 0; i < 8; ++i) b[7 - i] = static_cast<uint8_t>(v >> (8 * i));
  BN_bin2bn(b.data(), 8, impl_->bn);
}

BigInt::BigInt(const BigInt& o) : BigInt() { BN_copy(impl_->bn, o.impl_->bn); }

BigInt& BigInt::operator=(const BigInt& o) {
  if (this != &o) BN_copy(impl_->bn, o.impl_->bn);
  return *this;
}

BigInt::BigInt(BigInt&&) noexcept = default;
BigInt& BigInt::operator=(BigInt&&) noexcept = default;
BigInt::~BigInt() = default;

BigInt BigInt::FromBytes(std::span<const uint8_t> be) {
  BigInt r;
  if (!BN_bin2bn(be.data(), static_cast<int>(be.size()), r.impl_->bn)) Fail("bin2bn");
  return r;
}

BigInt BigInt::FromHex(std::string_view hex) {
  return FromBytes(crypto::FromHex(hex.size() % 2 ? "0" + std::string(hex) : std::string(hex)));
}

Bytes BigInt::ToBytes(size_t width) const {
  const size_t n = static_cast<size_t>(BN_num_bytes(impl_->bn));
  const size_t w = std::max(width, std::max<size_t>(n, 1));
  Bytes out(w);
  if (BN_bn2binpad(impl_->bn, out.data(), static_cast<int>(w)) < 0) Fail("bn2bin");
  return out;
}

std::string BigInt::ToHex() const { return crypto::ToHex(ToBytes()); }

size_t BigInt::bits() const { return static_cast<size_t>(BN_num_bits(impl_->bn)); }

bool BigInt::operator==(const BigInt& o) const { return BN_cmp(impl_->bn, o.impl_->bn) == 0; }
bool BigInt::operator<(const BigInt& o) const { return BN_cmp(impl_->bn, o.impl_->bn) < 0; }

BigInt BigInt::ModExp(const BigInt& base, const BigInt& exp, const BigInt& mod) {
  Owned<BN_CTX> ctx(BN_CTX_new());
  BigInt r;
  if (!ctx || BN_mod_exp(r.impl_->bn, base.impl_->bn, exp.impl_->bn, mod.impl_->bn,
                         ctx.get()) != 1) {
    Fail("mod_exp");
  }
  return r;
}

BigInt BigInt::Modp2048Prime() {
  BigInt r;
  if (!BN_get_rfc3526_prime_2048(r.impl_->bn)) Fail("modp prime");
  return r;
}

// --- Csprng ------------------------------------------------------------------

Csprng::Csprng(uint64_t seed) {
  uint8_t s[8];
  for (int i = 0; i < 8; ++i) s[i] = static_cast<uint8_t>(seed >> (8 * i));
  key_ = DeriveKey(s);
}

void Csprng::Fill(std::span<uint8_t> out) {
  for (uint8_t& b : out) {
    if (used_ == pool_.size()) {
      const std::array<uint8_t, 64> zeros{};
      const Bytes ks = AesCtr(key_, counter_, zeros);
      std::memcpy(pool_.data(), ks.data(), pool_.size());
      // Advance the 128-bit counter by four blocks.
      unsigned carry = 4;
      for (int i = 15; i >= 0 && carry; --i) {
        const unsigned v = counter_[i] + carry;
        counter_[i] = static_cast<uint8_t>(v);
        carry = v >> 8;
      }
      used_ = 0;
    }
    b = pool_[used_++];
  }
}

Bytes Csprng::Take(size_t n) {
  Bytes out(n);
  Fill(out);
  return out;
}

uint64_t Csprng::NextU64() {
  uint8_t b[8];
  Fill(b);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

uint64_t Csprng::Below(uint64_t bound) {
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t r;
  do {
    r = NextU64();
  } while (r >= limit);
  return r % bound;
}

}  // namespace attest::crypto

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include "iotchain/bytes.hpp"

namespace iotchain {

inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kPublicKeySize = 33;
inline constexpr std::size_t kSignatureSize = 72;
inline constexpr std::size_t kSessionKeySize = 16;

/// Raised on malformed key or signature encodings.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a crypto operation is called outside its contract.
class CryptoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <std::size_t N>
struct FixedBytes {
  std::array<std::uint8_t, N> bytes{};

  static constexpr std::size_t size() { return N; }
  ByteView view() const { return ByteView(bytes.data(), N); }
  std::string hex() const { return to_hex(view()); }

  auto operator<=>(const FixedBytes&) const = default;
  bool operator==(const FixedBytes&) const = default;

  static FixedBytes from(ByteView v) {
    if (v.size() != N)
      throw DecodeError("expected " + std::to_string(N) + " bytes, got " + std::to_string(v.size()));
    FixedBytes out;
    std::copy(v.begin(), v.end(), out.bytes.begin());
    return out;
  }
};

struct Digest : FixedBytes<kDigestSize> {
  Digest() = default;
  Digest(const FixedBytes<kDigestSize>& b) : FixedBytes(b) {}
  static Digest from(ByteView v) { return FixedBytes::from(v); }
  /// First eight hex characters, used in traces.
  std::string prefix() const { return hex().substr(0, 8); }
};

struct PublicKey : FixedBytes<kPublicKeySize> {
  PublicKey() = default;
  PublicKey(const FixedBytes<kPublicKeySize>& b) : FixedBytes(b) {}
  static PublicKey from(ByteView v) { return FixedBytes::from(v); }
};

/// Fixed 72-byte signature: 64 Ed25519 bytes, zero fill, trailing length byte.
struct Signature : FixedBytes<kSignatureSize> {
  Signature() = default;
  Signature(const FixedBytes<kSignatureSize>& b) : FixedBytes(b) {}
  static Signature from(ByteView v) { return FixedBytes::from(v); }
};

/// Opaque signing key. Only crypto functions read the material.
class SecretKey {
 public:
  SecretKey() = default;

 private:
  std::array<std::uint8_t, 64> material_{};
  friend struct SecretKeyAccess;
};

struct KeyPair {
  PublicKey public_key;
  SecretKey secret_key;
};

/// Seeded random source; every random byte in a run comes from one of these.
class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  void fill(std::span<std::uint8_t> out);
  /// Uniform in [0, 1).
  double uniform();
  /// Child generator with an independent stream.
  DeterministicRng fork(std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
};

KeyPair generate_keypair(DeterministicRng& rng);
Signature sign(const SecretKey& sk, ByteView message);
/// Throws DecodeError when `pk` is not a valid key encoding.
bool verify(const PublicKey& pk, ByteView message, const Signature& sig);
Digest hash(ByteView data);
Digest hash_concat(const Digest& left, const Digest& right);

struct DeviceCertificate {
  PublicKey device_public_key;
  Signature manufacturer_signature;
  std::uint16_t manufacturer_id = 0;

  bool operator==(const DeviceCertificate&) const = default;
};

DeviceCertificate issue_certificate(const KeyPair& manufacturer, std::uint16_t manufacturer_id,
                                    const PublicKey& device_key);
bool verify_certificate(const DeviceCertificate& cert, const PublicKey& manufacturer_key);

/// Write-once tamper-proof key store of a device. The secret key never leaves.
class HsmRecord {
 public:
  HsmRecord(KeyPair key_pair, DeviceCertificate certificate)
      : key_pair_(std::move(key_pair)), certificate_(std::move(certificate)) {}

  const PublicKey& public_key() const { return key_pair_.public_key; }
  const DeviceCertificate& certificate() const { return certificate_; }
  Signature sign(ByteView message) const { return iotchain::sign(key_pair_.secret_key, message); }
  std::optional<Bytes> open_sealed(ByteView sealed) const;

 private:
  KeyPair key_pair_;
  DeviceCertificate certificate_;
};

struct SessionKey {
  std::array<std::uint8_t, kSessionKeySize> bytes{};
  std::pair<std::uint32_t, std::uint32_t> participants{};

  bool operator==(const SessionKey&) const = default;
};

/// Throws CryptoError when d1 == d2.
SessionKey derive_session_key(const SecretKey& rn_secret, std::uint32_t d1, std::uint32_t d2,
                              std::uint64_t nonce);

/// 16-byte authenticity tag over `message` keyed by the session key.
std::array<std::uint8_t, 16> session_tag(const SessionKey& key, ByteView message);

/// Seals `plaintext` to the holder of `recipient` (X25519 box derived from the
/// Ed25519 key). Output is ephemeral_pk(32) || nonce(24) || ciphertext.
Bytes seal(const PublicKey& recipient, ByteView plaintext, DeterministicRng& rng);
std::optional<Bytes> open_sealed(const SecretKey& recipient, ByteView sealed);

}  // namespace iotchain

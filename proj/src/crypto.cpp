#include "iotchain/crypto.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>
#include <mutex>

namespace iotchain {

struct SecretKeyAccess {
  static std::array<std::uint8_t, 64>& material(SecretKey& k) { return k.material_; }
  static const std::array<std::uint8_t, 64>& material(const SecretKey& k) { return k.material_; }
};

namespace {

constexpr std::uint8_t kKeyPrefix = 0xED;
constexpr std::size_t kRawSignatureSize = crypto_sign_BYTES;  // 64

void ensure_sodium() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw CryptoError("libsodium initialisation failed");
  });
}

const std::uint8_t* raw_key(const PublicKey& pk) {
  if (pk.bytes[0] != kKeyPrefix) throw DecodeError("public key: unknown encoding prefix");
  const std::uint8_t* raw = pk.bytes.data() + 1;
  if (crypto_core_ed25519_is_valid_point(raw) != 1) throw DecodeError("public key: not a valid curve point");
  return raw;
}

}  // namespace

void DeterministicRng::fill(std::span<std::uint8_t> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    std::uint64_t word = engine_();
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) out[i] = static_cast<std::uint8_t>(word >> (8 * b));
  }
}

double DeterministicRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

DeterministicRng DeterministicRng::fork(std::uint64_t salt) {
  return DeterministicRng(engine_() ^ (salt * 0x9E3779B97F4A7C15ULL));
}

KeyPair generate_keypair(DeterministicRng& rng) {
  ensure_sodium();
  std::array<std::uint8_t, crypto_sign_SEEDBYTES> seed{};
  rng.fill(seed);
  KeyPair kp;
  std::array<std::uint8_t, crypto_sign_PUBLICKEYBYTES> pk{};
  crypto_sign_seed_keypair(pk.data(), SecretKeyAccess::material(kp.secret_key).data(), seed.data());
  sodium_memzero(seed.data(), seed.size());
  kp.public_key.bytes[0] = kKeyPrefix;
  std::copy(pk.begin(), pk.end(), kp.public_key.bytes.begin() + 1);
  return kp;
}

Signature sign(const SecretKey& sk, ByteView message) {
  if (message.empty()) throw CryptoError("refusing to sign an empty message");
  ensure_sodium();
  Signature sig;
  crypto_sign_detached(sig.bytes.data(), nullptr, message.data(), message.size(),
                       SecretKeyAccess::material(sk).data());
  sig.bytes[kSignatureSize - 1] = static_cast<std::uint8_t>(kRawSignatureSize);
  return sig;
}

bool verify(const PublicKey& pk, ByteView message, const Signature& sig) {
  ensure_sodium();
  const std::uint8_t* raw = raw_key(pk);
  if (sig.bytes[kSignatureSize - 1] != kRawSignatureSize) return false;
  for (std::size_t i = kRawSignatureSize; i + 1 < kSignatureSize; ++i)
    if (sig.bytes[i] != 0) return false;
  return crypto_sign_verify_detached(sig.bytes.data(), message.data(), message.size(), raw) == 0;
}

Digest hash(ByteView data) {
  ensure_sodium();
  Digest d;
  crypto_hash_sha256(d.bytes.data(), data.data(), data.size());
  return d;
}

Digest hash_concat(const Digest& left, const Digest& right) {
  std::array<std::uint8_t, 2 * kDigestSize> buf{};
  std::copy(left.bytes.begin(), left.bytes.end(), buf.begin());
  std::copy(right.bytes.begin(), right.bytes.end(), buf.begin() + kDigestSize);
  return hash(buf);
}

DeviceCertificate issue_certificate(const KeyPair& manufacturer, std::uint16_t manufacturer_id,
                                    const PublicKey& device_key) {
  return DeviceCertificate{device_key, sign(manufacturer.secret_key, device_key.view()), manufacturer_id};
}

bool verify_certificate(const DeviceCertificate& cert, const PublicKey& manufacturer_key) {
  return verify(manufacturer_key, cert.device_public_key.view(), cert.manufacturer_signature);
}

std::optional<Bytes> HsmRecord::open_sealed(ByteView sealed) const {
  return iotchain::open_sealed(key_pair_.secret_key, sealed);
}

SessionKey derive_session_key(const SecretKey& rn_secret, std::uint32_t d1, std::uint32_t d2,
                              std::uint64_t nonce) {
  if (d1 == d2) throw CryptoError("session key requires two distinct devices");
  const auto& material = SecretKeyAccess::material(rn_secret);
  ByteWriter tag_input;
  tag_input.raw(to_bytes("iotchain/session-kdf")).raw(ByteView(material.data(), crypto_sign_SEEDBYTES));
  Digest tag = hash(tag_input.bytes());

  auto [lo, hi] = std::minmax(d1, d2);
  ByteWriter w;
  w.raw(tag.view()).u32(lo).u32(hi).u64(nonce);
  Digest full = hash(w.bytes());

  SessionKey key;
  std::copy_n(full.bytes.begin(), kSessionKeySize, key.bytes.begin());
  key.participants = {lo, hi};
  return key;
}

std::array<std::uint8_t, 16> session_tag(const SessionKey& key, ByteView message) {
  ensure_sodium();
  std::array<std::uint8_t, 16> out{};
  crypto_generichash(out.data(), out.size(), message.data(), message.size(), key.bytes.data(), key.bytes.size());
  return out;
}

Bytes seal(const PublicKey& recipient, ByteView plaintext, DeterministicRng& rng) {
  ensure_sodium();
  std::array<std::uint8_t, crypto_box_PUBLICKEYBYTES> recipient_x{};
  if (crypto_sign_ed25519_pk_to_curve25519(recipient_x.data(), raw_key(recipient)) != 0)
    throw DecodeError("public key: cannot convert to box key");

  std::array<std::uint8_t, crypto_box_SEEDBYTES> seed{};
  rng.fill(seed);
  std::array<std::uint8_t, crypto_box_PUBLICKEYBYTES> eph_pk{};
  std::array<std::uint8_t, crypto_box_SECRETKEYBYTES> eph_sk{};
  crypto_box_seed_keypair(eph_pk.data(), eph_sk.data(), seed.data());
  std::array<std::uint8_t, crypto_box_NONCEBYTES> nonce{};
  rng.fill(nonce);

  Bytes out(eph_pk.size() + nonce.size() + plaintext.size() + crypto_box_MACBYTES);
  std::copy(eph_pk.begin(), eph_pk.end(), out.begin());
  std::copy(nonce.begin(), nonce.end(), out.begin() + eph_pk.size());
  if (crypto_box_easy(out.data() + eph_pk.size() + nonce.size(), plaintext.data(), plaintext.size(), nonce.data(),
                      recipient_x.data(), eph_sk.data()) != 0)
    throw CryptoError("sealing failed");
  sodium_memzero(eph_sk.data(), eph_sk.size());
  return out;
}

std::optional<Bytes> open_sealed(const SecretKey& recipient, ByteView sealed) {
  ensure_sodium();
  constexpr std::size_t header = crypto_box_PUBLICKEYBYTES + crypto_box_NONCEBYTES;
  if (sealed.size() < header + crypto_box_MACBYTES) return std::nullopt;
  std::array<std::uint8_t, crypto_box_SECRETKEYBYTES> x_sk{};
  crypto_sign_ed25519_sk_to_curve25519(x_sk.data(), SecretKeyAccess::material(recipient).data());
  Bytes plain(sealed.size() - header - crypto_box_MACBYTES);
  int rc = crypto_box_open_easy(plain.data(), sealed.data() + header, sealed.size() - header,
                                sealed.data() + crypto_box_PUBLICKEYBYTES, sealed.data(), x_sk.data());
  sodium_memzero(x_sk.data(), x_sk.size());
  if (rc != 0) return std::nullopt;
  return plain;
}

}  // namespace iotchain

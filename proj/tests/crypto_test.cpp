#include <gtest/gtest.h>
#include <openssl/sha.h>

#include <set>

#include "iotchain/crypto.hpp"

using namespace iotchain;

namespace {

// OpenSSL's SHA-256 is the independent oracle for hash().
Digest openssl_sha256(ByteView data) {
  Digest d;
  SHA256(data.data(), data.size(), d.bytes.data());
  return d;
}

}  // namespace

TEST(KeyGeneration, SameSeedSameKey) {
  DeterministicRng a(42), b(42);
  EXPECT_EQ(generate_keypair(a).public_key, generate_keypair(b).public_key);
}

TEST(KeyGeneration, SuccessiveCallsDiffer) {
  DeterministicRng rng(42);
  auto k1 = generate_keypair(rng);
  auto k2 = generate_keypair(rng);
  EXPECT_NE(k1.public_key, k2.public_key);
}

TEST(KeyGeneration, ThousandPairsAreDistinct) {
  DeterministicRng rng(7);
  std::set<PublicKey> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(generate_keypair(rng).public_key);
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(KeyGeneration, PublicKeyIs33Bytes) {
  DeterministicRng rng(1);
  auto kp = generate_keypair(rng);
  EXPECT_EQ(kp.public_key.view().size(), 33u);
}

TEST(Signing, RoundTripAndSize) {
  DeterministicRng rng(3);
  auto kp = generate_keypair(rng);
  auto msg = to_bytes("firmware 1.2.3");
  auto sig = sign(kp.secret_key, msg);
  EXPECT_EQ(sig.view().size(), 72u);
  EXPECT_TRUE(verify(kp.public_key, msg, sig));
}

TEST(Signing, Deterministic) {
  DeterministicRng rng(3);
  auto kp = generate_keypair(rng);
  auto msg = to_bytes("same message");
  EXPECT_EQ(sign(kp.secret_key, msg), sign(kp.secret_key, msg));
}

TEST(Signing, RejectsEmptyMessage) {
  DeterministicRng rng(3);
  auto kp = generate_keypair(rng);
  EXPECT_THROW(sign(kp.secret_key, Bytes{}), CryptoError);
}

TEST(Signing, EverySingleBitFlipFailsVerification) {
  DeterministicRng rng(11);
  auto kp = generate_keypair(rng);
  auto msg = to_bytes("storage record 137198");
  auto sig = sign(kp.secret_key, msg);
  int accepted = 0;
  for (std::size_t byte = 0; byte < kSignatureSize; ++byte) {
    for (int bit = 0; bit < 8; ++bit) {
      auto mutated = sig;
      mutated.bytes[byte] ^= static_cast<std::uint8_t>(1u << bit);
      if (verify(kp.public_key, msg, mutated)) ++accepted;
    }
  }
  EXPECT_EQ(accepted, 0);
}

TEST(Signing, OtherKeyRejected) {
  DeterministicRng rng(5);
  auto k1 = generate_keypair(rng);
  auto k2 = generate_keypair(rng);
  auto msg = to_bytes("m");
  EXPECT_FALSE(verify(k1.public_key, msg, sign(k2.secret_key, msg)));
}

TEST(Signing, UnforgeabilityProxyOverManyPairs) {
  DeterministicRng rng(6);
  std::vector<KeyPair> keys;
  for (int i = 0; i < 20; ++i) keys.push_back(generate_keypair(rng));
  auto msg = to_bytes("cross check");
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto sig = sign(keys[i].secret_key, msg);
    for (std::size_t j = 0; j < keys.size(); ++j) EXPECT_EQ(verify(keys[j].public_key, msg, sig), i == j);
  }
}

TEST(Signing, TruncatedSignatureIsDecodeError) {
  Bytes short_sig(71, 0);
  EXPECT_THROW(Signature::from(short_sig), DecodeError);
}

TEST(Signing, MalformedKeyIsDecodeError) {
  DeterministicRng rng(8);
  auto kp = generate_keypair(rng);
  auto msg = to_bytes("m");
  auto sig = sign(kp.secret_key, msg);
  auto bad_prefix = kp.public_key;
  bad_prefix.bytes[0] = 0x02;
  EXPECT_THROW(verify(bad_prefix, msg, sig), DecodeError);
}

TEST(Hashing, FipsVectors) {
  EXPECT_EQ(hash(Bytes{}).hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(hash(to_bytes("abc")).hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(hash(to_bytes("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")).hex(),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST(Hashing, AgreesWithOpenSslOnRandomInputs) {
  DeterministicRng rng(99);
  for (int i = 0; i < 100; ++i) {
    Bytes data(rng.next() % 300);
    rng.fill(data);
    EXPECT_EQ(hash(data), openssl_sha256(data)) << "input length " << data.size();
  }
}

TEST(Hashing, Deterministic) {
  auto x = to_bytes("x");
  EXPECT_EQ(hash(x), hash(x));
}

TEST(SessionKeys, SymmetricInParticipants) {
  DeterministicRng rng(12);
  auto rn = generate_keypair(rng);
  auto ab = derive_session_key(rn.secret_key, 0x10001, 0x10002, 9);
  auto ba = derive_session_key(rn.secret_key, 0x10002, 0x10001, 9);
  EXPECT_EQ(ab, ba);
  EXPECT_EQ(ab.bytes.size(), 16u);
}

TEST(SessionKeys, NonceChangesKey) {
  DeterministicRng rng(12);
  auto rn = generate_keypair(rng);
  EXPECT_NE(derive_session_key(rn.secret_key, 1, 2, 3).bytes, derive_session_key(rn.secret_key, 1, 2, 4).bytes);
}

TEST(SessionKeys, SameDeviceRejected) {
  DeterministicRng rng(12);
  auto rn = generate_keypair(rng);
  EXPECT_THROW(derive_session_key(rn.secret_key, 5, 5, 1), CryptoError);
}

TEST(Certificates, IssuedCertificateVerifies) {
  DeterministicRng rng(13);
  auto mfr = generate_keypair(rng);
  auto dev = generate_keypair(rng);
  auto cert = issue_certificate(mfr, 3, dev.public_key);
  EXPECT_TRUE(verify_certificate(cert, mfr.public_key));
  auto other = generate_keypair(rng);
  EXPECT_FALSE(verify_certificate(cert, other.public_key));
}

TEST(Sealing, OnlyRecipientOpens) {
  DeterministicRng rng(14);
  auto alice = generate_keypair(rng);
  auto eve = generate_keypair(rng);
  auto secret = to_bytes("0123456789abcdef");
  auto sealed = seal(alice.public_key, secret, rng);
  auto opened = open_sealed(alice.secret_key, sealed);
  ASSERT_TRUE(opened.has_value());
  EXPECT_EQ(*opened, secret);
  EXPECT_FALSE(open_sealed(eve.secret_key, sealed).has_value());
  sealed.back() ^= 1;
  EXPECT_FALSE(open_sealed(alice.secret_key, sealed).has_value());
}

TEST(Sealing, DeterministicForSameRngState) {
  DeterministicRng keys(15);
  auto alice = generate_keypair(keys);
  DeterministicRng r1(1), r2(1);
  auto msg = to_bytes("k");
  EXPECT_EQ(seal(alice.public_key, msg, r1), seal(alice.public_key, msg, r2));
}

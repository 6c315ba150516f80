#include <gtest/gtest.h>

#include <set>

#include "iotchain/tx.hpp"
#include "tx_gen.hpp"

using namespace iotchain;
using namespace iotchain::tx;

namespace {

TxDecodeError::Kind decode_error_kind(ByteView bytes) {
  try {
    decode(bytes);
  } catch (const TxDecodeError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return TxDecodeError::Kind::BadField;
}

}  // namespace

TEST(GoldenSizes, MatchPublishedByteCounts) {
  DeterministicRng rng(1);
  Signature sig = gen::random_sig(rng);
  Digest dig = gen::random_digest(rng);
  EXPECT_EQ(encode(DeviceRegistrationTx{1, 2, sig}).size(), 79u);
  EXPECT_EQ(encode(EntityRegistrationTx{EntityClass::Manufacturer, 1, 2, sig}).size(), 80u);
  EXPECT_EQ(encode(CancellationTx{EntityClass::RegionalNode, 1, 2, sig}).size(), 80u);
  EXPECT_EQ(encode(UpdateReleaseTx{1, 2, sig, to_bytes("a large firmware image")}).size(), 77u);
  EXPECT_EQ(encode(UpdateQueryTx{1, 2}).size(), 5u);
  EXPECT_EQ(encode(DeviceStorageTx{1, 2, 0, dig, sig}).size(), 112u);
  EXPECT_EQ(encode(PermissionTx{false, 1, 2, Operation::Read, {}}).size(), 10u);
  EXPECT_EQ(encode(PermissionTx{true, 1, 2, Operation::Read, {sig}}).size(), 82u);
  EXPECT_EQ(encode(PermissionTx{false, 1, 2, Operation::Read, {sig, sig}}).size(), 154u);
  EXPECT_EQ(encode(PermissionTx{true, 1, 2, Operation::Read, {sig, sig}}).size(), 154u);
  EXPECT_EQ(encode(LocalInteractiveTx{1, dig, 4, sig}).size(), 109u);
}

TEST(Encode, BigEndianLayout) {
  auto bytes = encode(UpdateQueryTx{0x0102, 0x0304});
  EXPECT_EQ(bytes, (Bytes{5, 1, 2, 3, 4}));
  auto perm = encode(PermissionTx{false, 0x0A0B0C0D, 0x01020304, Operation::Revise, {}});
  EXPECT_EQ(perm, (Bytes{7, 0x0A, 0x0B, 0x0C, 0x0D, 1, 2, 3, 4, 2}));
}

TEST(Encode, RejectsOutOfRangeFields) {
  PermissionTx bad_op{false, 1, 2, static_cast<Operation>(5), {}};
  EXPECT_THROW(encode(bad_op), EncodeError);
  PermissionTx unsigned_request{true, 1, 2, Operation::Read, {}};
  EXPECT_THROW(encode(unsigned_request), EncodeError);
  EntityRegistrationTx bad_class{static_cast<EntityClass>(9), 1, 1, {}};
  EXPECT_THROW(encode(bad_class), EncodeError);
}

TEST(Decode, TruncatedDeviceRegistration) {
  Bytes b(78, 0);
  b[0] = 1;
  EXPECT_EQ(decode_error_kind(b), TxDecodeError::Kind::Truncated);
}

TEST(Decode, UnknownTag) {
  Bytes b(10, 0);
  b[0] = 0xFF;
  EXPECT_EQ(decode_error_kind(b), TxDecodeError::Kind::UnknownTag);
}

TEST(Decode, TrailingBytes) {
  auto b = encode(UpdateQueryTx{1, 2});
  b.push_back(0);
  EXPECT_EQ(decode_error_kind(b), TxDecodeError::Kind::TrailingBytes);
}

TEST(Decode, BadOperationCode) {
  Bytes b{7, 0, 0, 0, 1, 0, 0, 0, 2, 9};
  EXPECT_EQ(decode_error_kind(b), TxDecodeError::Kind::BadField);
}

TEST(Decode, EmptyBuffer) { EXPECT_EQ(decode_error_kind(Bytes{}), TxDecodeError::Kind::Truncated); }

TEST(Decode, RoundTripTenThousandRandomTransactions) {
  DeterministicRng rng(2718);
  for (int i = 0; i < 10000; ++i) {
    auto tx = gen::random_tx(rng);
    auto bytes = encode(tx);
    auto back = decode(bytes);
    ASSERT_EQ(back, tx) << debug_line(tx);
    ASSERT_EQ(encode(back), bytes);
  }
}

TEST(Encode, InjectiveOverRandomSample) {
  DeterministicRng rng(31);
  std::set<Bytes> seen;
  std::vector<Transaction> txs;
  for (int i = 0; i < 3000; ++i) {
    auto tx = gen::random_tx(rng);
    if (std::find(txs.begin(), txs.end(), tx) != txs.end()) continue;
    txs.push_back(tx);
    EXPECT_TRUE(seen.insert(encode(tx)).second);
  }
}

TEST(SigningBytes, DeviceStoragePreimageIs40Bytes) {
  DeterministicRng rng(2);
  DeviceStorageTx t{1, 2, 0, gen::random_digest(rng), gen::random_sig(rng)};
  auto pre = signing_bytes(t);
  EXPECT_EQ(pre.size(), 112u - 72u);
  auto full = encode(t);
  EXPECT_TRUE(std::equal(pre.begin(), pre.end(), full.begin()));
}

TEST(SigningBytes, UpdateQueryIsWholeEncoding) {
  UpdateQueryTx q{4, 5};
  EXPECT_EQ(signing_bytes(q), encode(q));
}

TEST(SigningBytes, UpdateReleaseBindsPayload) {
  UpdateReleaseTx a{1, 2, {}, to_bytes("v1")};
  UpdateReleaseTx b{1, 2, {}, to_bytes("v2")};
  EXPECT_NE(signing_bytes(a), signing_bytes(b));
  EXPECT_EQ(signing_bytes(a).size(), 5u + 32u);
}

TEST(SigningBytes, CrossRegionSequentialEndorsement) {
  DeterministicRng rng(3);
  auto rn1 = generate_keypair(rng);
  auto rn2 = generate_keypair(rng);
  PermissionTx p{true, 0x10001, 0x20001, Operation::Read, {Signature{}, Signature{}}};
  Bytes first_pre = signing_bytes(p, 0);
  EXPECT_EQ(first_pre.size(), 10u);
  p.signatures[0] = sign(rn1.secret_key, first_pre);
  auto second_pre = signing_bytes(p, 1);
  EXPECT_EQ(second_pre.size(), 10u + 72u);
  p.signatures[1] = sign(rn2.secret_key, second_pre);

  EXPECT_TRUE(verify(rn1.public_key, signing_bytes(p, 0), p.signatures[0]));
  EXPECT_TRUE(verify(rn2.public_key, signing_bytes(p, 1), p.signatures[1]));
  // Replacing the first endorsement breaks the second.
  auto forged = p;
  forged.signatures[0] = sign(rn2.secret_key, first_pre);
  EXPECT_FALSE(verify(rn2.public_key, signing_bytes(forged, 1), forged.signatures[1]));
  EXPECT_EQ(encode(p).size(), 154u);
}

TEST(SigningBytes, MutatingAnyUnsignedByteBreaksSignature) {
  DeterministicRng rng(4);
  auto kp = generate_keypair(rng);
  std::vector<Transaction> samples;
  samples.push_back(DeviceRegistrationTx{7, 0x70001, {}});
  samples.push_back(EntityRegistrationTx{EntityClass::RegionalNode, 3, 33, {}});
  samples.push_back(DeviceStorageTx{0x70001, 9, 0, hash(to_bytes("data")), {}});
  samples.push_back(LocalInteractiveTx{2, hash(to_bytes("root")), 4, {}});
  for (auto tx : samples) {
    auto pre = signing_bytes(tx);
    auto sig = sign(kp.secret_key, pre);
    std::visit([&](auto& t) {
      if constexpr (requires { t.signature; }) t.signature = sig;
    }, tx);
    auto wire = encode(tx);
    ASSERT_TRUE(verify(kp.public_key, signing_bytes(decode(wire)), sig));
    for (std::size_t i = 0; i < pre.size(); ++i) {
      auto mutated = wire;
      mutated[i] ^= 0x01;
      try {
        auto back = decode(mutated);
        EXPECT_FALSE(verify(kp.public_key, signing_bytes(back), sig)) << to_string(type_of(tx)) << " byte " << i;
      } catch (const TxDecodeError&) {
      }
    }
  }
}

TEST(ChainEntry, UpdateReleaseCarriesPayloadHash) {
  UpdateReleaseTx u{1, 2, {}, to_bytes("payload")};
  auto entry = chain_bytes(u);
  EXPECT_EQ(entry.size(), 77u + 32u);
  std::optional<Digest> digest;
  auto back = decode_chain_entry(entry, &digest);
  ASSERT_TRUE(digest.has_value());
  EXPECT_EQ(*digest, hash(u.payload));
  EXPECT_EQ(std::get<UpdateReleaseTx>(back).model_id, 2);
}

TEST(Package, RoundTripWithPayload) {
  DeterministicRng rng(5);
  for (int i = 0; i < 200; ++i) {
    auto tx = gen::random_tx(rng, true);
    if (auto* u = std::get_if<UpdateReleaseTx>(&tx)) EXPECT_EQ(decode_package(encode_package(*u)), *u);
  }
  Bytes truncated = encode_package(UpdateReleaseTx{1, 1, {}, to_bytes("abcdef")});
  truncated.pop_back();
  EXPECT_THROW(decode_package(truncated), TxDecodeError);
}

TEST(DebugLine, MentionsTypeAndHex) {
  auto line = debug_line(UpdateQueryTx{1, 2});
  EXPECT_NE(line.find("update-query"), std::string::npos);
  EXPECT_NE(line.find("hex=0500010002"), std::string::npos);
}

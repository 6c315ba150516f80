#include <gtest/gtest.h>

#include "iotchain/merkle.hpp"
#include "merkle_oracle.hpp"

using namespace iotchain;
using namespace iotchain::merkle;

namespace {

std::vector<Digest> leaves_of(std::size_t n, std::uint64_t seed = 1) {
  DeterministicRng rng(seed);
  std::vector<Digest> out(n);
  for (auto& d : out) rng.fill(d.bytes);
  return out;
}

}  // namespace

TEST(MerkleTree, FourLeafWorkedExample) {
  Digest ha = hash(to_bytes("Txa")), hb = hash(to_bytes("Txb")), hc = hash(to_bytes("Txc")), hd = hash(to_bytes("Txd"));
  MerkleTree tree({ha, hb, hc, hd});
  Digest hab = hash_concat(ha, hb), hcd = hash_concat(hc, hd);
  EXPECT_EQ(tree.root(), hash_concat(hab, hcd));

  auto proof = tree.prove(0);
  ASSERT_EQ(proof.path.size(), 2u);
  EXPECT_EQ(proof.path[0], (PathStep{hb, Side::Right}));
  EXPECT_EQ(proof.path[1], (PathStep{hcd, Side::Right}));
  EXPECT_TRUE(verify_proof(proof));
}

TEST(MerkleTree, SingleLeafIsRoot) {
  auto leaves = leaves_of(1);
  MerkleTree tree(leaves);
  EXPECT_EQ(tree.root(), leaves[0]);
  auto proof = tree.prove(0);
  EXPECT_TRUE(proof.path.empty());
  EXPECT_TRUE(verify_proof(proof));
}

TEST(MerkleTree, EmptyRejected) { EXPECT_THROW(MerkleTree(std::vector<Digest>{}), MerkleError); }

TEST(MerkleTree, FiveLeavesMatchOracle) {
  auto leaves = leaves_of(5);
  EXPECT_EQ(MerkleTree(leaves).root(), oracle::fold_root(leaves));
}

TEST(MerkleTree, RootMatchesOracleForLengthsUpTo33) {
  for (std::size_t n = 1; n <= 33; ++n) {
    auto leaves = leaves_of(n, n);
    EXPECT_EQ(MerkleTree(leaves).root(), oracle::fold_root(leaves)) << "n=" << n;
  }
}

TEST(MerkleTree, LevelSizesHalveRoundingUp) {
  MerkleTree tree(leaves_of(13));
  const auto& levels = tree.levels();
  for (std::size_t k = 1; k < levels.size(); ++k) EXPECT_EQ(levels[k].size(), (levels[k - 1].size() + 1) / 2);
  EXPECT_EQ(levels.back().size(), 1u);
}

TEST(MerkleTree, Deterministic) {
  auto leaves = leaves_of(17, 4);
  EXPECT_EQ(MerkleTree(leaves).root(), MerkleTree(leaves).root());
}

TEST(MerkleProof, AllIndicesOfEightLeafTreeVerify) {
  MerkleTree tree(leaves_of(8));
  for (std::size_t i = 0; i < 8; ++i) {
    auto proof = tree.prove(i);
    EXPECT_EQ(proof.path.size(), tree.height());
    EXPECT_TRUE(verify_proof(proof)) << i;
  }
}

TEST(MerkleProof, OutOfRangeIndex) {
  MerkleTree tree(leaves_of(3));
  EXPECT_THROW(tree.prove(3), MerkleError);
}

TEST(MerkleProof, TamperedLeafFails) {
  MerkleTree tree(leaves_of(6));
  auto proof = tree.prove(2);
  proof.leaf.bytes[5] ^= 0x40;
  EXPECT_FALSE(verify_proof(proof));
  EXPECT_NE(oracle::fold(proof), proof.root);
}

TEST(MerkleProof, FlippedSideFails) {
  MerkleTree tree(leaves_of(8));
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t s = 0; s < 3; ++s) {
      auto proof = tree.prove(i);
      auto& step = proof.path[s];
      step.side = step.side == Side::Left ? Side::Right : Side::Left;
      EXPECT_FALSE(verify_proof(proof));
    }
  }
}

TEST(MerkleProof, SelfPairedSideFlipFails) {
  MerkleTree tree(leaves_of(5));
  auto proof = tree.prove(4);
  ASSERT_EQ(proof.path[0].sibling, proof.leaf);
  proof.path[0].side = Side::Left;
  EXPECT_FALSE(verify_proof(proof));
}

TEST(MerkleProof, DuplicateLeavesStillProve) {
  auto leaves = leaves_of(4);
  leaves[1] = leaves[0];
  MerkleTree tree(leaves);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(verify_proof(tree.prove(i)));
}

TEST(MerkleProof, SerializationLayoutAndRoundTrip) {
  MerkleTree tree(leaves_of(4));
  auto proof = tree.prove(1);
  auto bytes = serialize(proof);
  EXPECT_EQ(bytes.size(), 32u + 1 + 2 * 33 + 32);
  EXPECT_EQ(bytes[32], 2);
  EXPECT_EQ(parse_proof(bytes), proof);
}

TEST(MerkleProof, ParseRejectsGarbage) {
  Bytes junk(10, 0);
  EXPECT_THROW(parse_proof(junk), TruncatedInput);
  MerkleTree tree(leaves_of(2));
  auto bytes = serialize(tree.prove(0));
  bytes.push_back(0);
  EXPECT_THROW(parse_proof(bytes), MerkleError);
}

TEST(MerkleProof, RandomTreesAllProofsVerify) {
  DeterministicRng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t n = 1 + rng.next() % 1024;
    MerkleTree tree(leaves_of(n, rng.next()));
    for (std::size_t i = 0; i < n; i += 1 + n / 64) ASSERT_TRUE(verify_proof(tree.prove(i))) << n << ":" << i;
  }
}

TEST(MerkleProof, SingleBitMutationsNeverAccepted) {
  DeterministicRng rng(77);
  int mutations = 0, accepted = 0;
  while (mutations < 10000) {
    std::size_t n = 1 + rng.next() % 40;
    MerkleTree tree(leaves_of(n, rng.next()));
    auto bytes = serialize(tree.prove(rng.next() % n));
    for (int k = 0; k < 50; ++k, ++mutations) {
      auto mutated = bytes;
      auto bit = rng.next() % (mutated.size() * 8);
      mutated[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
      try {
        if (verify_proof(parse_proof(mutated))) ++accepted;
      } catch (const std::exception&) {
      }
    }
  }
  EXPECT_EQ(accepted, 0);
}

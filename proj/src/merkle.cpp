#include "iotchain/merkle.hpp"

#include <limits>

namespace iotchain::merkle {

MerkleTree::MerkleTree(std::vector<Digest> leaves) {
  if (leaves.empty()) throw MerkleError("merkle tree needs at least one leaf");
  levels_.push_back(std::move(leaves));
  while (levels_.back().size() > 1) {
    const auto& below = levels_.back();
    std::vector<Digest> above;
    above.reserve((below.size() + 1) / 2);
    for (std::size_t i = 0; i < below.size(); i += 2) {
      const Digest& left = below[i];
      const Digest& right = i + 1 < below.size() ? below[i + 1] : below[i];
      above.push_back(hash_concat(left, right));
    }
    levels_.push_back(std::move(above));
  }
}

MerkleProof MerkleTree::prove(std::size_t index) const {
  if (index >= leaf_count()) throw MerkleError("leaf index out of range");
  MerkleProof proof;
  proof.leaf = levels_.front()[index];
  proof.root = root();
  for (std::size_t level = 0; level + 1 < levels_.size(); ++level) {
    const auto& nodes = levels_[level];
    if (index % 2 == 0) {
      const Digest& sibling = index + 1 < nodes.size() ? nodes[index + 1] : nodes[index];
      proof.path.push_back({sibling, Side::Right});
    } else if (nodes[index - 1] == nodes[index]) {
      // Equal pair: both orders hash the same, keep the canonical marker.
      proof.path.push_back({nodes[index - 1], Side::Right});
    } else {
      proof.path.push_back({nodes[index - 1], Side::Left});
    }
    index /= 2;
  }
  return proof;
}

bool verify_proof(const MerkleProof& proof) {
  Digest acc = proof.leaf;
  for (const auto& step : proof.path) {
    if (step.side == Side::Left) {
      // A self-paired node is always marked Right; a Left twin is a forgery.
      if (step.sibling == acc) return false;
      acc = hash_concat(step.sibling, acc);
    } else if (step.side == Side::Right) {
      acc = hash_concat(acc, step.sibling);
    } else {
      return false;
    }
  }
  return acc == proof.root;
}

Bytes serialize(const MerkleProof& proof) {
  if (proof.path.size() > std::numeric_limits<std::uint8_t>::max()) throw MerkleError("path too long");
  ByteWriter w(kDigestSize * (2 + proof.path.size()) + proof.path.size() + 1);
  w.raw(proof.leaf.view()).u8(static_cast<std::uint8_t>(proof.path.size()));
  for (const auto& step : proof.path) w.u8(static_cast<std::uint8_t>(step.side)).raw(step.sibling.view());
  w.raw(proof.root.view());
  return std::move(w).take();
}

MerkleProof parse_proof(ByteView bytes) {
  ByteReader r(bytes);
  MerkleProof proof;
  proof.leaf = Digest::from(r.raw(kDigestSize));
  auto n = r.u8();
  for (unsigned i = 0; i < n; ++i) {
    auto side = r.u8();
    if (side > 1) throw MerkleError("invalid side marker");
    proof.path.push_back({Digest::from(r.raw(kDigestSize)), static_cast<Side>(side)});
  }
  proof.root = Digest::from(r.raw(kDigestSize));
  if (!r.done()) throw MerkleError("trailing bytes after proof");
  return proof;
}

}  // namespace iotchain::merkle

#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "iotchain/crypto.hpp"

namespace iotchain::merkle {

class MerkleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Position of a sibling relative to the node being folded.
enum class Side : std::uint8_t { Left = 0, Right = 1 };

struct PathStep {
  Digest sibling;
  Side side = Side::Right;

  bool operator==(const PathStep&) const = default;
};

struct MerkleProof {
  Digest leaf;
  std::vector<PathStep> path;
  Digest root;

  bool operator==(const MerkleProof&) const = default;
};

/// Immutable binary hash tree. An unpaired node at any level is hashed with
/// itself; a single leaf is its own root.
class MerkleTree {
 public:
  /// Throws MerkleError on an empty leaf list.
  explicit MerkleTree(std::vector<Digest> leaves);

  const Digest& root() const { return levels_.back().front(); }
  const std::vector<Digest>& leaves() const { return levels_.front(); }
  const std::vector<std::vector<Digest>>& levels() const { return levels_; }
  std::size_t leaf_count() const { return levels_.front().size(); }
  std::size_t height() const { return levels_.size() - 1; }

  /// Authentication path for leaf `index`. Throws MerkleError if out of range.
  MerkleProof prove(std::size_t index) const;

 private:
  std::vector<std::vector<Digest>> levels_;
};

inline MerkleTree build_tree(std::vector<Digest> leaves) { return MerkleTree(std::move(leaves)); }
inline MerkleProof prove(const MerkleTree& tree, std::size_t index) { return tree.prove(index); }

/// Folds proof.leaf through proof.path and compares with proof.root.
bool verify_proof(const MerkleProof& proof);

/// leaf(32) || path-length(1) || [side(1) || sibling(32)]* || root(32)
Bytes serialize(const MerkleProof& proof);
/// Throws MerkleError or TruncatedInput on malformed input.
MerkleProof parse_proof(ByteView bytes);

}  // namespace iotchain::merkle

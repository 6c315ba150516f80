#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iotchain/crypto.hpp"
#include "iotchain/tx.hpp"

namespace iotchain::ledger {

using tx::EntityClass;
using tx::Operation;
using tx::Transaction;

class LedgerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Out-of-band published key material: what a verifier can look up by key id.
struct KeyRecord {
  PublicKey public_key;
  /// Present for device keys: the manufacturer's certificate over the key.
  std::optional<DeviceCertificate> certificate;
  /// Present for device keys once the device is deployed in a region.
  std::optional<std::uint16_t> home_region;
};

/// Append-only public key directory shared by every participant of a run.
class KeyDirectory {
 public:
  /// Throws LedgerError if the key id is already taken.
  void publish(std::uint32_t key_id, KeyRecord record);
  void set_home_region(std::uint32_t key_id, std::uint16_t region);
  const KeyRecord* find(std::uint32_t key_id) const;
  std::size_t size() const { return records_.size(); }

 private:
  std::map<std::uint32_t, KeyRecord> records_;
};

enum class Status : std::uint8_t { Active, Cancelled };

struct RegistryRow {
  bool is_device = false;
  EntityClass entity_class = EntityClass::Manufacturer;  // entities only
  std::uint16_t entity_id = 0;                           // entities only
  std::uint16_t manufacturer_id = 0;                     // devices only
  Status status = Status::Active;

  bool operator==(const RegistryRow&) const = default;
};

struct UpdateEntry {
  tx::UpdateReleaseTx release;
  bool operator==(const UpdateEntry&) const = default;
};

/// The four tables a regional node maintains, plus the live entity index.
struct RnTables {
  std::map<std::uint32_t, RegistryRow> registry;
  std::map<std::pair<EntityClass, std::uint16_t>, std::uint32_t> entities;
  std::map<std::pair<std::uint16_t, std::uint16_t>, UpdateEntry> update_table;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::set<Operation>> permissions;
  std::map<std::pair<std::uint32_t, std::uint16_t>, Digest> storage_info;

  bool operator==(const RnTables&) const = default;

  const RegistryRow* row(std::uint32_t key_id) const;
  /// Key id currently bound to (class, id), if any.
  std::optional<std::uint32_t> entity_key(EntityClass c, std::uint16_t id) const;
  bool entity_active(EntityClass c, std::uint16_t id) const;
  bool device_active(std::uint32_t device_id) const;
  bool permits(std::uint32_t d1, std::uint32_t d2, Operation op) const;
};

enum class RejectReason : std::uint8_t { BadSignature, UnknownSigner, CancelledSigner, SchemaViolation };
std::string to_string(RejectReason r);

struct ValidationResult {
  std::optional<RejectReason> reason;
  std::string detail;

  bool ok() const { return !reason.has_value(); }
  static ValidationResult accept() { return {}; }
  static ValidationResult reject(RejectReason r, std::string why) { return {r, std::move(why)}; }
};

struct ValidationOptions {
  /// Entity id of the regional node validating a merkle-batched transaction
  /// locally. Cloud-provider registrations only validate with this set.
  std::optional<std::uint16_t> local_rn;
};

/// Admission rules: signatures verify under registered, non-cancelled
/// signers; referenced ids exist; type-specific rules hold.
ValidationResult validate(const Transaction& tx, const RnTables& tables, const KeyDirectory& keys,
                          const ValidationOptions& options = {});

/// Applies the table effects of an already validated transaction. Throws
/// LedgerError on a duplicate live registration.
void apply_to_tables(RnTables& tables, const Transaction& tx);

enum class Mode : std::uint8_t { Direct, MerkleBatched };
std::string to_string(Mode m);

/// Transaction classification. `origin_region`/`target_region` are the
/// regions of the two parties (permissions) or the release scope (updates:
/// no target region means a global release).
Mode classify(const Transaction& tx, std::optional<std::uint16_t> origin_region = std::nullopt,
              std::optional<std::uint16_t> target_region = std::nullopt);

struct Block {
  std::uint64_t height = 0;
  Digest prev_hash;
  std::vector<Transaction> txs;
  Digest block_hash;

  bool operator==(const Block&) const = default;
};

Digest compute_block_hash(std::uint64_t height, const Digest& prev_hash, std::span<const Transaction> txs);
/// Digest of a proposed batch; equals the digest a block of the same
/// transactions is agreed under.
Digest batch_digest(std::span<const Transaction> txs);

/// Block wire form. With payloads, update releases carry their content so a
/// receiver can rebuild its update table.
Bytes encode_block(const Block& block, bool with_payloads = true);
Block decode_block(ByteView bytes);

Bytes encode_batch(std::span<const Transaction> txs);
std::vector<Transaction> decode_batch(ByteView bytes);

class Ledger {
 public:
  explicit Ledger(Block genesis);
  /// Loads blocks as given, without checks; run verify_chain() before trusting them.
  static Ledger from_blocks(std::vector<Block> blocks);

  const Block& tip() const { return blocks_.back(); }
  std::uint64_t height() const { return tip().height; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& genesis() const { return blocks_.front(); }

  /// Chains `txs` onto the tip without validation.
  const Block& append(std::vector<Transaction> txs);
  /// Appends a block built elsewhere; throws LedgerError if it does not link.
  void append_block(Block block);

  /// Recomputes every block hash and link from genesis.
  bool verify_chain() const;

  /// One line per block: height, prev_hash, block_hash, chain entries.
  std::string export_text() const;

 private:
  Ledger() = default;
  std::vector<Block> blocks_;
};

/// Thrown when a batch contains an invalid transaction; nothing is appended.
class BatchRejected : public LedgerError {
 public:
  BatchRejected(std::size_t index, ValidationResult result)
      : LedgerError("transaction " + std::to_string(index) + " rejected: " + result.detail),
        index_(index),
        result_(std::move(result)) {}
  std::size_t index() const { return index_; }
  const ValidationResult& result() const { return result_; }

 private:
  std::size_t index_;
  ValidationResult result_;
};

/// Validates `txs` in order against a scratch copy of `tables`; all or nothing.
ValidationResult validate_batch(std::span<const Transaction> txs, const RnTables& tables, const KeyDirectory& keys,
                                const ValidationOptions& options = {}, std::size_t* failed_index = nullptr);

/// Validates, appends and applies atomically.
const Block& append_block(Ledger& ledger, RnTables& tables, const KeyDirectory& keys, std::vector<Transaction> txs,
                          const ValidationOptions& options = {});

/// Signs an entity registration with the certification center's key.
tx::EntityRegistrationTx make_entity_registration(const KeyPair& signer, EntityClass c, std::uint16_t entity_id,
                                                  std::uint32_t key_id);

/// Genesis: the CC's self-registration followed by `members` (already signed
/// by the CC). prev_hash anchors the CC public key.
Block make_genesis(const KeyPair& cc, std::uint32_t cc_key_id, std::span<const tx::EntityRegistrationTx> members);

/// Looks up the transactions behind a local interactive root, for replay.
using LocalBatchLookup = std::function<const std::vector<Transaction>*(const tx::LocalInteractiveTx&)>;

/// Rebuilds tables from genesis. With a lookup, merkle-batched transactions
/// behind this node's roots are applied where the root was confirmed.
RnTables replay(const Ledger& ledger, const LocalBatchLookup& local = {});

struct AuditFinding {
  std::uint64_t height = 0;
  std::size_t index = 0;
  ValidationResult result;
};

struct AuditReport {
  bool chain_intact = true;
  std::vector<AuditFinding> invalid_transactions;
  bool clean() const { return chain_intact && invalid_transactions.empty(); }
};

/// Post-hoc audit: hash chain intact and every confirmed transaction valid
/// against the chain state preceding it.
AuditReport audit_chain(const Ledger& ledger, const KeyDirectory& keys);

}  // namespace iotchain::ledger

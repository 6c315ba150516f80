#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "iotchain/consensus.hpp"
#include "iotchain/ledger.hpp"
#include "iotchain/merkle.hpp"
#include "iotchain/simnet.hpp"

namespace iotchain::roles {

using ledger::Transaction;
using sim::ActorId;
using sim::Context;
using tx::EntityClass;
using tx::Operation;

/// Harness command arguments: "key=value key=value".
using Args = std::map<std::string, std::string>;
Args parse_args(std::string_view text);
std::string format_args(const Args& args);
Bytes command_payload(const Args& args);

/// Transaction as carried in messages: update releases travel with their payload.
Bytes tx_wire(const Transaction& t);
Transaction tx_unwire(ByteView bytes);

/// Public addressing of a run, fixed before the run starts.
struct Topology {
  ActorId cc = 0, dc = 0;
  std::vector<ActorId> rns;  // replica index i serves region i + 1
  /// Services that receive block announcements from every RN.
  std::vector<ActorId> subscribers;
  std::map<std::uint16_t, ActorId> providers;  // cloud provider entity id -> actor

  std::optional<std::size_t> replica_of(ActorId a) const;
  ActorId rn_of_region(std::uint16_t region) const;  // 0 if none
};

/// What every actor of a run can see: the published key directory, the
/// addressing table and the chain's genesis.
struct Shared {
  ledger::KeyDirectory keys;
  Topology topo;
  ledger::Block genesis;
  consensus::ConsensusConfig consensus;
  consensus::EngineKind engine = consensus::EngineKind::Pbft;
};

/// Tracks a chain from RN block announcements. A block is adopted once f+1
/// distinct RNs announced the same block at the next height.
class ChainFollower {
 public:
  explicit ChainFollower(const Shared& shared);
  /// Heights adopted because of this announcement, ascending.
  std::vector<std::uint64_t> on_announce(ActorId from, ByteView payload);
  const ledger::Ledger& ledger() const { return ledger_; }
  const ledger::RnTables& tables() const { return tables_; }
  std::optional<std::uint64_t> confirmed_at(const Digest& tx_id) const;

 private:
  const Shared& shared_;
  ledger::Ledger ledger_;
  ledger::RnTables tables_;
  std::map<Digest, std::uint64_t> confirmed_;
  // height -> block hash -> (announcers, block)
  std::map<std::uint64_t, std::map<Digest, std::pair<std::set<ActorId>, ledger::Block>>> votes_;
};

struct Finding {
  sim::Time time = 0;
  std::string kind;  // malware | tampering | rejecting
  EntityClass target_class = EntityClass::Manufacturer;
  std::uint16_t target_id = 0;
  std::uint32_t target_key = 0;
  std::string evidence;
};

class CertificationCenter : public sim::Actor {
 public:
  struct Issued {
    EntityClass entity_class;
    std::uint32_t key_id;
    std::uint64_t key_seed;
  };

  CertificationCenter(std::shared_ptr<Shared> shared, KeyPair key, std::uint64_t seed);
  void on_start(Context& ctx) override;
  void on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) override;
  void on_timer(Context& ctx, std::uint64_t tag, ByteView payload) override;

  const std::map<std::pair<EntityClass, std::uint16_t>, Issued>& issued() const { return issued_; }

 private:
  struct Pending {
    ActorId applicant;
    std::uint16_t entity_id;
    tx::EntityRegistrationTx tx;
  };
  std::shared_ptr<Shared> shared_;
  KeyPair key_;
  DeterministicRng rng_;
  ChainFollower follower_;
  std::map<std::pair<EntityClass, std::uint16_t>, Issued> issued_;
  std::map<Digest, Pending> pending_;
  std::uint32_t next_key_ = 1;
};

class DetectionCenter : public sim::Actor {
 public:
  DetectionCenter(std::shared_ptr<Shared> shared, KeyPair key, std::vector<Bytes> markers,
                  std::size_t report_threshold = 3);
  void on_start(Context& ctx) override;
  void on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) override;
  void on_timer(Context& ctx, std::uint64_t tag, ByteView payload) override;

  const std::vector<Finding>& findings() const { return findings_; }
  const ChainFollower& chain() const { return follower_; }

  /// Issues a cancellation for a logged finding; refuses (nullopt) without one.
  std::optional<tx::CancellationTx> audit_and_cancel(Context& ctx, const Finding* finding);

 private:
  void scan_payload(Context& ctx, const tx::UpdateReleaseTx& u, const std::string& where);
  void handle_report(Context& ctx, ByteView payload);

  std::shared_ptr<Shared> shared_;
  KeyPair key_;
  std::vector<Bytes> markers_;
  std::size_t threshold_;
  ChainFollower follower_;
  std::vector<Finding> findings_;
  std::set<std::pair<EntityClass, std::uint16_t>> cancelled_;
  std::map<Digest, tx::CancellationTx> unconfirmed_;
};

class Manufacturer : public sim::Actor {
 public:
  struct Product {
    ActorId device;
    std::uint16_t serial;
    std::uint16_t region;
  };

  Manufacturer(std::shared_ptr<Shared> shared, std::uint16_t id, std::vector<Product> line, std::uint64_t seed);
  void on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) override;

  /// Manufacturers certified in genesis start out holding their key.
  void install_key(KeyPair key) { key_ = std::move(key); }

  std::uint16_t id() const { return id_; }
  bool registered() const { return key_.has_value(); }
  const std::map<std::uint32_t, DeviceCertificate>& produced() const { return produced_; }
  const std::vector<tx::UpdateReleaseTx>& releases() const { return releases_; }
  bool cancelled() const;

 private:
  void command(Context& ctx, const std::string& type, const Args& args);

  std::shared_ptr<Shared> shared_;
  std::uint16_t id_;
  std::vector<Product> line_;
  DeterministicRng rng_;
  ChainFollower follower_;  // to notice our own cancellation
  std::optional<KeyPair> key_;
  std::map<std::uint32_t, DeviceCertificate> produced_;
  std::vector<tx::UpdateReleaseTx> releases_;
};

class Device : public sim::Actor {
 public:
  struct Config {
    std::uint16_t region = 1;
    std::uint16_t model = 1;
    sim::Time query_interval = 5000;
    sim::Time retry_interval = 1000;
    std::size_t report_threshold = 3;  // consecutive rejections before reporting the RN
  };

  Device(std::shared_ptr<Shared> shared, Config config);
  void on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) override;
  void on_timer(Context& ctx, std::uint64_t tag, ByteView payload) override;

  /// Attacker setup: self-made keys and a certificate and registration signed
  /// by a key the claimed manufacturer never owned.
  void forge_identity(DeterministicRng& rng, std::uint16_t claimed_manufacturer, std::uint16_t serial);

  std::optional<std::uint32_t> device_id() const { return device_id_; }
  bool registered() const { return registered_; }
  const std::map<std::uint32_t, SessionKey>& session_keys() const { return sessions_; }
  const std::vector<Digest>& installed() const { return installed_; }
  const std::vector<merkle::MerkleProof>& receipts() const { return receipts_; }

 private:
  void command(Context& ctx, const std::string& type, const Args& args);
  void submit(Context& ctx, std::string_view type, const Transaction& t);
  void rejected(Context& ctx, ByteView payload);
  ActorId rn() const;

  std::shared_ptr<Shared> shared_;
  Config config_;
  std::optional<HsmRecord> hsm_;
  std::optional<std::uint32_t> device_id_;
  std::optional<PublicKey> manufacturer_key_;
  std::optional<tx::DeviceRegistrationTx> registration_;
  bool registered_ = false;
  bool query_timer_ = false;
  std::size_t consecutive_rejections_ = 0;
  bool reported_ = false;
  std::vector<Bytes> rejected_txs_;
  std::map<Digest, Bytes> submitted_;  // leaf digest -> wire bytes awaiting a receipt
  std::map<std::uint32_t, SessionKey> sessions_;
  std::vector<Digest> installed_;
  std::vector<merkle::MerkleProof> receipts_;
  struct Stored {
    Digest hash;
    std::uint16_t provider;
    Bytes data;
    bool confirmed = false;
  };
  std::map<std::uint16_t, Stored> stored_;  // data number -> record
  std::map<Digest, std::uint16_t> storage_txs_;
};

class CloudProvider : public sim::Actor {
 public:
  CloudProvider(std::shared_ptr<Shared> shared, std::uint16_t id, std::uint16_t region, KeyPair key,
                std::uint32_t key_id);
  void on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) override;
  void on_fault(Context& ctx, const sim::Fault& fault) override;

  bool registered() const { return registered_; }
  const std::map<std::pair<std::uint32_t, std::uint16_t>, Bytes>& store() const { return store_; }

  /// Bytes a retrieval response signature covers.
  static Bytes response_bytes(std::uint16_t provider, std::uint32_t device, std::uint16_t number, ByteView data);

 private:
  void try_store(Context& ctx);

  std::shared_ptr<Shared> shared_;
  std::uint16_t id_;
  std::uint16_t region_;
  KeyPair key_;
  std::uint32_t key_id_;
  bool registered_ = false;
  ChainFollower follower_;
  std::map<std::pair<std::uint32_t, std::uint16_t>, Bytes> store_;
  std::vector<std::pair<std::pair<std::uint32_t, std::uint16_t>, Bytes>> waiting_;
  struct Tamper {
    std::optional<std::uint32_t> device;
    std::optional<std::uint16_t> number;
    std::size_t byte = 0;
  };
  std::vector<Tamper> tampers_;
};

/// Regional node: keeps the chain and tables, batches local transactions
/// into merkle roots and hosts a consensus replica.
class RegionalNode : public sim::Actor, private consensus::Host {
 public:
  struct Options {
    sim::Time flush_interval = 300;
    std::size_t flush_size = 16;
  };

  RegionalNode(std::shared_ptr<Shared> shared, std::uint16_t replica, KeyPair key, Options options);
  RegionalNode(std::shared_ptr<Shared> shared, std::uint16_t replica, KeyPair key)
      : RegionalNode(std::move(shared), replica, std::move(key), Options{}) {}
  void on_start(Context& ctx) override;
  void on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) override;
  void on_timer(Context& ctx, std::uint64_t tag, ByteView payload) override;
  void on_fault(Context& ctx, const sim::Fault& fault) override;

  std::uint16_t region() const { return static_cast<std::uint16_t>(replica_ + 1); }
  const ledger::Ledger& chain() const { return ledger_; }
  const ledger::RnTables& tables() const { return tables_; }
  /// Confirmed local batches by merkle root, as batched.
  const std::map<Digest, std::vector<Transaction>>& local_batches() const { return local_batches_; }
  /// The subset of each confirmed batch that passed re-validation and was applied.
  const std::map<Digest, std::vector<Transaction>>& applied_local() const { return applied_local_; }
  const consensus::Engine& engine() const { return *engine_; }
  std::uint32_t role_mode() const { return mode_; }
  const std::map<std::pair<std::uint32_t, std::uint16_t>, Bytes>& local_data() const { return local_data_; }

 private:
  struct LocalEntry {
    Transaction tx;
    ActorId submitter;
  };
  struct Awaiting {
    std::vector<LocalEntry> entries;
    merkle::MerkleTree tree;
  };
  struct CrossSession {
    std::uint32_t d1, d2;
    ActorId rn1;
  };

  // consensus::Host
  std::uint64_t now() const override;
  void send(consensus::ReplicaIndex to, consensus::Phase phase, Bytes payload, std::string detail) override;
  std::uint64_t set_timer(std::uint64_t delay_ms, std::uint64_t tag) override;
  void cancel_timer(std::uint64_t id) override;
  Signature sign(ByteView message) override;
  bool replica_active(consensus::ReplicaIndex r) const override;
  ledger::ValidationResult admit(const Transaction& t) const override;
  ledger::ValidationResult check_batch(std::span<const Transaction> txs) const override;
  void execute(std::uint64_t sequence, std::vector<Transaction> txs) override;
  std::uint64_t executed_height() const override { return ledger_.height(); }
  const std::vector<Transaction>* executed_batch(std::uint64_t sequence) const override;
  void note(std::string kind, std::string detail) override;

  void handle(ActorId from, const std::string& type, ByteView payload);
  void submit_direct(const Transaction& t, ActorId submitter, bool gossip);
  void add_local(Transaction t, ActorId submitter);
  void flush();
  void after_block(const ledger::Block& block);
  void confirm_local(const Digest& root, std::uint64_t height);
  void send_receipts(const std::vector<LocalEntry>& entries, const merkle::MerkleTree& tree, std::uint64_t height);
  void reject(ActorId to, const Transaction& t, const ledger::ValidationResult& r);
  void handle_request(ActorId from, tx::PermissionTx p);
  void handle_endorse(ActorId from, tx::PermissionTx p);
  void grant_session(std::uint32_t d1, std::uint32_t d2, ActorId rn1);
  std::optional<std::uint16_t> home_region(std::uint32_t device) const;
  std::optional<std::uint32_t> device_of(ActorId a) const;
  bool rejecting() const { return (mode_ & consensus::kRejectClients) != 0; }

  std::shared_ptr<Shared> shared_;
  std::uint16_t replica_;
  KeyPair key_;
  Options options_;
  ledger::Ledger ledger_;
  ledger::RnTables tables_;
  std::unique_ptr<consensus::Engine> engine_;
  Context* ctx_ = nullptr;
  std::uint32_t mode_ = consensus::kHonest;
  DeterministicRng rng_;

  std::vector<LocalEntry> local_pending_;
  std::map<Digest, Awaiting> awaiting_;
  std::map<Digest, std::vector<Transaction>> local_batches_, applied_local_;
  std::map<Digest, std::uint64_t> root_heights_;
  std::map<std::tuple<bool, std::uint32_t, std::uint32_t, Operation>, ActorId> cross_notify_;
  std::map<std::uint32_t, ActorId> device_actors_;
  std::map<Digest, std::vector<ActorId>> notify_;
  std::map<Digest, CrossSession> cross_sessions_;
  std::map<std::pair<std::uint32_t, std::uint16_t>, Bytes> local_data_;
};

/// Message type names shared by the roles.
namespace msg {
inline constexpr std::string_view kBlock = "rn/block";
inline constexpr std::string_view kSubmit = "rn/submit";
inline constexpr std::string_view kGossip = "rn/gossip";
inline constexpr std::string_view kEndorse = "rn/endorse";
inline constexpr std::string_view kRelaySession = "rn/relay-session";
inline constexpr std::string_view kRelayDenied = "rn/relay-denied";
inline constexpr std::string_view kReject = "rn/reject";
inline constexpr std::string_view kReceipt = "rn/receipt";
inline constexpr std::string_view kConfirmed = "rn/confirmed";
inline constexpr std::string_view kUpdate = "rn/update";
inline constexpr std::string_view kUpdateNone = "rn/update-none";
inline constexpr std::string_view kSession = "rn/session";
inline constexpr std::string_view kDenied = "rn/denied";
inline constexpr std::string_view kStored = "rn/stored";
inline constexpr std::string_view kRegister = "dev/register";
inline constexpr std::string_view kQuery = "dev/query";
inline constexpr std::string_view kGrant = "dev/grant";
inline constexpr std::string_view kRequest = "dev/request";
inline constexpr std::string_view kStorage = "dev/storage";
inline constexpr std::string_view kStoreLocal = "dev/store-local";
inline constexpr std::string_view kData = "dev/data";
inline constexpr std::string_view kApply = "cc/apply";
inline constexpr std::string_view kIssued = "cc/issued";
inline constexpr std::string_view kRefused = "cc/refused";
inline constexpr std::string_view kReport = "dc/report";
inline constexpr std::string_view kInspect = "dc/inspect";
inline constexpr std::string_view kHsm = "mfr/hsm";
inline constexpr std::string_view kLocalRelease = "mfr/local-release";
inline constexpr std::string_view kCloudRegister = "cloud/register";
inline constexpr std::string_view kCloudPut = "cloud/put";
inline constexpr std::string_view kCloudGet = "cloud/get";
inline constexpr std::string_view kCloudData = "cloud/data";
inline constexpr std::string_view kCloudMissing = "cloud/missing";
inline constexpr std::string_view kCloudRefused = "cloud/refused";
}  // namespace msg

}  // namespace iotchain::roles

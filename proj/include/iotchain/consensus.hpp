#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "iotchain/crypto.hpp"
#include "iotchain/ledger.hpp"

namespace iotchain::consensus {

using ledger::Transaction;
using ReplicaIndex = std::uint16_t;
inline constexpr ReplicaIndex kBroadcast = 0xFFFF;

class ConsensusError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct ConsensusConfig {
  std::uint16_t n = 4;
  std::uint64_t timeout_ms = 2000;         // view-change timeout, doubled per failed view
  std::size_t batch_size = 16;             // B
  std::uint64_t batch_timeout_ms = 500;    // T
  std::uint64_t status_interval_ms = 1000;

  std::uint16_t f() const { return static_cast<std::uint16_t>((n - 1) / 3); }
  std::uint16_t quorum() const { return static_cast<std::uint16_t>(2 * f() + 1); }
  ReplicaIndex primary(std::uint64_t view) const { return static_cast<ReplicaIndex>(view % n); }
};

/// Byzantine behaviours a replica can be switched into. Crashes are modelled
/// by the network, not here.
enum ByzantineMode : std::uint32_t {
  kHonest = 0,
  kSilent = 1u << 0,          // sends nothing
  kEquivocate = 1u << 1,      // conflicting proposals; votes for every digest it sees
  kForgeInject = 1u << 2,     // forged transactions in proposals, forged votes
  kRejectClients = 1u << 3,   // role level: refuses valid device transactions
  kTamperUpdates = 1u << 4,   // role level: alters update payloads it relays
};
std::string mode_string(std::uint32_t mode);
std::uint32_t parse_mode(std::string_view text);  // "silent|equivocate"

/// Replica group an equivocating primary sends each version to.
inline int equivocation_group(ReplicaIndex r) { return r % 2; }

enum class Phase : std::uint8_t {
  PrePrepare = 1,
  Prepare = 2,
  Commit = 3,
  ViewChange = 4,
  NewView = 5,
  Status = 6,
  SyncRequest = 7,
  SyncResponse = 8,
  Order = 9,  // ordering stub
};
std::string to_string(Phase p);

/// Signed consensus envelope. `digest` is the batch digest for
/// pre-prepare/prepare/commit/order/sync-response and the body hash for the
/// others, so the signature always covers the body.
struct PbftMessage {
  Phase phase = Phase::Prepare;
  std::uint64_t view = 0;
  std::uint64_t sequence = 0;
  Digest digest;
  ReplicaIndex sender = 0;
  Signature signature;
  Bytes body;

  bool operator==(const PbftMessage&) const = default;
};

Bytes signed_part(const PbftMessage& m);
Bytes encode(const PbftMessage& m);
PbftMessage decode(ByteView bytes);  // throws TruncatedInput / ConsensusError
std::string message_type(Phase p);   // "pbft/prepare" etc.

/// 2f+1 signed prepares for one (view, sequence, digest), plus the batch.
struct PreparedCert {
  std::uint64_t view = 0;
  std::uint64_t sequence = 0;
  Digest digest;
  std::vector<Transaction> batch;
  std::vector<PbftMessage> prepares;
};

/// What an engine needs from the node hosting it.
class Host {
 public:
  virtual ~Host() = default;
  virtual std::uint64_t now() const = 0;
  virtual void send(ReplicaIndex to, Phase phase, Bytes payload, std::string detail) = 0;
  virtual std::uint64_t set_timer(std::uint64_t delay_ms, std::uint64_t tag) = 0;
  virtual void cancel_timer(std::uint64_t id) = 0;
  virtual Signature sign(ByteView message) = 0;
  /// Registered and not cancelled.
  virtual bool replica_active(ReplicaIndex r) const = 0;
  /// Re-check of one pending transaction against current state.
  virtual ledger::ValidationResult admit(const Transaction& tx) const = 0;
  /// Validity of a proposed block on top of the current tip.
  virtual ledger::ValidationResult check_batch(std::span<const Transaction> txs) const = 0;
  /// Appends the decided batch as block `sequence` (== tip height + 1).
  virtual void execute(std::uint64_t sequence, std::vector<Transaction> txs) = 0;
  virtual std::uint64_t executed_height() const = 0;
  virtual const std::vector<Transaction>* executed_batch(std::uint64_t sequence) const = 0;
  virtual void note(std::string kind, std::string detail) = 0;
};

/// Pluggable ordering interface.
class Engine {
 public:
  virtual ~Engine() = default;
  virtual std::string_view name() const = 0;
  virtual void start() = 0;
  /// A validated client transaction; engines dedupe by digest.
  virtual void submit(Transaction tx) = 0;
  virtual void on_message(ReplicaIndex from, ByteView payload) = 0;
  virtual void on_timer(std::uint64_t tag) = 0;
  virtual void set_byzantine(std::uint32_t mode, std::vector<ReplicaIndex> colluders) = 0;
  virtual std::uint64_t view() const = 0;
  virtual std::size_t pending_count() const = 0;
};

class PbftReplica final : public Engine {
 public:
  PbftReplica(ConsensusConfig config, ReplicaIndex self, std::vector<PublicKey> replica_keys, Host& host);

  std::string_view name() const override { return "pbft"; }
  void start() override;
  void submit(Transaction tx) override;
  void on_message(ReplicaIndex from, ByteView payload) override;
  void on_timer(std::uint64_t tag) override;
  void set_byzantine(std::uint32_t mode, std::vector<ReplicaIndex> colluders) override;
  std::uint64_t view() const override { return view_; }
  std::size_t pending_count() const override { return pending_.size(); }

  /// Primary only: proposes up to B pending transactions now. Throws
  /// ConsensusError when called on a backup or with nothing pending.
  PbftMessage propose();

  bool is_primary() const { return config_.primary(view_) == self_; }
  bool in_view_change() const { return view_changing_; }
  std::uint64_t current_timeout() const { return timeout_; }
  /// Digest this replica sent a prepare for at (view, sequence), if any.
  std::optional<Digest> prepared_digest(std::uint64_t view, std::uint64_t sequence) const;
  /// Distinct senders of matching prepares / commits counted so far.
  std::size_t prepare_votes(std::uint64_t view, std::uint64_t sequence, const Digest& d) const;
  std::size_t commit_votes(std::uint64_t view, std::uint64_t sequence, const Digest& d) const;
  const ConsensusConfig& config() const { return config_; }

  static constexpr std::uint64_t kTimerBatch = 1;
  static constexpr std::uint64_t kTimerViewChange = 2;
  static constexpr std::uint64_t kTimerStatus = 3;

 private:
  struct Slot {
    std::optional<Digest> accepted;  // digest of the pre-prepare we accepted
    std::map<Digest, std::map<ReplicaIndex, PbftMessage>> prepares;
    std::map<Digest, std::set<ReplicaIndex>> commits;
    bool sent_prepare = false;
    bool sent_commit = false;
  };
  struct ViewChangeInfo {
    std::uint64_t last_executed = 0;
    std::vector<PreparedCert> certs;
    PbftMessage message;
  };

  void broadcast(Phase phase, std::uint64_t view, std::uint64_t seq, const Digest& digest, Bytes body,
                 ReplicaIndex to = kBroadcast);
  PbftMessage make(Phase phase, std::uint64_t view, std::uint64_t seq, const Digest& digest, Bytes body);
  bool silent() const { return (mode_ & kSilent) != 0; }

  void handle_pre_prepare(const PbftMessage& m);
  void handle_prepare(const PbftMessage& m);
  void handle_commit(const PbftMessage& m);
  void handle_view_change(const PbftMessage& m);
  void handle_new_view(const PbftMessage& m);
  void handle_status(const PbftMessage& m);
  void handle_sync_request(const PbftMessage& m);
  void handle_sync_response(const PbftMessage& m);

  void vote_everything(std::uint64_t view, std::uint64_t seq, const Digest& digest);
  void accept_proposal(std::uint64_t view, std::uint64_t seq, const Digest& digest);
  void apply_sync();
  std::optional<ViewChangeInfo> parse_view_change(const PbftMessage& m) const;
  void try_pending_proposals();
  void check_prepared(std::uint64_t view, std::uint64_t seq);
  void check_committed(std::uint64_t view, std::uint64_t seq);
  void execute_ready();
  void maybe_propose();
  void arm_batch_timer();
  void arm_view_timer();
  void restart_view_timer();
  void start_view_change(std::uint64_t target);
  void try_new_view(std::uint64_t target);
  void request_sync();
  bool has_work() const;
  std::vector<PreparedCert> certs_for_view_change() const;
  bool valid_cert(const PreparedCert& c) const;
  /// Deterministic re-proposal plan a new primary derives from a view-change set.
  struct NewViewPlan {
    std::uint64_t base = 0;
    std::vector<PreparedCert> reproposals;
  };
  NewViewPlan plan_new_view(const std::map<ReplicaIndex, ViewChangeInfo>& set) const;
  void enter_view(std::uint64_t v, const NewViewPlan& plan);

  ConsensusConfig config_;
  ReplicaIndex self_;
  std::vector<PublicKey> keys_;
  Host& host_;
  std::uint32_t mode_ = kHonest;
  std::vector<ReplicaIndex> colluders_;

  std::uint64_t view_ = 0;
  bool view_changing_ = false;
  std::uint64_t vc_target_ = 0;
  std::uint64_t timeout_;
  std::uint64_t last_proposed_ = 0;

  std::vector<Transaction> pending_;
  std::set<Digest> pending_ids_;
  std::set<Digest> executed_ids_;

  std::map<std::pair<std::uint64_t, std::uint64_t>, Slot> slots_;       // (view, seq)
  std::map<std::pair<std::uint64_t, std::uint64_t>, Digest> proposals_;  // first pre-prepare seen
  std::map<std::uint64_t, std::vector<PbftMessage>> future_;             // pre-prepares for later views
  std::set<std::tuple<std::uint64_t, std::uint64_t, Digest>> voted_;     // equivocating votes cast
  std::set<std::uint64_t> new_view_sent_;
  std::uint64_t last_sync_request_ = 0;
  bool synced_once_ = false;
  std::map<Digest, std::vector<Transaction>> batches_;
  std::map<std::uint64_t, std::pair<std::uint64_t, Digest>> decided_;  // seq -> (view, digest) awaiting execution
  std::map<std::uint64_t, PreparedCert> prepared_;                    // seq -> latest prepared cert
  std::map<std::uint64_t, std::map<ReplicaIndex, ViewChangeInfo>> view_changes_;
  struct PeerStatus {
    std::uint64_t view = 0;
    std::uint64_t executed = 0;
    bool changing = false;
  };
  std::map<ReplicaIndex, PeerStatus> status_;
  std::map<std::uint64_t, std::map<Digest, std::set<ReplicaIndex>>> sync_votes_;
  std::map<Digest, std::vector<Transaction>> sync_batches_;

  std::optional<std::uint64_t> batch_timer_, view_timer_;
};

/// Single-leader ordering with no fault tolerance: replica 0 orders, everyone
/// executes in sequence. Demonstrates the engine interface is pluggable.
class OrderingStub final : public Engine {
 public:
  OrderingStub(ConsensusConfig config, ReplicaIndex self, std::vector<PublicKey> replica_keys, Host& host);

  std::string_view name() const override { return "ordering-stub"; }
  void start() override {}
  void submit(Transaction tx) override;
  void on_message(ReplicaIndex from, ByteView payload) override;
  void on_timer(std::uint64_t tag) override;
  void set_byzantine(std::uint32_t, std::vector<ReplicaIndex>) override {}
  std::uint64_t view() const override { return 0; }
  std::size_t pending_count() const override { return pending_.size(); }

 private:
  void flush();
  void execute_ready();

  ConsensusConfig config_;
  ReplicaIndex self_;
  std::vector<PublicKey> keys_;
  Host& host_;
  std::vector<Transaction> pending_;
  std::set<Digest> seen_;
  std::uint64_t next_seq_ = 1;
  std::map<std::uint64_t, std::vector<Transaction>> buffered_;
  std::optional<std::uint64_t> batch_timer_;
};

enum class EngineKind { Pbft, OrderingStub };
std::unique_ptr<Engine> make_engine(EngineKind kind, ConsensusConfig config, ReplicaIndex self,
                                    std::vector<PublicKey> replica_keys, Host& host);

}  // namespace iotchain::consensus

#include "iotchain/consensus.hpp"

#include <algorithm>
#include <sstream>

namespace iotchain::consensus {

namespace {

std::string detail(std::uint64_t view, std::uint64_t seq, const Digest& d) {
  std::ostringstream os;
  os << "v=" << view << " s=" << seq << " d=" << d.prefix();
  return os.str();
}

bool digest_from_body(Phase p) {
  return p == Phase::ViewChange || p == Phase::NewView || p == Phase::Status || p == Phase::SyncRequest;
}

bool carries_batch(Phase p) { return p == Phase::PrePrepare || p == Phase::Order || p == Phase::SyncResponse; }

bool safe_verify(const PublicKey& pk, ByteView msg, const Signature& sig) {
  try {
    return verify(pk, msg, sig);
  } catch (const DecodeError&) {
    return false;
  }
}

std::vector<Digest> tx_ids(std::span<const Transaction> txs) {
  std::vector<Digest> out;
  for (const auto& t : txs) out.push_back(tx::tx_digest(t));
  return out;
}

}  // namespace

std::string mode_string(std::uint32_t mode) {
  if (mode == kHonest) return "honest";
  static const std::pair<std::uint32_t, const char*> names[] = {
      {kSilent, "silent"}, {kEquivocate, "equivocate"}, {kForgeInject, "forge-inject"},
      {kRejectClients, "reject-clients"}, {kTamperUpdates, "tamper-updates"}};
  std::string out;
  for (auto [bit, name] : names)
    if (mode & bit) out += (out.empty() ? "" : "|") + std::string(name);
  return out;
}

std::uint32_t parse_mode(std::string_view text) {
  std::uint32_t mode = kHonest;
  while (!text.empty()) {
    auto bar = text.find('|');
    auto word = text.substr(0, bar);
    if (word == "silent") mode |= kSilent;
    else if (word == "equivocate") mode |= kEquivocate;
    else if (word == "forge-inject") mode |= kForgeInject;
    else if (word == "reject-clients") mode |= kRejectClients;
    else if (word == "tamper-updates") mode |= kTamperUpdates;
    else if (word != "honest") throw ConsensusError("unknown byzantine mode '" + std::string(word) + "'");
    if (bar == std::string_view::npos) break;
    text.remove_prefix(bar + 1);
  }
  return mode;
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::PrePrepare: return "pre-prepare";
    case Phase::Prepare: return "prepare";
    case Phase::Commit: return "commit";
    case Phase::ViewChange: return "view-change";
    case Phase::NewView: return "new-view";
    case Phase::Status: return "status";
    case Phase::SyncRequest: return "sync-request";
    case Phase::SyncResponse: return "sync-response";
    case Phase::Order: return "order";
  }
  return "unknown";
}

std::string message_type(Phase p) { return (p == Phase::Order ? "stub/" : "pbft/") + to_string(p); }

Bytes signed_part(const PbftMessage& m) {
  ByteWriter w;
  w.raw(to_bytes("pbft")).u8(static_cast<std::uint8_t>(m.phase)).u64(m.view).u64(m.sequence).raw(m.digest.view()).u16(m.sender);
  return std::move(w).take();
}

Bytes encode(const PbftMessage& m) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(m.phase)).u64(m.view).u64(m.sequence).raw(m.digest.view()).u16(m.sender);
  w.raw(m.signature.view()).blob(m.body);
  return std::move(w).take();
}

PbftMessage decode(ByteView bytes) {
  ByteReader r(bytes);
  PbftMessage m;
  auto phase = r.u8();
  if (phase < 1 || phase > 9) throw ConsensusError("unknown consensus phase");
  m.phase = static_cast<Phase>(phase);
  m.view = r.u64();
  m.sequence = r.u64();
  m.digest = Digest::from(r.raw(kDigestSize));
  m.sender = r.u16();
  m.signature = Signature::from(r.raw(kSignatureSize));
  m.body = r.blob();
  if (!r.done()) throw ConsensusError("trailing bytes after consensus message");
  return m;
}

namespace {

Bytes encode_cert(const PreparedCert& c) {
  ByteWriter w;
  w.u64(c.view).u64(c.sequence).raw(c.digest.view()).blob(ledger::encode_batch(c.batch));
  w.u32(static_cast<std::uint32_t>(c.prepares.size()));
  for (const auto& p : c.prepares) w.blob(encode(p));
  return std::move(w).take();
}

PreparedCert decode_cert(ByteReader& r) {
  PreparedCert c;
  c.view = r.u64();
  c.sequence = r.u64();
  c.digest = Digest::from(r.raw(kDigestSize));
  c.batch = ledger::decode_batch(r.blob());
  auto n = r.u32();
  if (n > 1024) throw ConsensusError("oversized certificate");
  for (std::uint32_t i = 0; i < n; ++i) c.prepares.push_back(decode(r.blob()));
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------

PbftReplica::PbftReplica(ConsensusConfig config, ReplicaIndex self, std::vector<PublicKey> replica_keys, Host& host)
    : config_(config), self_(self), keys_(std::move(replica_keys)), host_(host), timeout_(config.timeout_ms) {
  if (config_.n < 1 || keys_.size() != config_.n) throw ConsensusError("replica key count must equal n");
  if (self_ >= config_.n) throw ConsensusError("replica index out of range");
}

void PbftReplica::set_byzantine(std::uint32_t mode, std::vector<ReplicaIndex> colluders) {
  mode_ = mode;
  colluders_ = std::move(colluders);
  host_.note("byzantine", mode_string(mode));
}

PbftMessage PbftReplica::make(Phase phase, std::uint64_t view, std::uint64_t seq, const Digest& digest, Bytes body) {
  PbftMessage m{phase, view, seq, digest, self_, {}, std::move(body)};
  if (digest_from_body(phase)) m.digest = hash(m.body);
  m.signature = host_.sign(signed_part(m));
  return m;
}

void PbftReplica::broadcast(Phase phase, std::uint64_t view, std::uint64_t seq, const Digest& digest, Bytes body,
                            ReplicaIndex to) {
  if (silent()) return;
  auto m = make(phase, view, seq, digest, std::move(body));
  host_.send(to, phase, encode(m), detail(view, seq, m.digest));
}

void PbftReplica::start() {
  if (config_.status_interval_ms > 0) host_.set_timer(config_.status_interval_ms, kTimerStatus);
}

bool PbftReplica::has_work() const {
  if (!pending_.empty()) return true;
  auto executed = host_.executed_height();
  for (const auto& [key, d] : proposals_)
    if (key.second > executed) return true;
  return !decided_.empty();
}

void PbftReplica::arm_batch_timer() {
  if (!batch_timer_) batch_timer_ = host_.set_timer(config_.batch_timeout_ms, kTimerBatch);
}

void PbftReplica::arm_view_timer() {
  if (!view_timer_ && (has_work() || view_changing_)) view_timer_ = host_.set_timer(timeout_, kTimerViewChange);
}

void PbftReplica::restart_view_timer() {
  if (view_timer_) host_.cancel_timer(*view_timer_);
  view_timer_.reset();
  arm_view_timer();
}

void PbftReplica::submit(Transaction t) {
  auto id = tx::tx_digest(t);
  if (executed_ids_.contains(id) || !pending_ids_.insert(id).second) return;
  pending_.push_back(std::move(t));
  arm_view_timer();
  if (is_primary() && !view_changing_) {
    if (pending_.size() >= config_.batch_size) maybe_propose();
    else arm_batch_timer();
  }
}

void PbftReplica::maybe_propose() {
  if (!is_primary() || view_changing_ || silent()) return;
  if (last_proposed_ > host_.executed_height() || pending_.empty()) return;
  if ((mode_ & kEquivocate) && pending_.size() < 2) {
    arm_batch_timer();
    return;
  }
  try {
    propose();
  } catch (const ConsensusError& e) {
    host_.note("propose-skipped", e.what());
  }
}

PbftMessage PbftReplica::propose() {
  if (!is_primary()) throw ConsensusError("only the primary proposes");
  if (view_changing_) throw ConsensusError("view change in progress");
  // Collect up to B transactions that are valid together.
  std::vector<Transaction> batch;
  std::vector<Transaction> keep;
  for (auto& t : pending_) {
    if (batch.size() >= config_.batch_size) {
      keep.push_back(std::move(t));
      continue;
    }
    batch.push_back(t);
    if (!host_.check_batch(batch).ok()) {
      batch.pop_back();
      pending_ids_.erase(tx::tx_digest(t));
      host_.note("drop-invalid", tx::debug_line(t));
      continue;
    }
    keep.push_back(std::move(t));
  }
  pending_ = std::move(keep);
  if (batch.empty()) throw ConsensusError("nothing valid to propose");

  if (mode_ & kForgeInject) {
    // A copy of the first transaction with a corrupted signature.
    Transaction forged = batch.front();
    std::visit([](auto& x) {
      if constexpr (requires { x.signature; }) x.signature.bytes[0] ^= 0xFF;
      else if constexpr (requires { x.signatures; }) {
        if (!x.signatures.empty()) x.signatures[0].bytes[0] ^= 0xFF;
      }
    }, forged);
    batch.push_back(std::move(forged));
    host_.note("forge", "injected forged transaction into proposal");
  }

  std::uint64_t seq = host_.executed_height() + 1;
  last_proposed_ = seq;
  Digest d = ledger::batch_digest(batch);
  batches_[d] = batch;
  auto body = ledger::encode_batch(batch);
  auto msg = make(Phase::PrePrepare, view_, seq, d, body);

  if ((mode_ & kEquivocate) && batch.size() >= 2) {
    std::vector<Transaction> other(batch.rbegin(), batch.rend());
    Digest d2 = ledger::batch_digest(other);
    batches_[d2] = other;
    auto msg2 = make(Phase::PrePrepare, view_, seq, d2, ledger::encode_batch(other));
    host_.note("equivocate", detail(view_, seq, d) + " alt=" + d2.prefix());
    for (ReplicaIndex r = 0; r < config_.n; ++r) {
      if (r == self_) continue;
      bool colluder = std::find(colluders_.begin(), colluders_.end(), r) != colluders_.end();
      if (colluder || equivocation_group(r) == 0) host_.send(r, Phase::PrePrepare, encode(msg), detail(view_, seq, d));
      if (colluder || equivocation_group(r) == 1) host_.send(r, Phase::PrePrepare, encode(msg2), detail(view_, seq, d2));
    }
    for (const auto& dd : {d, d2}) {
      if (voted_.insert({view_, seq, dd}).second) {
        broadcast(Phase::Prepare, view_, seq, dd, {});
        broadcast(Phase::Commit, view_, seq, dd, {});
      }
    }
    return msg;
  }

  if (!silent()) host_.send(kBroadcast, Phase::PrePrepare, encode(msg), detail(view_, seq, d));
  proposals_[{view_, seq}] = d;
  accept_proposal(view_, seq, d);
  arm_view_timer();
  return msg;
}

void PbftReplica::on_timer(std::uint64_t tag) {
  switch (tag) {
    case kTimerBatch:
      batch_timer_.reset();
      maybe_propose();
      break;
    case kTimerViewChange:
      view_timer_.reset();
      if (view_changing_) {
        timeout_ = std::min<std::uint64_t>(timeout_ * 2, 64 * config_.timeout_ms);
        start_view_change(vc_target_ + 1);
      } else if (has_work()) {
        timeout_ = std::min<std::uint64_t>(timeout_ * 2, 64 * config_.timeout_ms);
        start_view_change(view_ + 1);
      }
      break;
    case kTimerStatus: {
      host_.set_timer(config_.status_interval_ms, kTimerStatus);
      ByteWriter w;
      w.u64(host_.executed_height()).u8(view_changing_ ? 1 : 0);
      broadcast(Phase::Status, view_, 0, {}, std::move(w).take());
      if ((mode_ & kForgeInject) && !silent()) {
        // A vote claiming to come from a peer, signed with our own key.
        PbftMessage forged{Phase::Commit, view_, host_.executed_height() + 1, hash(to_bytes("forged")),
                           static_cast<ReplicaIndex>((self_ + 1) % config_.n), {}, {}};
        forged.signature = host_.sign(signed_part(forged));
        host_.send(kBroadcast, Phase::Commit, encode(forged), detail(forged.view, forged.sequence, forged.digest));
      }
      break;
    }
    default: break;
  }
}

void PbftReplica::on_message(ReplicaIndex from, ByteView payload) {
  PbftMessage m;
  try {
    m = decode(payload);
  } catch (const std::exception& e) {
    host_.note("drop-malformed", std::string("from=") + std::to_string(from) + " " + e.what());
    return;
  }
  if (m.sender >= config_.n || m.phase == Phase::Order) {
    host_.note("drop-malformed", "sender out of range");
    return;
  }
  if (!safe_verify(keys_[m.sender], signed_part(m), m.signature)) {
    host_.note("bad-signature", "claimed=" + std::to_string(m.sender) + " from=" + std::to_string(from) + " " +
                                    to_string(m.phase) + " " + detail(m.view, m.sequence, m.digest));
    return;
  }
  if (m.sender != from) {
    host_.note("spoofed-sender", "claimed=" + std::to_string(m.sender) + " from=" + std::to_string(from));
    return;
  }
  if (!host_.replica_active(m.sender)) {
    host_.note("drop-cancelled", "replica=" + std::to_string(m.sender));
    return;
  }
  if (digest_from_body(m.phase) && m.digest != hash(m.body)) {
    host_.note("drop-malformed", "body digest mismatch");
    return;
  }
  if (carries_batch(m.phase)) {
    try {
      if (ledger::batch_digest(ledger::decode_batch(m.body)) != m.digest) throw ConsensusError("batch digest mismatch");
    } catch (const std::exception& e) {
      host_.note("drop-malformed", e.what());
      return;
    }
  }
  switch (m.phase) {
    case Phase::PrePrepare: handle_pre_prepare(m); break;
    case Phase::Prepare: handle_prepare(m); break;
    case Phase::Commit: handle_commit(m); break;
    case Phase::ViewChange: handle_view_change(m); break;
    case Phase::NewView: handle_new_view(m); break;
    case Phase::Status: handle_status(m); break;
    case Phase::SyncRequest: handle_sync_request(m); break;
    case Phase::SyncResponse: handle_sync_response(m); break;
    case Phase::Order: break;
  }
}

void PbftReplica::vote_everything(std::uint64_t view, std::uint64_t seq, const Digest& d) {
  if (voted_.insert({view, seq, d}).second) {
    broadcast(Phase::Prepare, view, seq, d, {});
    broadcast(Phase::Commit, view, seq, d, {});
  }
}

void PbftReplica::handle_pre_prepare(const PbftMessage& m) {
  if (m.sender != config_.primary(m.view)) {
    host_.note("drop-not-primary", detail(m.view, m.sequence, m.digest));
    return;
  }
  if (m.sender == self_) return;
  batches_.try_emplace(m.digest, ledger::decode_batch(m.body));
  if (mode_ & kEquivocate) {
    vote_everything(m.view, m.sequence, m.digest);
    return;
  }
  if (m.view < view_) return;
  if (m.view > view_ || view_changing_) {
    if (m.view > view_ && future_[m.view].size() < 64) future_[m.view].push_back(m);
    return;
  }
  auto [it, inserted] = proposals_.try_emplace({m.view, m.sequence}, m.digest);
  if (!inserted && it->second != m.digest) {
    host_.note("equivocation-detected", detail(m.view, m.sequence, m.digest) + " first=" + it->second.prefix());
    return;
  }
  arm_view_timer();
  try_pending_proposals();
  if (m.sequence > host_.executed_height() + 1) request_sync();
}

void PbftReplica::try_pending_proposals() {
  if (view_changing_) return;
  auto executed = host_.executed_height();
  for (const auto& [key, d] : proposals_) {
    auto [v, seq] = key;
    if (v != view_) continue;
    Slot& slot = slots_[key];
    if (slot.sent_prepare) continue;
    if (seq <= executed) {
      // Already executed here: help the others reach quorum on the same batch.
      const auto* done = host_.executed_batch(seq);
      if (done && ledger::batch_digest(*done) == d) accept_proposal(v, seq, d);
      else host_.note("conflicting-proposal", detail(v, seq, d));
      continue;
    }
    if (seq != executed + 1) continue;
    auto bit = batches_.find(d);
    if (bit == batches_.end()) continue;
    auto r = host_.check_batch(bit->second);
    if (!r.ok()) {
      slot.sent_prepare = true;  // never prepare this one
      host_.note("reject-proposal", detail(v, seq, d) + " reason=" + ledger::to_string(*r.reason) + " " + r.detail);
      continue;
    }
    accept_proposal(v, seq, d);
  }
}

void PbftReplica::accept_proposal(std::uint64_t view, std::uint64_t seq, const Digest& d) {
  Slot& slot = slots_[{view, seq}];
  if (slot.sent_prepare) return;
  slot.accepted = d;
  slot.sent_prepare = true;
  auto prep = make(Phase::Prepare, view, seq, d, {});
  slot.prepares[d][self_] = prep;
  if (!silent()) host_.send(kBroadcast, Phase::Prepare, encode(prep), detail(view, seq, d));
  check_prepared(view, seq);
  // A replica that already executed `seq` also commits so laggards can decide.
  if (seq <= host_.executed_height() && !slot.sent_commit) {
    slot.sent_commit = true;
    slot.commits[d].insert(self_);
    broadcast(Phase::Commit, view, seq, d, {});
  }
}

void PbftReplica::handle_prepare(const PbftMessage& m) {
  if (mode_ & kEquivocate) {
    vote_everything(m.view, m.sequence, m.digest);
    return;
  }
  if (m.view < view_) return;
  Slot& slot = slots_[{m.view, m.sequence}];
  slot.prepares[m.digest].try_emplace(m.sender, m);
  check_prepared(m.view, m.sequence);
}

void PbftReplica::check_prepared(std::uint64_t view, std::uint64_t seq) {
  if (view != view_ || view_changing_) return;
  Slot& slot = slots_[{view, seq}];
  if (!slot.accepted || slot.sent_commit) return;
  const auto& votes = slot.prepares[*slot.accepted];
  if (votes.size() < config_.quorum()) return;
  PreparedCert cert{view, seq, *slot.accepted, batches_.at(*slot.accepted), {}};
  for (const auto& [sender, msg] : votes) {
    cert.prepares.push_back(msg);
    if (cert.prepares.size() == config_.quorum()) break;
  }
  auto it = prepared_.find(seq);
  if (it == prepared_.end() || it->second.view <= view) prepared_[seq] = std::move(cert);
  slot.sent_commit = true;
  slot.commits[*slot.accepted].insert(self_);
  broadcast(Phase::Commit, view, seq, *slot.accepted, {});
  check_committed(view, seq);
}

void PbftReplica::handle_commit(const PbftMessage& m) {
  if (mode_ & kEquivocate) {
    vote_everything(m.view, m.sequence, m.digest);
    return;
  }
  if (m.sequence <= host_.executed_height()) return;
  slots_[{m.view, m.sequence}].commits[m.digest].insert(m.sender);
  check_committed(m.view, m.sequence);
}

void PbftReplica::check_committed(std::uint64_t view, std::uint64_t seq) {
  if (seq <= host_.executed_height() || decided_.contains(seq)) return;
  Slot& slot = slots_[{view, seq}];
  for (const auto& [d, voters] : slot.commits) {
    if (voters.size() < config_.quorum() || !batches_.contains(d)) continue;
    decided_[seq] = {view, d};
    host_.note("committed", detail(view, seq, d));
    execute_ready();
    return;
  }
}

void PbftReplica::execute_ready() {
  bool progressed = false;
  for (;;) {
    auto next = host_.executed_height() + 1;
    auto it = decided_.find(next);
    if (it == decided_.end()) break;
    auto [view, d] = it->second;
    decided_.erase(it);
    const auto& batch = batches_.at(d);
    auto r = host_.check_batch(batch);
    if (!r.ok()) {
      host_.note("refuse-invalid-decision", detail(view, next, d) + " " + r.detail);
      break;
    }
    host_.execute(next, batch);
    host_.note("decide", detail(view, next, d) + " txs=" + std::to_string(batch.size()));
    for (const auto& id : tx_ids(batch)) {
      executed_ids_.insert(id);
      pending_ids_.erase(id);
    }
    last_proposed_ = std::max(last_proposed_, next);
    progressed = true;
  }
  if (!progressed) return;

  // Drop executed and now-invalid pending transactions.
  std::vector<Transaction> keep;
  for (auto& t : pending_) {
    auto id = tx::tx_digest(t);
    if (executed_ids_.contains(id)) continue;
    if (auto r = host_.admit(t); !r.ok()) {
      pending_ids_.erase(id);
      host_.note("drop-invalid", tx::debug_line(t) + " reason=" + ledger::to_string(*r.reason));
      continue;
    }
    keep.push_back(std::move(t));
  }
  pending_ = std::move(keep);

  auto executed = host_.executed_height();
  std::erase_if(slots_, [&](const auto& kv) { return kv.first.second + 4 <= executed; });
  std::erase_if(proposals_, [&](const auto& kv) { return kv.first.second + 4 <= executed; });
  std::erase_if(prepared_, [&](const auto& kv) { return kv.first + 4 <= executed; });
  std::erase_if(sync_votes_, [&](const auto& kv) { return kv.first <= executed; });
  std::erase_if(decided_, [&](const auto& kv) { return kv.first <= executed; });

  timeout_ = config_.timeout_ms;
  restart_view_timer();
  try_pending_proposals();
  if (is_primary() && !view_changing_) {
    if (pending_.size() >= config_.batch_size) maybe_propose();
    else if (!pending_.empty()) arm_batch_timer();
  }
  if (!sync_votes_.empty()) apply_sync();
}

// --- view change -------------------------------------------------------------

std::vector<PreparedCert> PbftReplica::certs_for_view_change() const {
  std::vector<PreparedCert> out;
  for (const auto& [seq, cert] : prepared_) out.push_back(cert);
  return out;
}

bool PbftReplica::valid_cert(const PreparedCert& c) const {
  if (ledger::batch_digest(c.batch) != c.digest) return false;
  std::set<ReplicaIndex> senders;
  for (const auto& p : c.prepares) {
    if (p.phase != Phase::Prepare || p.view != c.view || p.sequence != c.sequence || p.digest != c.digest) return false;
    if (p.sender >= config_.n || !safe_verify(keys_[p.sender], signed_part(p), p.signature)) return false;
    senders.insert(p.sender);
  }
  return senders.size() >= config_.quorum();
}

void PbftReplica::start_view_change(std::uint64_t target) {
  view_changing_ = true;
  vc_target_ = target;
  if (batch_timer_) host_.cancel_timer(*batch_timer_);
  batch_timer_.reset();
  host_.note("view-change", "target=" + std::to_string(target) + " timeout=" + std::to_string(timeout_));

  ByteWriter w;
  auto certs = certs_for_view_change();
  w.u64(host_.executed_height()).u32(static_cast<std::uint32_t>(certs.size()));
  for (const auto& c : certs) w.blob(encode_cert(c));
  auto msg = make(Phase::ViewChange, target, 0, {}, std::move(w).take());
  view_changes_[target][self_] = ViewChangeInfo{host_.executed_height(), certs, msg};
  if (!silent()) host_.send(kBroadcast, Phase::ViewChange, encode(msg), detail(target, 0, msg.digest));
  restart_view_timer();
  try_new_view(target);
}

std::optional<PbftReplica::ViewChangeInfo> PbftReplica::parse_view_change(const PbftMessage& m) const {
  try {
    ByteReader r(m.body);
    ViewChangeInfo info;
    info.last_executed = r.u64();
    auto n = r.u32();
    if (n > 64) return std::nullopt;
    for (std::uint32_t i = 0; i < n; ++i) {
      auto blob = r.blob();
      ByteReader cr(blob);
      auto c = decode_cert(cr);
      if (!cr.done() || c.view >= m.view || !valid_cert(c)) return std::nullopt;
      info.certs.push_back(std::move(c));
    }
    if (!r.done()) return std::nullopt;
    info.message = m;
    return info;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void PbftReplica::handle_view_change(const PbftMessage& m) {
  std::uint64_t current = view_changing_ ? vc_target_ : view_;
  if (m.view <= view_) return;
  auto info = parse_view_change(m);
  if (!info) {
    host_.note("drop-malformed", "invalid view-change from " + std::to_string(m.sender));
    return;
  }
  view_changes_[m.view][m.sender] = std::move(*info);

  // Join once f+1 replicas ask for a view beyond ours.
  std::vector<std::uint64_t> highest;
  std::map<ReplicaIndex, std::uint64_t> per_sender;
  for (const auto& [v, set] : view_changes_)
    if (v > current)
      for (const auto& [s, _] : set)
        if (s != self_) per_sender[s] = std::max(per_sender[s], v);
  for (const auto& [s, v] : per_sender) highest.push_back(v);
  if (highest.size() >= static_cast<std::size_t>(config_.f()) + 1) {
    std::sort(highest.rbegin(), highest.rend());
    auto join = highest[config_.f()];
    if (!view_changing_ || join > vc_target_) start_view_change(join);
  }
  try_new_view(m.view);
}

PbftReplica::NewViewPlan PbftReplica::plan_new_view(const std::map<ReplicaIndex, ViewChangeInfo>& set) const {
  NewViewPlan plan;
  std::vector<std::uint64_t> executed;
  for (const auto& [s, info] : set) executed.push_back(info.last_executed);
  std::sort(executed.rbegin(), executed.rend());
  plan.base = executed.at(std::min<std::size_t>(config_.f(), executed.size() - 1));
  std::map<std::uint64_t, const PreparedCert*> best;
  for (const auto& [s, info] : set)
    for (const auto& c : info.certs) {
      if (c.sequence <= plan.base) continue;
      auto& b = best[c.sequence];
      if (!b || c.view > b->view || (c.view == b->view && c.digest < b->digest)) b = &c;
    }
  for (auto seq = plan.base + 1; best.contains(seq); ++seq) plan.reproposals.push_back(*best[seq]);
  return plan;
}

void PbftReplica::try_new_view(std::uint64_t target) {
  if (config_.primary(target) != self_ || !view_changing_ || vc_target_ != target) return;
  if (new_view_sent_.contains(target)) return;
  auto it = view_changes_.find(target);
  if (it == view_changes_.end() || it->second.size() < config_.quorum()) return;
  std::map<ReplicaIndex, ViewChangeInfo> chosen;
  for (const auto& [s, info] : it->second) {
    chosen.emplace(s, info);
    if (chosen.size() == config_.quorum()) break;
  }
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(chosen.size()));
  for (const auto& [s, info] : chosen) w.blob(encode(info.message));
  new_view_sent_.insert(target);
  auto msg = make(Phase::NewView, target, 0, {}, std::move(w).take());
  if (!silent()) host_.send(kBroadcast, Phase::NewView, encode(msg), detail(target, 0, msg.digest));
  enter_view(target, plan_new_view(chosen));
}

void PbftReplica::handle_new_view(const PbftMessage& m) {
  if (m.view <= view_) return;
  if (m.sender != config_.primary(m.view)) {
    host_.note("drop-not-primary", "new-view " + std::to_string(m.view));
    return;
  }
  std::map<ReplicaIndex, ViewChangeInfo> set;
  try {
    ByteReader r(m.body);
    auto n = r.u32();
    if (n > config_.n) throw ConsensusError("oversized new-view");
    for (std::uint32_t i = 0; i < n; ++i) {
      auto vc = decode(r.blob());
      if (vc.phase != Phase::ViewChange || vc.view != m.view || vc.sender >= config_.n ||
          vc.digest != hash(vc.body) || !safe_verify(keys_[vc.sender], signed_part(vc), vc.signature))
        throw ConsensusError("bad view-change in new-view");
      auto info = parse_view_change(vc);
      if (!info) throw ConsensusError("invalid certificates in new-view");
      set.emplace(vc.sender, std::move(*info));
    }
    if (!r.done() || set.size() < config_.quorum()) throw ConsensusError("new-view without quorum");
  } catch (const std::exception& e) {
    host_.note("drop-malformed", std::string("new-view: ") + e.what());
    return;
  }
  enter_view(m.view, plan_new_view(set));
}

void PbftReplica::enter_view(std::uint64_t v, const NewViewPlan& plan) {
  view_ = v;
  view_changing_ = false;
  vc_target_ = v;
  std::erase_if(view_changes_, [&](const auto& kv) { return kv.first <= v; });
  host_.note("new-view", "view=" + std::to_string(v) + " base=" + std::to_string(plan.base) +
                             " reproposals=" + std::to_string(plan.reproposals.size()));
  for (const auto& c : plan.reproposals) {
    batches_.try_emplace(c.digest, c.batch);
    proposals_[{v, c.sequence}] = c.digest;
    last_proposed_ = std::max(last_proposed_, c.sequence);
  }
  if (plan.base > host_.executed_height()) request_sync();
  last_proposed_ = std::max(last_proposed_, host_.executed_height());
  if (view_timer_) host_.cancel_timer(*view_timer_);
  view_timer_.reset();

  auto buffered = std::move(future_[v]);
  std::erase_if(future_, [&](const auto& kv) { return kv.first <= v; });
  try_pending_proposals();
  for (const auto& m : buffered) handle_pre_prepare(m);
  arm_view_timer();
  if (is_primary()) {
    if (pending_.size() >= config_.batch_size) maybe_propose();
    else if (!pending_.empty()) arm_batch_timer();
  }
}

// --- status and block sync ------------------------------------------------------

void PbftReplica::handle_status(const PbftMessage& m) {
  ByteReader r(m.body);
  PeerStatus st;
  try {
    st.view = m.view;
    st.executed = r.u64();
    st.changing = r.u8() != 0;
  } catch (const TruncatedInput&) {
    return;
  }
  status_[m.sender] = st;

  auto executed = host_.executed_height();
  std::size_t ahead = 0;
  std::map<std::uint64_t, std::size_t> stable_views;
  for (const auto& [s, p] : status_) {
    if (p.executed > executed) ++ahead;
    if (!p.changing) ++stable_views[p.view];
  }
  if (ahead >= static_cast<std::size_t>(config_.f()) + 1) request_sync();

  // Rejoin a view that f+1 peers are running stably, e.g. after being cut off.
  for (const auto& [v, count] : stable_views) {
    if (count < static_cast<std::size_t>(config_.f()) + 1) continue;
    bool lonely = view_changing_ && view_changes_[vc_target_].size() <= 1;
    if (v > view_ || (v == view_ && lonely)) {
      host_.note("adopt-view", "view=" + std::to_string(v));
      enter_view(v, NewViewPlan{executed, {}});
      break;
    }
  }
}

void PbftReplica::request_sync() {
  auto now = host_.now();
  if (synced_once_ && now < last_sync_request_ + 500) return;
  synced_once_ = true;
  last_sync_request_ = now;
  broadcast(Phase::SyncRequest, view_, host_.executed_height() + 1, {}, {});
}

void PbftReplica::handle_sync_request(const PbftMessage& m) {
  auto executed = host_.executed_height();
  for (auto s = m.sequence; s <= executed && s < m.sequence + 8; ++s) {
    const auto* batch = host_.executed_batch(s);
    if (!batch) continue;
    broadcast(Phase::SyncResponse, view_, s, ledger::batch_digest(*batch), ledger::encode_batch(*batch), m.sender);
  }
}

void PbftReplica::handle_sync_response(const PbftMessage& m) {
  if (m.sequence <= host_.executed_height()) return;
  sync_votes_[m.sequence][m.digest].insert(m.sender);
  batches_.try_emplace(m.digest, ledger::decode_batch(m.body));
  apply_sync();
}

void PbftReplica::apply_sync() {
  for (;;) {
    auto next = host_.executed_height() + 1;
    auto it = sync_votes_.find(next);
    if (it == sync_votes_.end() || decided_.contains(next)) return;
    std::optional<Digest> agreed;
    for (const auto& [d, voters] : it->second)
      if (voters.size() >= static_cast<std::size_t>(config_.f()) + 1) agreed = d;
    if (!agreed) return;
    host_.note("sync", detail(view_, next, *agreed));
    decided_[next] = {view_, *agreed};
    auto before = host_.executed_height();
    execute_ready();
    if (host_.executed_height() == before) return;
  }
}

std::optional<Digest> PbftReplica::prepared_digest(std::uint64_t view, std::uint64_t sequence) const {
  auto it = slots_.find({view, sequence});
  if (it == slots_.end() || !it->second.sent_prepare) return std::nullopt;
  return it->second.accepted;
}

std::size_t PbftReplica::prepare_votes(std::uint64_t view, std::uint64_t sequence, const Digest& d) const {
  auto it = slots_.find({view, sequence});
  if (it == slots_.end()) return 0;
  auto p = it->second.prepares.find(d);
  return p == it->second.prepares.end() ? 0 : p->second.size();
}

std::size_t PbftReplica::commit_votes(std::uint64_t view, std::uint64_t sequence, const Digest& d) const {
  auto it = slots_.find({view, sequence});
  if (it == slots_.end()) return 0;
  auto c = it->second.commits.find(d);
  return c == it->second.commits.end() ? 0 : c->second.size();
}

// --- ordering stub -----------------------------------------------------------

OrderingStub::OrderingStub(ConsensusConfig config, ReplicaIndex self, std::vector<PublicKey> replica_keys, Host& host)
    : config_(config), self_(self), keys_(std::move(replica_keys)), host_(host) {
  if (keys_.size() != config_.n) throw ConsensusError("replica key count must equal n");
}

void OrderingStub::submit(Transaction t) {
  if (self_ != 0) return;
  if (!seen_.insert(tx::tx_digest(t)).second) return;
  pending_.push_back(std::move(t));
  if (pending_.size() >= config_.batch_size) flush();
  else if (!batch_timer_) batch_timer_ = host_.set_timer(config_.batch_timeout_ms, PbftReplica::kTimerBatch);
}

void OrderingStub::on_timer(std::uint64_t tag) {
  if (tag != PbftReplica::kTimerBatch) return;
  batch_timer_.reset();
  flush();
}

void OrderingStub::flush() {
  std::vector<Transaction> batch;
  for (auto& t : pending_) {
    batch.push_back(t);
    if (!host_.check_batch(batch).ok()) {
      batch.pop_back();
      host_.note("drop-invalid", tx::debug_line(t));
    }
  }
  pending_.clear();
  if (batch.empty()) return;
  PbftMessage m{Phase::Order, 0, next_seq_++, ledger::batch_digest(batch), self_, {}, ledger::encode_batch(batch)};
  m.signature = host_.sign(signed_part(m));
  host_.send(kBroadcast, Phase::Order, encode(m), detail(0, m.sequence, m.digest));
  buffered_[m.sequence] = std::move(batch);
  execute_ready();
}

void OrderingStub::on_message(ReplicaIndex from, ByteView payload) {
  PbftMessage m;
  try {
    m = decode(payload);
  } catch (const std::exception& e) {
    host_.note("drop-malformed", e.what());
    return;
  }
  if (m.phase != Phase::Order || m.sender != 0 || from != 0 || !safe_verify(keys_[0], signed_part(m), m.signature)) {
    host_.note("bad-signature", "ordering message from " + std::to_string(from));
    return;
  }
  auto batch = ledger::decode_batch(m.body);
  if (ledger::batch_digest(batch) != m.digest) return;
  if (m.sequence > host_.executed_height()) buffered_.try_emplace(m.sequence, std::move(batch));
  execute_ready();
}

void OrderingStub::execute_ready() {
  for (;;) {
    auto it = buffered_.find(host_.executed_height() + 1);
    if (it == buffered_.end()) return;
    auto batch = std::move(it->second);
    auto seq = it->first;
    buffered_.erase(it);
    if (!host_.check_batch(batch).ok()) {
      host_.note("refuse-invalid-decision", "s=" + std::to_string(seq));
      return;
    }
    auto d = ledger::batch_digest(batch);
    host_.execute(seq, batch);
    host_.note("decide", detail(0, seq, d) + " txs=" + std::to_string(batch.size()));
  }
}

std::unique_ptr<Engine> make_engine(EngineKind kind, ConsensusConfig config, ReplicaIndex self,
                                    std::vector<PublicKey> replica_keys, Host& host) {
  if (kind == EngineKind::OrderingStub) return std::make_unique<OrderingStub>(config, self, std::move(replica_keys), host);
  return std::make_unique<PbftReplica>(config, self, std::move(replica_keys), host);
}

}  // namespace iotchain::consensus

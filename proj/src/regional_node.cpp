#include "roles_util.hpp"

namespace iotchain::roles {

using namespace detail;
using ledger::RejectReason;
using ledger::ValidationResult;

namespace {

constexpr std::uint64_t kFlushTimer = 1;
constexpr std::uint64_t kEngineTimerBase = 1ULL << 32;

struct CtxGuard {
  Context*& slot;
  CtxGuard(Context*& s, Context& c) : slot(s) { slot = &c; }
  ~CtxGuard() { slot = nullptr; }
};

std::vector<PublicKey> replica_keys(const Shared& shared) {
  auto tables = ledger::replay(ledger::Ledger(shared.genesis));
  std::vector<PublicKey> out;
  for (std::size_t i = 0; i < shared.topo.rns.size(); ++i) {
    const auto* pk = entity_key(tables, shared.keys, EntityClass::RegionalNode, static_cast<std::uint16_t>(i + 1));
    if (!pk) throw sim::ConfigError("regional node " + std::to_string(i + 1) + " missing from genesis");
    out.push_back(*pk);
  }
  return out;
}

bool is_consensus_type(const std::string& type) { return type.starts_with("pbft/") || type.starts_with("stub/"); }

}  // namespace

RegionalNode::RegionalNode(std::shared_ptr<Shared> shared, std::uint16_t replica, KeyPair key, Options options)
    : shared_(std::move(shared)),
      replica_(replica),
      key_(std::move(key)),
      options_(options),
      ledger_(shared_->genesis),
      tables_(ledger::replay(ledger_)),
      rng_(0x524E000000ULL + replica) {
  if (shared_->topo.rns.size() != shared_->consensus.n)
    throw sim::ConfigError("consensus size does not match the number of regional nodes");
  engine_ = consensus::make_engine(shared_->engine, shared_->consensus, replica_, replica_keys(*shared_), *this);
}

void RegionalNode::on_start(Context& ctx) {
  CtxGuard g(ctx_, ctx);
  engine_->start();
  ctx.set_timer(options_.flush_interval, kFlushTimer);
}

void RegionalNode::on_timer(Context& ctx, std::uint64_t tag, ByteView) {
  CtxGuard g(ctx_, ctx);
  if (tag >= kEngineTimerBase) {
    engine_->on_timer(tag - kEngineTimerBase);
    return;
  }
  if (tag == kFlushTimer) {
    flush();
    ctx.set_timer(options_.flush_interval, kFlushTimer);
  }
}

void RegionalNode::on_fault(Context& ctx, const sim::Fault& fault) {
  CtxGuard g(ctx_, ctx);
  if (fault.kind != sim::FaultKind::Byzantine) return;
  // "mode[:r,r]" with colluding replica indices
  auto colon = fault.args.find(':');
  mode_ = consensus::parse_mode(fault.args.substr(0, colon));
  std::vector<consensus::ReplicaIndex> colluders;
  if (colon != std::string::npos) {
    std::string rest = fault.args.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      auto comma = rest.find(',', pos);
      auto tok = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      if (!tok.empty()) colluders.push_back(static_cast<consensus::ReplicaIndex>(std::stoul(tok)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  engine_->set_byzantine(mode_, colluders);
  ctx.note("byzantine", consensus::mode_string(mode_));
}

void RegionalNode::on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) {
  CtxGuard g(ctx_, ctx);
  try {
    handle(from, type, payload);
  } catch (const TruncatedInput& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  } catch (const tx::TxDecodeError& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  } catch (const DecodeError& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  }
}

std::optional<std::uint16_t> RegionalNode::home_region(std::uint32_t device) const {
  const auto* rec = shared_->keys.find(device);
  return rec ? rec->home_region : std::nullopt;
}

std::optional<std::uint32_t> RegionalNode::device_of(ActorId a) const {
  for (const auto& [id, actor] : device_actors_)
    if (actor == a && tables_.device_active(id)) return id;
  return std::nullopt;
}

void RegionalNode::reject(ActorId to, const Transaction& t, const ValidationResult& r) {
  ctx_->note("reject", tx::to_string(tx::type_of(t)) + " reason=" + ledger::to_string(*r.reason) + " " + r.detail);
  if (to == 0 || shared_->topo.replica_of(to)) return;
  ByteWriter w;
  w.str(ledger::to_string(*r.reason)).str(r.detail).blob(tx_wire(t));
  post(*ctx_, to, msg::kReject, std::move(w).take());
}

void RegionalNode::handle(ActorId from, const std::string& type, ByteView payload) {
  const auto& topo = shared_->topo;
  bool from_rn = topo.replica_of(from).has_value();
  auto refuse = ValidationResult::reject(RejectReason::SchemaViolation, "refused");

  if (is_consensus_type(type)) {
    if (!from_rn) {
      ctx_->note("drop-foreign", type);
      return;
    }
    engine_->on_message(static_cast<consensus::ReplicaIndex>(*topo.replica_of(from)), payload);
    return;
  }

  if (type == msg::kSubmit) {
    auto t = tx_unwire(payload);
    if (rejecting()) return reject(from, t, refuse);
    return submit_direct(t, from, true);
  }
  if (type == msg::kGossip) {
    if (from_rn) submit_direct(tx_unwire(payload), from, false);
    return;
  }
  if (type == msg::kRegister) {
    auto t = tx::decode(payload);
    const auto* d = std::get_if<tx::DeviceRegistrationTx>(&t);
    if (!d) return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "not a registration"));
    if (rejecting()) return reject(from, t, refuse);
    if (home_region(d->device_key_id) != region())
      return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "device is homed in another region"));
    for (const auto& e : local_pending_)
      if (e.tx == t) return;
    if (auto r = ledger::validate(t, tables_, shared_->keys, {region()}); !r.ok()) return reject(from, t, r);
    device_actors_[d->device_key_id] = from;
    return add_local(std::move(t), from);
  }
  if (type == msg::kQuery) {
    auto t = tx::decode(payload);
    const auto* q = std::get_if<tx::UpdateQueryTx>(&t);
    if (!q) return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "not a query"));
    if (!device_of(from)) return reject(from, t, ValidationResult::reject(RejectReason::UnknownSigner, "unregistered device"));
    if (rejecting()) return reject(from, t, refuse);
    if (auto r = ledger::validate(t, tables_, shared_->keys, {region()}); !r.ok()) return reject(from, t, r);
    auto mid = q->manufacturer_id, model = q->model_id;
    add_local(std::move(t), from);
    auto it = tables_.update_table.find({mid, model});
    if (it == tables_.update_table.end() || !tables_.entity_active(EntityClass::Manufacturer, mid)) {
      post(*ctx_, from, msg::kUpdateNone, {});
      return;
    }
    auto package = tx::encode_package(it->second.release);
    if (mode_ & consensus::kTamperUpdates) {
      package.back() ^= 0x01;
      ctx_->note("tamper-update", "to=" + ctx_->name_of(from));
    }
    post(*ctx_, from, msg::kUpdate, std::move(package));
    return;
  }
  if (type == msg::kGrant) {
    auto t = tx::decode(payload);
    auto* p = std::get_if<tx::PermissionTx>(&t);
    if (!p || p->is_request || !p->signatures.empty())
      return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "not a permission release"));
    if (device_of(from) != p->d1_id)
      return reject(from, t, ValidationResult::reject(RejectReason::UnknownSigner, "release must come from d1"));
    if (rejecting()) return reject(from, t, refuse);
    auto r2 = home_region(p->d2_id);
    if (!r2) return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "unknown device d2"));
    if (*r2 == region()) {
      if (auto r = ledger::validate(t, tables_, shared_->keys, {region()}); !r.ok()) return reject(from, t, r);
      return add_local(std::move(t), from);
    }
    auto rn2 = topo.rn_of_region(*r2);
    if (!rn2) return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "no node for region"));
    p->signatures = {Signature{}, Signature{}};
    p->signatures[0] = sign(tx::signing_bytes(*p, 0));
    cross_notify_[{false, p->d1_id, p->d2_id, p->operation}] = from;
    post(*ctx_, rn2, msg::kEndorse, tx::encode(*p));
    return;
  }
  if (type == msg::kRequest) {
    auto t = tx::decode(payload);
    auto* p = std::get_if<tx::PermissionTx>(&t);
    if (!p || !p->is_request || p->signatures.size() != 1)
      return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "not a permission request"));
    return handle_request(from, *p);
  }
  if (type == msg::kEndorse) {
    if (!from_rn) return;
    auto t = tx::decode(payload);
    auto* p = std::get_if<tx::PermissionTx>(&t);
    if (p && p->cross_region()) handle_endorse(from, *p);
    return;
  }
  if (type == msg::kRelaySession) {
    if (!from_rn) return;
    ByteReader r(payload);
    auto d1 = r.u32();
    auto sealed = r.blob();
    if (auto it = device_actors_.find(d1); it != device_actors_.end()) post(*ctx_, it->second, msg::kSession, std::move(sealed));
    return;
  }
  if (type == msg::kRelayDenied) {
    if (!from_rn) return;
    ByteReader r(payload);
    auto d1 = r.u32(), d2 = r.u32();
    cross_notify_.erase({true, d1, d2, static_cast<Operation>(r.u8())});
    if (auto it = device_actors_.find(d1); it != device_actors_.end()) {
      ByteWriter w;
      w.u32(d2);
      post(*ctx_, it->second, msg::kDenied, std::move(w).take());
    }
    return;
  }
  if (type == msg::kStorage) {
    auto t = tx::decode(payload);
    const auto* s = std::get_if<tx::DeviceStorageTx>(&t);
    if (!s) return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "not a storage record"));
    if (device_of(from) != s->device_id)
      return reject(from, t, ValidationResult::reject(RejectReason::UnknownSigner, "storage record for another device"));
    if (rejecting()) return reject(from, t, refuse);
    return submit_direct(t, from, true);
  }
  if (type == msg::kStoreLocal) {
    auto dev = device_of(from);
    if (!dev || rejecting()) return;
    ByteReader r(payload);
    auto number = r.u16();
    local_data_[{*dev, number}] = r.blob();
    ByteWriter w;
    w.u16(number);
    post(*ctx_, from, msg::kStored, std::move(w).take());
    return;
  }
  if (type == msg::kLocalRelease) {
    auto t = tx::decode_package(payload);
    if (rejecting()) return reject(from, t, refuse);
    if (auto r = ledger::validate(t, tables_, shared_->keys, {region()}); !r.ok()) return reject(from, t, r);
    post(*ctx_, topo.dc, msg::kInspect, Bytes(payload.begin(), payload.end()));
    return add_local(t, from);
  }
  if (type == msg::kCloudRegister) {
    ByteReader r(payload);
    auto id = r.u16();
    auto key_id = r.u32();
    auto it = topo.providers.find(id);
    if (it == topo.providers.end() || it->second != from) return;
    Transaction t = ledger::make_entity_registration(key_, EntityClass::CloudProvider, id, key_id);
    if (rejecting()) return reject(from, t, refuse);
    if (auto v = ledger::validate(t, tables_, shared_->keys, {region()}); !v.ok()) return reject(from, t, v);
    return add_local(std::move(t), from);
  }
  ctx_->note("drop-unknown", type);
}

void RegionalNode::handle_request(ActorId from, tx::PermissionTx p) {
  Transaction t = p;
  if (device_of(from) != p.d1_id)
    return reject(from, t, ValidationResult::reject(RejectReason::UnknownSigner, "request must come from d1"));
  if (rejecting()) return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "refused"));
  const auto* rec = shared_->keys.find(p.d1_id);
  bool sig_ok = false;
  try {
    sig_ok = rec && verify(rec->public_key, tx::signing_bytes(p), p.signatures[0]);
  } catch (const DecodeError&) {
  }
  if (!sig_ok) return reject(from, t, ValidationResult::reject(RejectReason::BadSignature, "request signature"));
  auto r2 = home_region(p.d2_id);
  if (!r2) return reject(from, t, ValidationResult::reject(RejectReason::SchemaViolation, "unknown device d2"));

  auto deny = [&] {
    ctx_->note("deny", dev_hex(p.d1_id) + "->" + dev_hex(p.d2_id) + " op=" + tx::to_string(p.operation));
    ByteWriter w;
    w.u32(p.d2_id);
    post(*ctx_, from, msg::kDenied, std::move(w).take());
  };
  if (!tables_.permits(p.d1_id, p.d2_id, p.operation)) return deny();

  if (*r2 == region()) {
    if (auto r = ledger::validate(t, tables_, shared_->keys, {region()}); !r.ok()) return reject(from, t, r);
    add_local(t, from);
    grant_session(p.d1_id, p.d2_id, 0);
    return;
  }
  auto rn2 = shared_->topo.rn_of_region(*r2);
  if (!rn2) return deny();
  tx::PermissionTx cross{true, p.d1_id, p.d2_id, p.operation, {Signature{}, Signature{}}};
  cross.signatures[0] = sign(tx::signing_bytes(cross, 0));
  cross_notify_[{true, p.d1_id, p.d2_id, p.operation}] = from;
  post(*ctx_, rn2, msg::kEndorse, tx::encode(cross));
}

void RegionalNode::handle_endorse(ActorId from, tx::PermissionTx p) {
  auto r1 = static_cast<std::uint16_t>(*shared_->topo.replica_of(from) + 1);
  const auto* rn1_key = entity_key(tables_, shared_->keys, EntityClass::RegionalNode, r1);
  bool ok = rn1_key && home_region(p.d1_id) == r1 && home_region(p.d2_id) == region() && tables_.device_active(p.d2_id);
  try {
    ok = ok && verify(*rn1_key, tx::signing_bytes(p, 0), p.signatures[0]);
  } catch (const DecodeError&) {
    ok = false;
  }
  if (ok && p.is_request) ok = tables_.permits(p.d1_id, p.d2_id, p.operation);
  if (!ok || rejecting()) {
    ctx_->note("deny", "endorse " + dev_hex(p.d1_id) + "->" + dev_hex(p.d2_id));
    if (p.is_request) {
      ByteWriter w;
      w.u32(p.d1_id).u32(p.d2_id).u8(static_cast<std::uint8_t>(p.operation));
      post(*ctx_, from, msg::kRelayDenied, std::move(w).take());
    }
    return;
  }
  p.signatures[1] = sign(tx::signing_bytes(p, 1));
  if (p.is_request) cross_sessions_[tx::tx_digest(p)] = CrossSession{p.d1_id, p.d2_id, from};
  submit_direct(p, 0, true);
}

// Session key sealed to both devices. rn1 != 0 means d1 lives in another
// region and its node relays the sealed key.
void RegionalNode::grant_session(std::uint32_t d1, std::uint32_t d2, ActorId rn1) {
  auto key = derive_session_key(key_.secret_key, d1, d2, ledger_.height());
  ByteWriter w;
  w.raw(ByteView(key.bytes.data(), key.bytes.size())).u32(d1).u32(d2).u64(ledger_.height());
  auto plain = std::move(w).take();
  const auto* k1 = shared_->keys.find(d1);
  const auto* k2 = shared_->keys.find(d2);
  if (!k1 || !k2) return;
  auto s1 = seal(k1->public_key, plain, rng_);
  auto s2 = seal(k2->public_key, plain, rng_);
  ctx_->note("session", dev_hex(d1) + "<->" + dev_hex(d2) + " nonce=" + std::to_string(ledger_.height()));
  if (rn1) {
    ByteWriter relay;
    relay.u32(d1).blob(s1);
    post(*ctx_, rn1, msg::kRelaySession, std::move(relay).take());
  } else if (auto it = device_actors_.find(d1); it != device_actors_.end()) {
    post(*ctx_, it->second, msg::kSession, std::move(s1));
  }
  if (auto it = device_actors_.find(d2); it != device_actors_.end()) post(*ctx_, it->second, msg::kSession, std::move(s2));
}

void RegionalNode::submit_direct(const Transaction& t, ActorId submitter, bool gossip) {
  bool from_rn = shared_->topo.replica_of(submitter).has_value();
  if (auto r = admit(t); !r.ok()) {
    if (from_rn) ctx_->note("gossip-invalid", tx::to_string(tx::type_of(t)) + " " + r.detail);
    else reject(submitter, t, r);
    return;
  }
  if (submitter && !from_rn) notify_[tx::tx_digest(t)].push_back(submitter);
  engine_->submit(t);
  if (!gossip) return;
  auto wire = tx_wire(t);
  for (auto rn : shared_->topo.rns)
    if (rn != ctx_->self()) post(*ctx_, rn, msg::kGossip, wire);
}

void RegionalNode::add_local(Transaction t, ActorId submitter) {
  local_pending_.push_back({std::move(t), submitter});
  if (local_pending_.size() >= options_.flush_size) flush();
}

void RegionalNode::flush() {
  if (local_pending_.empty()) return;
  auto entries = std::move(local_pending_);
  local_pending_.clear();
  std::vector<Digest> leaves;
  for (const auto& e : entries) leaves.push_back(tx::tx_digest(e.tx));
  merkle::MerkleTree tree(leaves);
  auto root = tree.root();

  // An identical batch was flushed before: its root already stands for these leaves.
  if (auto h = root_heights_.find(root); h != root_heights_.end()) {
    send_receipts(entries, tree, h->second);
    return;
  }
  if (auto a = awaiting_.find(root); a != awaiting_.end()) {
    for (auto& e : entries) a->second.entries.push_back(std::move(e));
    return;
  }
  tx::LocalInteractiveTx li{region(), root, static_cast<std::uint16_t>(entries.size()), {}};
  li.signature = sign(tx::signing_bytes(li));
  ctx_->note("flush", "root=" + root.prefix() + " n=" + std::to_string(entries.size()));
  awaiting_.emplace(root, Awaiting{std::move(entries), std::move(tree)});
  submit_direct(li, 0, true);
}

void RegionalNode::send_receipts(const std::vector<LocalEntry>& entries, const merkle::MerkleTree& tree,
                                 std::uint64_t height) {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].submitter) continue;
    ByteWriter w;
    w.u64(height).blob(merkle::serialize(tree.prove(i % tree.leaf_count())));
    post(*ctx_, entries[i].submitter, msg::kReceipt, std::move(w).take());
  }
}

void RegionalNode::confirm_local(const Digest& root, std::uint64_t height) {
  auto it = awaiting_.find(root);
  if (it == awaiting_.end()) return;
  auto& [entries, tree] = it->second;
  root_heights_[root] = height;
  auto& all = local_batches_[root];
  auto& applied = applied_local_[root];
  std::size_t batched = tree.leaf_count();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = entries[i].tx;
    if (i < batched) all.push_back(t);
    if (i >= batched) continue;  // merged duplicates of leaves already handled
    if (auto r = ledger::validate(t, tables_, shared_->keys, {region()}); r.ok()) {
      ledger::apply_to_tables(tables_, t);
      applied.push_back(t);
    } else {
      ctx_->note("local-skip", tx::to_string(tx::type_of(t)) + " " + r.detail);
    }
  }
  ctx_->note("local-confirmed", "root=" + root.prefix() + " height=" + std::to_string(height));
  send_receipts(entries, tree, height);
  awaiting_.erase(it);
}

void RegionalNode::after_block(const ledger::Block& block) {
  for (const auto& t : block.txs) {
    auto id = tx::tx_digest(t);
    if (auto n = notify_.find(id); n != notify_.end()) {
      for (auto a : n->second) {
        ByteWriter w;
        w.raw(id.view()).u64(block.height);
        post(*ctx_, a, msg::kConfirmed, std::move(w).take());
      }
      notify_.erase(n);
    }
    if (const auto* li = std::get_if<tx::LocalInteractiveTx>(&t); li && li->rn_id == region())
      confirm_local(li->merkle_root, block.height);
    if (const auto* p = std::get_if<tx::PermissionTx>(&t); p && p->cross_region()) {
      if (auto c = cross_notify_.find({p->is_request, p->d1_id, p->d2_id, p->operation}); c != cross_notify_.end()) {
        if (!p->is_request) {
          ByteWriter w;
          w.raw(id.view()).u64(block.height);
          post(*ctx_, c->second, msg::kConfirmed, std::move(w).take());
        }
        cross_notify_.erase(c);
      }
      if (auto s = cross_sessions_.find(id); s != cross_sessions_.end()) {
        grant_session(s->second.d1, s->second.d2, s->second.rn1);
        cross_sessions_.erase(s);
      }
    }
  }
  auto wire = ledger::encode_block(block, true);
  for (auto s : shared_->topo.subscribers) post(*ctx_, s, msg::kBlock, wire);
}

// consensus::Host

std::uint64_t RegionalNode::now() const { return ctx_->now(); }

void RegionalNode::send(consensus::ReplicaIndex to, consensus::Phase phase, Bytes payload, std::string detail) {
  auto type = consensus::message_type(phase);
  const auto& rns = shared_->topo.rns;
  if (to != consensus::kBroadcast) {
    if (to < rns.size()) ctx_->send(rns[to], type, std::move(payload), std::move(detail));
    return;
  }
  for (std::size_t i = 0; i < rns.size(); ++i)
    if (i != replica_) ctx_->send(rns[i], type, payload, detail);
}

std::uint64_t RegionalNode::set_timer(std::uint64_t delay_ms, std::uint64_t tag) {
  return ctx_->set_timer(delay_ms, kEngineTimerBase + tag);
}

void RegionalNode::cancel_timer(std::uint64_t id) { ctx_->cancel_timer(id); }

Signature RegionalNode::sign(ByteView message) { return iotchain::sign(key_.secret_key, message); }

bool RegionalNode::replica_active(consensus::ReplicaIndex r) const {
  return tables_.entity_active(EntityClass::RegionalNode, static_cast<std::uint16_t>(r + 1));
}

// Blocks carry only direct transactions, and their validity depends only on
// replicated state, so every honest node reaches the same verdict.
ValidationResult RegionalNode::admit(const Transaction& t) const {
  if (ledger::classify(t) != ledger::Mode::Direct)
    return ValidationResult::reject(RejectReason::SchemaViolation, "merkle-batched transaction outside a local root");
  return ledger::validate(t, tables_, shared_->keys);
}

ValidationResult RegionalNode::check_batch(std::span<const Transaction> txs) const {
  for (const auto& t : txs)
    if (ledger::classify(t) != ledger::Mode::Direct)
      return ValidationResult::reject(RejectReason::SchemaViolation, "merkle-batched transaction in a block");
  return ledger::validate_batch(txs, tables_, shared_->keys);
}

void RegionalNode::execute(std::uint64_t sequence, std::vector<Transaction> txs) {
  if (sequence != ledger_.height() + 1) throw consensus::ConsensusError("execute out of order");
  const auto& block = ledger::append_block(ledger_, tables_, shared_->keys, std::move(txs));
  after_block(block);
}

const std::vector<Transaction>* RegionalNode::executed_batch(std::uint64_t sequence) const {
  if (sequence == 0 || sequence > ledger_.height()) return nullptr;
  return &ledger_.blocks()[sequence].txs;
}

void RegionalNode::note(std::string kind, std::string detail) { ctx_->note(kind, std::move(detail)); }

}  // namespace iotchain::roles

#include "iotchain/ledger.hpp"

#include <sstream>

namespace iotchain::ledger {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

using tx::CancellationTx;
using tx::DeviceRegistrationTx;
using tx::DeviceStorageTx;
using tx::EntityRegistrationTx;
using tx::LocalInteractiveTx;
using tx::PermissionTx;
using tx::UpdateQueryTx;
using tx::UpdateReleaseTx;

using R = RejectReason;

struct Signer {
  const PublicKey* key = nullptr;
  ValidationResult problem;
};

bool safe_verify(const PublicKey& pk, ByteView msg, const Signature& sig) {
  try {
    return verify(pk, msg, sig);
  } catch (const DecodeError&) {
    return false;
  }
}

// Registered entity signer: must exist, be active and have a published key.
Signer entity_signer(const RnTables& t, const KeyDirectory& keys, EntityClass c, std::uint16_t id) {
  auto key_id = t.entity_key(c, id);
  if (!key_id) return {nullptr, ValidationResult::reject(R::UnknownSigner, tx::to_string(c) + " " + std::to_string(id) + " not registered")};
  const auto* row = t.row(*key_id);
  if (!row || row->status != Status::Active)
    return {nullptr, ValidationResult::reject(R::CancelledSigner, tx::to_string(c) + " " + std::to_string(id) + " cancelled")};
  const auto* rec = keys.find(*key_id);
  if (!rec) return {nullptr, ValidationResult::reject(R::UnknownSigner, "no published key for " + tx::to_string(c))};
  return {&rec->public_key, {}};
}

// Device signer: a local registry row if this node holds one, otherwise a
// published key carrying a certificate from a registered manufacturer.
Signer device_signer(const RnTables& t, const KeyDirectory& keys, std::uint32_t device_id) {
  const auto* rec = keys.find(device_id);
  if (!rec || !rec->certificate)
    return {nullptr, ValidationResult::reject(R::UnknownSigner, "device key not published")};
  if (const auto* row = t.row(device_id)) {
    if (!row->is_device) return {nullptr, ValidationResult::reject(R::SchemaViolation, "key id is not a device")};
    if (row->status != Status::Active) return {nullptr, ValidationResult::reject(R::CancelledSigner, "device cancelled")};
    return {&rec->public_key, {}};
  }
  const auto& cert = *rec->certificate;
  auto mkey = t.entity_key(EntityClass::Manufacturer, cert.manufacturer_id);
  const auto* mrec = mkey ? keys.find(*mkey) : nullptr;
  if (!mrec || cert.device_public_key != rec->public_key || !safe_verify(mrec->public_key, cert.device_public_key.view(), cert.manufacturer_signature))
    return {nullptr, ValidationResult::reject(R::UnknownSigner, "device certificate not traceable to a registered manufacturer")};
  return {&rec->public_key, {}};
}

ValidationResult check_sig(const Signer& s, ByteView msg, const Signature& sig, const char* what) {
  if (!s.key) return s.problem;
  if (!safe_verify(*s.key, msg, sig)) return ValidationResult::reject(R::BadSignature, std::string(what) + ": signature does not verify");
  return ValidationResult::accept();
}

ValidationResult validate_registration_target(const RnTables& t, const KeyDirectory& keys, EntityClass c, std::uint16_t id,
                                              std::uint32_t key_id) {
  if (!keys.find(key_id)) return ValidationResult::reject(R::SchemaViolation, "registered key is not published");
  if (t.row(key_id)) return ValidationResult::reject(R::SchemaViolation, "key id already used");
  if (t.entity_active(c, id)) return ValidationResult::reject(R::SchemaViolation, "entity already registered and live");
  return ValidationResult::accept();
}

ValidationResult validate_one(const DeviceRegistrationTx& d, const RnTables& t, const KeyDirectory& keys, const ValidationOptions&) {
  auto s = entity_signer(t, keys, EntityClass::Manufacturer, d.manufacturer_id);
  if (auto r = check_sig(s, tx::signing_bytes(d), d.signature, "device registration"); !r.ok()) return r;
  if ((d.device_key_id >> 16) != d.manufacturer_id)
    return ValidationResult::reject(R::SchemaViolation, "device key id outside manufacturer range");
  const auto* rec = keys.find(d.device_key_id);
  if (!rec || !rec->certificate || rec->certificate->manufacturer_id != d.manufacturer_id ||
      rec->certificate->device_public_key != rec->public_key ||
      !safe_verify(*s.key, rec->public_key.view(), rec->certificate->manufacturer_signature))
    return ValidationResult::reject(R::SchemaViolation, "device key not certified by its manufacturer");
  if (const auto* row = t.row(d.device_key_id); row && row->status == Status::Active)
    return ValidationResult::reject(R::SchemaViolation, "device already registered");
  return ValidationResult::accept();
}

ValidationResult validate_one(const EntityRegistrationTx& e, const RnTables& t, const KeyDirectory& keys, const ValidationOptions& o) {
  Signer s;
  switch (e.entity_class) {
    case EntityClass::CertificationCenter:
      return ValidationResult::reject(R::SchemaViolation, "certification center only registers in genesis");
    case EntityClass::CloudProvider:
      if (!o.local_rn) return ValidationResult::reject(R::SchemaViolation, "cloud provider registration is local to a regional node");
      s = entity_signer(t, keys, EntityClass::RegionalNode, *o.local_rn);
      break;
    default: s = entity_signer(t, keys, EntityClass::CertificationCenter, 0);
  }
  if (auto r = check_sig(s, tx::signing_bytes(e), e.signature, "entity registration"); !r.ok()) return r;
  return validate_registration_target(t, keys, e.entity_class, e.entity_id, e.key_id);
}

ValidationResult validate_one(const CancellationTx& c, const RnTables& t, const KeyDirectory& keys, const ValidationOptions&) {
  auto pre = tx::signing_bytes(c);
  auto cc = entity_signer(t, keys, EntityClass::CertificationCenter, 0);
  auto dc = entity_signer(t, keys, EntityClass::DetectionCenter, 0);
  bool by_cc = cc.key && safe_verify(*cc.key, pre, c.signature);
  bool by_dc = dc.key && safe_verify(*dc.key, pre, c.signature);
  if (!by_cc && !by_dc) {
    if (!cc.key && !dc.key) return cc.problem;
    return ValidationResult::reject(R::BadSignature, "cancellation not signed by CC or DC");
  }
  const auto* row = t.row(c.key_id);
  if (c.entity_class == EntityClass::CloudProvider) {
    // Provider rows are local to one regional node, so every node must reach
    // the same verdict without them: only a conflicting row refuses.
    if (row && (row->is_device || row->entity_class != c.entity_class || row->entity_id != c.entity_id))
      return ValidationResult::reject(R::SchemaViolation, "cancellation target mismatch");
    return ValidationResult::accept();
  }
  if (!row || row->is_device || row->entity_class != c.entity_class || row->entity_id != c.entity_id)
    return ValidationResult::reject(R::SchemaViolation, "cancellation target not registered");
  if (row->status == Status::Cancelled) return ValidationResult::reject(R::SchemaViolation, "target already cancelled");
  if (c.entity_class == EntityClass::CertificationCenter)
    return ValidationResult::reject(R::SchemaViolation, "the certification center cannot be cancelled");
  return ValidationResult::accept();
}

ValidationResult validate_one(const UpdateReleaseTx& u, const RnTables& t, const KeyDirectory& keys, const ValidationOptions&) {
  auto s = entity_signer(t, keys, EntityClass::Manufacturer, u.manufacturer_id);
  return check_sig(s, tx::signing_bytes(u), u.signature, "update release");
}

ValidationResult validate_one(const UpdateQueryTx& q, const RnTables& t, const KeyDirectory&, const ValidationOptions&) {
  if (!t.entity_key(EntityClass::Manufacturer, q.manufacturer_id))
    return ValidationResult::reject(R::SchemaViolation, "query for unknown manufacturer");
  return ValidationResult::accept();
}

ValidationResult validate_one(const DeviceStorageTx& d, const RnTables& t, const KeyDirectory& keys, const ValidationOptions&) {
  auto s = device_signer(t, keys, d.device_id);
  return check_sig(s, tx::signing_bytes(d), d.signature, "device storage");
}

ValidationResult validate_one(const PermissionTx& p, const RnTables& t, const KeyDirectory& keys, const ValidationOptions&) {
  if (p.d1_id == p.d2_id) return ValidationResult::reject(R::SchemaViolation, "permission between a device and itself");
  if (!p.cross_region()) {
    if (!t.device_active(p.d1_id) || !t.device_active(p.d2_id))
      return ValidationResult::reject(R::SchemaViolation, "permission references an unregistered device");
    if (p.is_request) return check_sig(device_signer(t, keys, p.d1_id), tx::signing_bytes(p), p.signatures[0], "permission request");
    return ValidationResult::accept();
  }
  const auto* r1 = keys.find(p.d1_id);
  const auto* r2 = keys.find(p.d2_id);
  if (!r1 || !r2 || !r1->home_region || !r2->home_region)
    return ValidationResult::reject(R::SchemaViolation, "permission references an unknown device");
  if (*r1->home_region == *r2->home_region)
    return ValidationResult::reject(R::SchemaViolation, "cross-region permission between devices of one region");
  auto s1 = entity_signer(t, keys, EntityClass::RegionalNode, *r1->home_region);
  if (auto r = check_sig(s1, tx::signing_bytes(p, 0), p.signatures[0], "first regional endorsement"); !r.ok()) return r;
  auto s2 = entity_signer(t, keys, EntityClass::RegionalNode, *r2->home_region);
  return check_sig(s2, tx::signing_bytes(p, 1), p.signatures[1], "second regional endorsement");
}

ValidationResult validate_one(const LocalInteractiveTx& l, const RnTables& t, const KeyDirectory& keys, const ValidationOptions&) {
  if (l.batch_size == 0) return ValidationResult::reject(R::SchemaViolation, "empty local batch");
  auto s = entity_signer(t, keys, EntityClass::RegionalNode, l.rn_id);
  return check_sig(s, tx::signing_bytes(l), l.signature, "local interactive");
}

void write_entries(ByteWriter& w, std::span<const Transaction> txs, bool with_payloads) {
  w.u32(static_cast<std::uint32_t>(txs.size()));
  for (const auto& t : txs) {
    auto entry = tx::chain_bytes(t);
    w.u16(static_cast<std::uint16_t>(entry.size())).raw(entry);
    if (with_payloads)
      if (const auto* u = std::get_if<UpdateReleaseTx>(&t)) w.blob(u->payload);
  }
}

std::vector<Transaction> read_entries(ByteReader& r) {
  std::vector<Transaction> out;
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto len = r.u16();
    std::optional<Digest> payload_digest;
    auto t = tx::decode_chain_entry(r.raw(len), &payload_digest);
    if (auto* u = std::get_if<UpdateReleaseTx>(&t)) {
      u->payload = r.blob();
      if (hash(u->payload) != *payload_digest) throw LedgerError("update payload does not match its chained digest");
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

void KeyDirectory::publish(std::uint32_t key_id, KeyRecord record) {
  if (!records_.emplace(key_id, std::move(record)).second)
    throw LedgerError("key id " + std::to_string(key_id) + " already published");
}

void KeyDirectory::set_home_region(std::uint32_t key_id, std::uint16_t region) {
  auto it = records_.find(key_id);
  if (it == records_.end()) throw LedgerError("unknown key id");
  it->second.home_region = region;
}

const KeyRecord* KeyDirectory::find(std::uint32_t key_id) const {
  auto it = records_.find(key_id);
  return it == records_.end() ? nullptr : &it->second;
}

const RegistryRow* RnTables::row(std::uint32_t key_id) const {
  auto it = registry.find(key_id);
  return it == registry.end() ? nullptr : &it->second;
}

std::optional<std::uint32_t> RnTables::entity_key(EntityClass c, std::uint16_t id) const {
  auto it = entities.find({c, id});
  if (it == entities.end()) return std::nullopt;
  return it->second;
}

bool RnTables::entity_active(EntityClass c, std::uint16_t id) const {
  auto key = entity_key(c, id);
  const auto* r = key ? row(*key) : nullptr;
  return r && r->status == Status::Active;
}

bool RnTables::device_active(std::uint32_t device_id) const {
  const auto* r = row(device_id);
  return r && r->is_device && r->status == Status::Active;
}

bool RnTables::permits(std::uint32_t d1, std::uint32_t d2, Operation op) const {
  auto it = permissions.find({d1, d2});
  return it != permissions.end() && it->second.contains(op);
}

std::string to_string(RejectReason r) {
  switch (r) {
    case R::BadSignature: return "bad-signature";
    case R::UnknownSigner: return "unknown-signer";
    case R::CancelledSigner: return "cancelled-signer";
    case R::SchemaViolation: return "schema-violation";
  }
  return "unknown";
}

ValidationResult validate(const Transaction& tx, const RnTables& tables, const KeyDirectory& keys,
                          const ValidationOptions& options) {
  return std::visit([&](const auto& t) { return validate_one(t, tables, keys, options); }, tx);
}

void apply_to_tables(RnTables& t, const Transaction& tx) {
  std::visit(overloaded{
                 [&](const DeviceRegistrationTx& d) {
                   if (t.device_active(d.device_key_id)) throw LedgerError("duplicate live device registration");
                   t.registry[d.device_key_id] = RegistryRow{true, EntityClass::Manufacturer, 0, d.manufacturer_id, Status::Active};
                 },
                 [&](const EntityRegistrationTx& e) {
                   if (t.row(e.key_id) || t.entity_active(e.entity_class, e.entity_id))
                     throw LedgerError("duplicate live entity registration");
                   t.registry[e.key_id] = RegistryRow{false, e.entity_class, e.entity_id, 0, Status::Active};
                   t.entities[{e.entity_class, e.entity_id}] = e.key_id;
                 },
                 [&](const CancellationTx& c) {
                   auto it = t.registry.find(c.key_id);
                   if (it != t.registry.end()) {
                     it->second.status = Status::Cancelled;
                     return;
                   }
                   // Tombstone for a provider registered at another node.
                   t.registry[c.key_id] = RegistryRow{false, c.entity_class, c.entity_id, 0, Status::Cancelled};
                   t.entities.try_emplace({c.entity_class, c.entity_id}, c.key_id);
                 },
                 [&](const UpdateReleaseTx& u) { t.update_table[{u.manufacturer_id, u.model_id}] = UpdateEntry{u}; },
                 [&](const DeviceStorageTx& d) { t.storage_info[{d.device_id, d.data_number}] = d.data_hash; },
                 [&](const PermissionTx& p) {
                   if (!p.is_request) t.permissions[{p.d1_id, p.d2_id}].insert(p.operation);
                 },
                 [](const UpdateQueryTx&) {},
                 [](const LocalInteractiveTx&) {},
             },
             tx);
}

std::string to_string(Mode m) { return m == Mode::Direct ? "direct" : "merkle"; }

Mode classify(const Transaction& tx, std::optional<std::uint16_t> origin_region, std::optional<std::uint16_t> target_region) {
  return std::visit(overloaded{
                        [](const DeviceRegistrationTx&) { return Mode::MerkleBatched; },
                        [](const EntityRegistrationTx& e) {
                          return e.entity_class == EntityClass::CloudProvider ? Mode::MerkleBatched : Mode::Direct;
                        },
                        [](const CancellationTx&) { return Mode::Direct; },
                        [&](const UpdateReleaseTx&) { return target_region ? Mode::MerkleBatched : Mode::Direct; },
                        [](const UpdateQueryTx&) { return Mode::MerkleBatched; },
                        [](const DeviceStorageTx&) { return Mode::Direct; },
                        [&](const PermissionTx& p) {
                          if (origin_region && target_region) return *origin_region == *target_region ? Mode::MerkleBatched : Mode::Direct;
                          return p.cross_region() ? Mode::Direct : Mode::MerkleBatched;
                        },
                        [](const LocalInteractiveTx&) { return Mode::Direct; },
                    },
                    tx);
}

Digest compute_block_hash(std::uint64_t height, const Digest& prev_hash, std::span<const Transaction> txs) {
  ByteWriter w;
  w.u64(height).raw(prev_hash.view());
  write_entries(w, txs, false);
  return hash(w.bytes());
}

Digest batch_digest(std::span<const Transaction> txs) {
  ByteWriter w;
  write_entries(w, txs, false);
  return hash(w.bytes());
}

Bytes encode_block(const Block& block, bool with_payloads) {
  ByteWriter w;
  w.u64(block.height).raw(block.prev_hash.view()).raw(block.block_hash.view()).u8(with_payloads ? 1 : 0);
  write_entries(w, block.txs, with_payloads);
  return std::move(w).take();
}

Block decode_block(ByteView bytes) {
  ByteReader r(bytes);
  Block b;
  b.height = r.u64();
  b.prev_hash = Digest::from(r.raw(kDigestSize));
  b.block_hash = Digest::from(r.raw(kDigestSize));
  if (r.u8() != 1) throw LedgerError("block encoding without payloads cannot be decoded");
  b.txs = read_entries(r);
  if (!r.done()) throw LedgerError("trailing bytes after block");
  if (compute_block_hash(b.height, b.prev_hash, b.txs) != b.block_hash) throw LedgerError("block hash mismatch");
  return b;
}

Bytes encode_batch(std::span<const Transaction> txs) {
  ByteWriter w;
  write_entries(w, txs, true);
  return std::move(w).take();
}

std::vector<Transaction> decode_batch(ByteView bytes) {
  ByteReader r(bytes);
  auto out = read_entries(r);
  if (!r.done()) throw LedgerError("trailing bytes after batch");
  return out;
}

Ledger::Ledger(Block genesis) {
  if (genesis.height != 0) throw LedgerError("genesis must have height 0");
  genesis.block_hash = compute_block_hash(0, genesis.prev_hash, genesis.txs);
  blocks_.push_back(std::move(genesis));
}

Ledger Ledger::from_blocks(std::vector<Block> blocks) {
  if (blocks.empty()) throw LedgerError("a ledger needs a genesis block");
  Ledger l;
  l.blocks_ = std::move(blocks);
  return l;
}

const Block& Ledger::append(std::vector<Transaction> txs) {
  Block b;
  b.height = height() + 1;
  b.prev_hash = tip().block_hash;
  b.txs = std::move(txs);
  b.block_hash = compute_block_hash(b.height, b.prev_hash, b.txs);
  blocks_.push_back(std::move(b));
  return blocks_.back();
}

void Ledger::append_block(Block block) {
  if (block.height != height() + 1) throw LedgerError("block height does not follow tip");
  if (block.prev_hash != tip().block_hash) throw LedgerError("block does not link to tip");
  if (compute_block_hash(block.height, block.prev_hash, block.txs) != block.block_hash)
    throw LedgerError("block hash mismatch");
  blocks_.push_back(std::move(block));
}

bool Ledger::verify_chain() const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    if (b.height != i) return false;
    if (i > 0 && b.prev_hash != blocks_[i - 1].block_hash) return false;
    if (compute_block_hash(b.height, b.prev_hash, b.txs) != b.block_hash) return false;
  }
  return true;
}

std::string Ledger::export_text() const {
  std::ostringstream os;
  for (const auto& b : blocks_) {
    os << "height=" << b.height << " prev=" << b.prev_hash.hex() << " hash=" << b.block_hash.hex() << " txs=";
    for (std::size_t i = 0; i < b.txs.size(); ++i) os << (i ? "," : "") << to_hex(tx::chain_bytes(b.txs[i]));
    os << '\n';
  }
  return os.str();
}

ValidationResult validate_batch(std::span<const Transaction> txs, const RnTables& tables, const KeyDirectory& keys,
                                const ValidationOptions& options, std::size_t* failed_index) {
  RnTables scratch = tables;
  for (std::size_t i = 0; i < txs.size(); ++i) {
    auto r = validate(txs[i], scratch, keys, options);
    if (!r.ok()) {
      if (failed_index) *failed_index = i;
      return r;
    }
    apply_to_tables(scratch, txs[i]);
  }
  return ValidationResult::accept();
}

const Block& append_block(Ledger& ledger, RnTables& tables, const KeyDirectory& keys, std::vector<Transaction> txs,
                          const ValidationOptions& options) {
  std::size_t bad = 0;
  if (auto r = validate_batch(txs, tables, keys, options, &bad); !r.ok()) throw BatchRejected(bad, r);
  for (const auto& t : txs) apply_to_tables(tables, t);
  return ledger.append(std::move(txs));
}

tx::EntityRegistrationTx make_entity_registration(const KeyPair& signer, EntityClass c, std::uint16_t entity_id,
                                                  std::uint32_t key_id) {
  tx::EntityRegistrationTx e{c, entity_id, key_id, {}};
  e.signature = sign(signer.secret_key, tx::signing_bytes(e));
  return e;
}

Block make_genesis(const KeyPair& cc, std::uint32_t cc_key_id, std::span<const tx::EntityRegistrationTx> members) {
  Block g;
  g.height = 0;
  g.prev_hash = hash(cc.public_key.view());
  g.txs.push_back(make_entity_registration(cc, EntityClass::CertificationCenter, 0, cc_key_id));
  for (const auto& m : members) g.txs.push_back(m);
  g.block_hash = compute_block_hash(0, g.prev_hash, g.txs);
  return g;
}

RnTables replay(const Ledger& ledger, const LocalBatchLookup& local) {
  RnTables t;
  for (const auto& b : ledger.blocks()) {
    for (const auto& x : b.txs) {
      apply_to_tables(t, x);
      if (local)
        if (const auto* l = std::get_if<LocalInteractiveTx>(&x))
          if (const auto* batch = local(*l))
            for (const auto& inner : *batch) apply_to_tables(t, inner);
    }
  }
  return t;
}

AuditReport audit_chain(const Ledger& ledger, const KeyDirectory& keys) {
  AuditReport report;
  report.chain_intact = ledger.verify_chain();
  RnTables t;
  for (const auto& b : ledger.blocks()) {
    for (std::size_t i = 0; i < b.txs.size(); ++i) {
      const auto& x = b.txs[i];
      if (b.height > 0) {
        auto r = validate(x, t, keys);
        if (!r.ok()) {
          report.invalid_transactions.push_back({b.height, i, r});
          continue;
        }
      }
      try {
        apply_to_tables(t, x);
      } catch (const LedgerError& e) {
        report.invalid_transactions.push_back({b.height, i, ValidationResult::reject(R::SchemaViolation, e.what())});
      }
    }
  }
  return report;
}

}  // namespace iotchain::ledger

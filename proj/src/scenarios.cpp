#include "iotchain/scenarios.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "roles_util.hpp"

namespace iotchain::scen {

using json = nlohmann::json;
using roles::Transaction;
using tx::EntityClass;

namespace {

// ---- JSON ----

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw sim::ConfigError(where + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw sim::ConfigError(where + ": unknown key '" + k + "'");
}

Args args_from(const json& j, const std::string& where) {
  Args out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw sim::ConfigError(where + ": args must be an object");
  for (const auto& [k, v] : j.items()) {
    if (v.is_string()) out[k] = v.get<std::string>();
    else if (v.is_number_unsigned() || v.is_number_integer()) out[k] = std::to_string(v.get<std::int64_t>());
    else if (v.is_boolean()) out[k] = v.get<bool>() ? "true" : "false";
    else throw sim::ConfigError(where + ": argument '" + k + "' must be a string or number");
  }
  return out;
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string engine_name(consensus::EngineKind k) { return k == consensus::EngineKind::Pbft ? "pbft" : "ordering-stub"; }

// ---- assertion helpers ----

struct Ctx {
  const World& w;
  const sim::Trace& trace;
  const Args& args;

  std::string get(const std::string& k, std::string fallback = {}) const {
    auto it = args.find(k);
    return it == args.end() ? fallback : it->second;
  }
  std::uint64_t num(const std::string& k, std::uint64_t fallback) const {
    return roles::detail::arg_u64(args, k, fallback);
  }
  std::vector<std::string> list(const std::string& k) const {
    std::vector<std::string> out;
    std::string v = get(k);
    std::size_t pos = 0;
    while (pos < v.size()) {
      auto c = v.find(',', pos);
      auto tok = v.substr(pos, c == std::string::npos ? std::string::npos : c - pos);
      if (!tok.empty()) out.push_back(tok);
      if (c == std::string::npos) break;
      pos = c + 1;
    }
    return out;
  }
  /// Regions whose RN is not excluded via exclude=rn2,rn3.
  std::vector<std::uint16_t> regions() const {
    auto ex = list("exclude");
    std::vector<std::uint16_t> out;
    for (std::uint16_t r = 1; r <= w.config().rns; ++r)
      if (std::find(ex.begin(), ex.end(), "rn" + std::to_string(r)) == ex.end()) out.push_back(r);
    return out;
  }
  /// Certified devices, optionally narrowed by devices=... and exclude_regions=...
  std::vector<DeviceInfo> devices() const {
    auto names = list("devices");
    auto ex = list("exclude_regions");
    std::vector<DeviceInfo> out;
    for (const auto& d : w.devices()) {
      if (d.forged) continue;
      if (!names.empty() && std::find(names.begin(), names.end(), d.name) == names.end()) continue;
      if (std::find(ex.begin(), ex.end(), std::to_string(d.region)) != ex.end()) continue;
      out.push_back(d);
    }
    return out;
  }
};

struct Outcome {
  bool ok = true;
  std::string detail;
  std::optional<std::size_t> at;  // offending trace record
};

Outcome pass(std::string detail = {}) { return {true, std::move(detail), std::nullopt}; }
Outcome fail(std::string detail, std::optional<std::size_t> at = std::nullopt) { return {false, std::move(detail), at}; }

std::optional<Time> sent_time(const sim::TraceRecord& r) {
  if (!r.detail.starts_with("sent=")) return std::nullopt;
  return std::stoull(r.detail.substr(5));
}

std::optional<std::size_t> record_size(const sim::TraceRecord& r) {
  auto p = r.detail.find("size=");
  if (p == std::string::npos) return std::nullopt;
  return std::stoull(r.detail.substr(p + 5));
}

EntityClass class_arg(const Ctx& c) { return roles::detail::parse_class(c.get("class", "manufacturer")); }

bool has_cancellation(const ledger::Ledger& l, EntityClass cls, std::uint16_t id) {
  for (const auto& b : l.blocks())
    for (const auto& t : b.txs)
      if (const auto* x = std::get_if<tx::CancellationTx>(&t); x && x->entity_class == cls && x->entity_id == id) return true;
  return false;
}

bool entity_cancelled(const ledger::RnTables& t, EntityClass cls, std::uint16_t id) {
  auto k = t.entity_key(cls, id);
  const auto* row = k ? t.row(*k) : nullptr;
  return row && row->status == ledger::Status::Cancelled;
}

std::set<Digest> chain_roots(const ledger::Ledger& l, std::uint16_t region) {
  std::set<Digest> out;
  for (const auto& b : l.blocks())
    for (const auto& t : b.txs)
      if (const auto* li = std::get_if<tx::LocalInteractiveTx>(&t); li && li->rn_id == region) out.insert(li->merkle_root);
  return out;
}

bool references_device(const Transaction& t, const std::set<std::uint32_t>& ids) {
  return std::visit(roles::detail::overloaded{
                        [&](const tx::DeviceRegistrationTx& d) { return ids.contains(d.device_key_id); },
                        [&](const tx::DeviceStorageTx& d) { return ids.contains(d.device_id); },
                        [&](const tx::PermissionTx& p) { return ids.contains(p.d1_id) || ids.contains(p.d2_id); },
                        [](const auto&) { return false; },
                    },
                    t);
}

bool contains_bytes(ByteView hay, ByteView needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

bool is_device_tx_type(const std::string& type) {
  using namespace roles::msg;
  return type == kRegister || type == kQuery || type == kGrant || type == kRequest || type == kStorage;
}

// ---- the catalogue ----

using Check = std::function<Outcome(const Ctx&)>;

const std::map<std::string, Check>& catalogue() {
  static const std::map<std::string, Check> checks = {
      {"audit-clean",
       [](const Ctx& c) {
         auto problems = audit_all(c.w);
         if (!problems.empty()) return fail(problems.front() + " (" + std::to_string(problems.size()) + " problems)");
         return pass("every block on every node audits clean");
       }},

      {"no-forged-confirmed",
       [](const Ctx& c) {
         // a fork alone is not a forgery
         for (const auto& p : audit_all(c.w))
           if (!p.starts_with("fork at")) return fail(p);
         std::set<std::uint32_t> forged;
         for (const auto& d : c.w.devices())
           if (d.forged) forged.insert(d.device_id);
         for (const auto& d : c.w.devices())
           if (d.forged && c.w.device(d.name).registered()) return fail(d.name + " obtained a registration receipt");
         for (std::uint16_t r = 1; r <= c.w.config().rns; ++r) {
           const auto& rn = c.w.rn(r);
           for (const auto& b : rn.chain().blocks())
             for (const auto& t : b.txs)
               if (references_device(t, forged)) return fail("rn" + std::to_string(r) + " block " + std::to_string(b.height) + " carries a forged device transaction");
           for (const auto& [root, txs] : rn.applied_local())
             for (const auto& t : txs)
               if (references_device(t, forged)) return fail("rn" + std::to_string(r) + " applied a forged device transaction locally");
         }
         return pass("no forged transaction in any confirmed block or applied batch");
       }},

      {"ledgers-identical",
       [](const Ctx& c) {
         auto regions = c.regions();
         auto ref = c.w.rn(regions.front()).chain().export_text();
         for (auto r : regions)
           if (c.w.rn(r).chain().export_text() != ref)
             return fail("rn" + std::to_string(r) + " (height " + std::to_string(c.w.rn(r).chain().height()) + ") differs from rn" +
                         std::to_string(regions.front()) + " (height " + std::to_string(c.w.rn(regions.front()).chain().height()) + ")");
         return pass(std::to_string(regions.size()) + " ledgers identical at height " +
                     std::to_string(c.w.rn(regions.front()).chain().height()));
       }},

      {"height-min",
       [](const Ctx& c) {
         auto min = c.num("min", 1);
         for (auto r : c.regions())
           if (c.w.rn(r).chain().height() < min)
             return fail("rn" + std::to_string(r) + " height " + std::to_string(c.w.rn(r).chain().height()) + " < " + std::to_string(min));
         return pass();
       }},

      {"blocks-during",
       [](const Ctx& c) {
         auto from = c.num("from", 0), to = c.num("to", UINT64_MAX);
         for (auto r : c.regions()) {
           std::string name = "rn" + std::to_string(r);
           bool seen = false;
           for (const auto& rec : c.trace.records) {
             if (rec.kind != "deliver" || rec.type != roles::msg::kBlock || rec.from != name) continue;
             auto s = sent_time(rec);
             if (s && *s >= from && *s <= to) seen = true;
           }
           if (!seen) return fail(name + " announced no block in [" + std::to_string(from) + "," + std::to_string(to) + "]");
         }
         return pass();
       }},

      {"devices-registered",
       [](const Ctx& c) {
         std::size_t n = 0;
         for (const auto& d : c.devices()) {
           const auto& dev = c.w.device(d.name);
           if (!dev.registered()) return fail(d.name + " is not registered");
           auto roots = chain_roots(c.w.rn(d.region).chain(), d.region);
           bool anchored = false;
           for (const auto& p : dev.receipts()) anchored = anchored || (merkle::verify_proof(p) && roots.contains(p.root));
           if (!anchored) return fail(d.name + " holds no receipt anchored in an on-chain root");
           if (!c.w.rn(d.region).tables().device_active(d.device_id)) return fail(d.name + " has no active registry row");
           ++n;
         }
         return pass(std::to_string(n) + " devices registered with anchored receipts");
       }},

      {"not-registered",
       [](const Ctx& c) {
         for (const auto& d : c.w.devices()) {
           if (!d.forged) continue;
           if (c.w.device(d.name).registered()) return fail(d.name + " registered");
           for (std::uint16_t r = 1; r <= c.w.config().rns; ++r)
             if (c.w.rn(r).tables().registry.contains(d.device_id)) return fail(d.name + " has a registry row on rn" + std::to_string(r));
         }
         return pass();
       }},

      {"installed",
       [](const Ctx& c) {
         auto digest = hash(to_bytes(c.get("payload")));
         std::size_t n = 0;
         for (const auto& d : c.devices()) {
           const auto& inst = c.w.device(d.name).installed();
           if (std::find(inst.begin(), inst.end(), digest) == inst.end()) return fail(d.name + " did not install " + digest.prefix());
           ++n;
         }
         return pass(std::to_string(n) + " devices installed " + digest.prefix());
       }},

      {"not-installed",
       [](const Ctx& c) {
         auto digest = hash(to_bytes(c.get("payload")));
         for (const auto& d : c.devices()) {
           const auto& inst = c.w.device(d.name).installed();
           if (std::find(inst.begin(), inst.end(), digest) != inst.end()) return fail(d.name + " installed " + digest.prefix());
         }
         return pass();
       }},

      {"updates-authentic",
       [](const Ctx& c) {
         // Oracle: the manufacturers' own release records, checked against
         // the manufacturer key bound in the chain tables.
         std::map<Digest, bool> signed_payloads;
         const auto& tables = c.w.rn(1).tables();
         for (std::uint16_t m = 1; m <= c.w.config().manufacturers; ++m) {
           auto k = tables.entity_key(EntityClass::Manufacturer, m);
           const auto* rec = k ? c.w.shared().keys.find(*k) : nullptr;
           for (const auto& u : c.w.manufacturer(m).releases())
             if (rec && verify(rec->public_key, tx::signing_bytes(u), u.signature)) signed_payloads[hash(u.payload)] = true;
         }
         std::size_t n = 0;
         for (const auto& d : c.w.devices())
           for (const auto& h : c.w.device(d.name).installed()) {
             if (!signed_payloads.contains(h)) return fail(d.name + " installed unsigned payload " + h.prefix());
             ++n;
           }
         return pass(std::to_string(n) + " installs, all manufacturer-signed");
       }},

      {"entity-cancelled",
       [](const Ctx& c) {
         auto cls = class_arg(c);
         auto id = static_cast<std::uint16_t>(c.num("id", 1));
         for (auto r : c.regions()) {
           const auto& rn = c.w.rn(r);
           if (!has_cancellation(rn.chain(), cls, id)) return fail("no confirmed cancellation on rn" + std::to_string(r));
           if (cls != EntityClass::CloudProvider && !entity_cancelled(rn.tables(), cls, id))
             return fail("rn" + std::to_string(r) + " still lists the entity as active");
           if (rn.tables().entity_active(cls, id)) return fail("rn" + std::to_string(r) + " still lists the entity as active");
         }
         return pass(tx::to_string(cls) + " " + std::to_string(id) + " cancelled on chain");
       }},

      {"entity-active",
       [](const Ctx& c) {
         auto cls = class_arg(c);
         auto id = static_cast<std::uint16_t>(c.num("id", 1));
         for (auto r : c.regions())
           if (!c.w.rn(r).tables().entity_active(cls, id) || has_cancellation(c.w.rn(r).chain(), cls, id))
             return fail(tx::to_string(cls) + " " + std::to_string(id) + " not active on rn" + std::to_string(r));
         return pass();
       }},

      {"finding",
       [](const Ctx& c) {
         auto kind = c.get("kind");
         std::size_t n = 0;
         for (const auto& f : c.w.dc().findings()) n += f.kind == kind;
         if (n < c.num("min", 1)) return fail("only " + std::to_string(n) + " " + kind + " findings");
         return pass(std::to_string(n) + " " + kind + " findings");
       }},

      {"no-finding",
       [](const Ctx& c) {
         auto kind = c.get("kind");
         for (const auto& f : c.w.dc().findings())
           if (kind.empty() || f.kind == kind) return fail("unexpected " + f.kind + " finding: " + f.evidence);
         return pass();
       }},

      {"note-count",
       [](const Ctx& c) {
         auto kind = c.get("kind");
         auto actors = c.list("actor");
         auto after = c.num("after", 0), before = c.num("before", UINT64_MAX);
         auto min = c.num("min", 1), max = c.num("max", UINT64_MAX);
         std::uint64_t n = 0;
         std::optional<std::size_t> first_extra;
         for (std::size_t i = 0; i < c.trace.records.size(); ++i) {
           const auto& r = c.trace.records[i];
           if (r.kind != "note" || r.type != kind || r.time < after || r.time > before) continue;
           if (!actors.empty() && std::find(actors.begin(), actors.end(), r.from) == actors.end()) continue;
           if (++n > max && !first_extra) first_extra = i;
         }
         std::string what = std::to_string(n) + " '" + kind + "' notes";
         if (n < min) return fail(what + ", expected at least " + std::to_string(min));
         if (n > max) return fail(what + ", expected at most " + std::to_string(max), first_extra);
         return pass(what);
       }},

      {"session",
       [](const Ctx& c) {
         const auto& a = c.w.device_info(c.get("a"));
         const auto& b = c.w.device_info(c.get("b"));
         const auto& ka = c.w.device(a.name).session_keys();
         const auto& kb = c.w.device(b.name).session_keys();
         auto ia = ka.find(b.device_id);
         auto ib = kb.find(a.device_id);
         if (ia == ka.end() || ib == kb.end()) return fail("no shared key between " + a.name + " and " + b.name);
         if (ia->second != ib->second) return fail("keys differ");
         return pass("16-byte key shared");
       }},

      {"no-session",
       [](const Ctx& c) {
         const auto& a = c.w.device_info(c.get("a"));
         const auto& b = c.w.device_info(c.get("b"));
         if (c.w.device(a.name).session_keys().contains(b.device_id) || c.w.device(b.name).session_keys().contains(a.device_id))
           return fail(a.name + " and " + b.name + " hold session key material");
         return pass();
       }},

      {"sessions-authorized",
       [](const Ctx& c) {
         std::map<std::uint32_t, const DeviceInfo*> by_id;
         for (const auto& d : c.w.devices()) by_id[d.device_id] = &d;
         std::size_t n = 0;
         for (const auto& d : c.w.devices()) {
           for (const auto& [peer, key] : c.w.device(d.name).session_keys()) {
             auto [d1, d2] = key.participants;
             bool ok = false;
             for (auto dev : {d1, d2}) {
               auto it = by_id.find(dev);
               if (it == by_id.end()) continue;
               const auto& t = c.w.rn(it->second->region).tables();
               auto row = t.permissions.find({d1, d2});
               ok = ok || (row != t.permissions.end() && !row->second.empty());
             }
             if (!ok) return fail(d.name + " holds a key for " + roles::detail::dev_hex(peer) + " without a permissions row");
             ++n;
           }
         }
         return pass(std::to_string(n) + " session keys, all backed by permissions");
       }},

      {"tx-count",
       [](const Ctx& c) {
         auto type = c.get("type");
         auto region = static_cast<std::uint16_t>(c.num("rn", 1));
         auto size = c.num("size", 0);
         std::uint64_t n = 0;
         // genesis members are not confirmed by the network
         for (const auto& b : c.w.rn(region).chain().blocks()) {
           if (b.height == 0) continue;
           for (const auto& t : b.txs) {
             auto name = tx::to_string(tx::type_of(t));
             if (const auto* p = std::get_if<tx::PermissionTx>(&t); p && p->cross_region()) name += "-cross-region";
             if (name != type) continue;
             if (size && tx::encode(t).size() != size)
               return fail(type + " at height " + std::to_string(b.height) + " encodes to " + std::to_string(tx::encode(t).size()) + " bytes");
             ++n;
           }
         }
         if (n < c.num("min", 1)) return fail("only " + std::to_string(n) + " " + type + " on chain");
         if (n > c.num("max", UINT64_MAX)) return fail(std::to_string(n) + " " + type + " on chain");
         return pass(std::to_string(n) + " " + type + " on chain");
       }},

      {"privacy-split",
       [](const Ctx& c) {
         std::size_t batched = 0, chained = 0;
         for (std::uint16_t r = 1; r <= c.w.config().rns; ++r) {
           const auto& rn = c.w.rn(r);
           std::set<Bytes> local;
           for (const auto& [root, txs] : rn.local_batches())
             for (const auto& t : txs) local.insert(tx::encode(t));
           batched += local.size();
           for (const auto& b : rn.chain().blocks()) {
             for (const auto& t : b.txs) {
               ++chained;
               if (ledger::classify(t) != ledger::Mode::Direct)
                 return fail("rn" + std::to_string(r) + " block " + std::to_string(b.height) + " holds merkle-mode " + tx::to_string(tx::type_of(t)));
               if (local.contains(tx::encode(t))) return fail("a batched transaction was chained individually");
             }
             // Larger batched encodings must not be embedded anywhere in the block either.
             auto wire = ledger::encode_block(b, true);
             for (const auto& l : local)
               if (l.size() >= 32 && contains_bytes(wire, l))
                 return fail("batched bytes found inside block " + std::to_string(b.height) + " of rn" + std::to_string(r));
           }
         }
         if (batched == 0) return fail("no merkle-mode transactions were exercised");
         return pass(std::to_string(batched) + " batched transactions, none visible among " + std::to_string(chained) + " chained entries");
       }},

      {"lightweight-split",
       [](const Ctx& c) {
         std::map<std::string, const DeviceInfo*> devs;
         for (const auto& d : c.w.devices()) devs[d.name] = &d;
         std::size_t sent = 0;
         for (std::size_t i = 0; i < c.trace.records.size(); ++i) {
           const auto& r = c.trace.records[i];
           if (r.kind != "deliver" && r.kind != "drop") continue;
           bool from_dev = devs.contains(r.from), to_dev = devs.contains(r.to);
           if (!from_dev && !to_dev) continue;
           if (r.type.starts_with("pbft/") || r.type.starts_with("stub/") || r.type == roles::msg::kBlock ||
               r.type == roles::msg::kGossip || r.type == roles::msg::kEndorse)
             return fail("device traffic of type " + r.type, i);
           if (!from_dev || !is_device_tx_type(r.type) || r.kind != "deliver") continue;
           ++sent;
           auto home = "rn" + std::to_string(devs.at(r.from)->region);
           if (r.to != home) return fail(r.from + " submitted to " + r.to + " instead of " + home, i);
           auto size = record_size(r);
           if (!size || *size > tx::size::kDeviceStorage) return fail(r.from + " sent a " + r.detail + " transaction", i);
         }
         return pass(std::to_string(sent) + " device transactions, all to the home node and <= 112 bytes");
       }},

      {"cancellation-monotonic",
       [](const Ctx& c) {
         const auto& keys = c.w.shared().keys;
         for (std::uint16_t r = 1; r <= c.w.config().rns; ++r) {
           std::set<std::pair<EntityClass, std::uint16_t>> cancelled;
           for (const auto& b : c.w.rn(r).chain().blocks()) {
             for (const auto& t : b.txs) {
               std::vector<std::pair<EntityClass, std::uint16_t>> signers;
               std::visit(roles::detail::overloaded{
                              [&](const tx::DeviceRegistrationTx& d) { signers.push_back({EntityClass::Manufacturer, d.manufacturer_id}); },
                              [&](const tx::UpdateReleaseTx& u) { signers.push_back({EntityClass::Manufacturer, u.manufacturer_id}); },
                              [&](const tx::LocalInteractiveTx& l) { signers.push_back({EntityClass::RegionalNode, l.rn_id}); },
                              [&](const tx::PermissionTx& p) {
                                if (!p.cross_region()) return;
                                for (auto d : {p.d1_id, p.d2_id})
                                  if (const auto* rec = keys.find(d); rec && rec->home_region)
                                    signers.push_back({EntityClass::RegionalNode, *rec->home_region});
                              },
                              [](const auto&) {},
                          },
                          t);
               for (const auto& s : signers)
                 if (cancelled.contains(s))
                   return fail("rn" + std::to_string(r) + " height " + std::to_string(b.height) + ": " + tx::to_string(tx::type_of(t)) +
                               " signed by cancelled " + tx::to_string(s.first) + " " + std::to_string(s.second));
             }
             for (const auto& t : b.txs)
               if (const auto* x = std::get_if<tx::CancellationTx>(&t)) cancelled.insert({x->entity_class, x->entity_id});
           }
         }
         return pass();
       }},
  };
  return checks;
}

std::vector<std::string> slice_around(const sim::Trace& t, std::size_t at) {
  std::vector<std::string> out;
  std::size_t lo = at >= 4 ? at - 4 : 0;
  std::size_t hi = std::min(t.records.size(), at + 5);
  for (std::size_t i = lo; i < hi; ++i) out.push_back("#" + std::to_string(i) + " " + t.records[i].line());
  return out;
}

sim::FaultKind fault_kind(const std::string& s) {
  for (auto k : {sim::FaultKind::Crash, sim::FaultKind::Dos, sim::FaultKind::Byzantine, sim::FaultKind::Tamper,
                 sim::FaultKind::Partition, sim::FaultKind::Heal})
    if (sim::to_string(k) == s) return k;
  throw sim::ConfigError("unknown fault kind '" + s + "'");
}

}  // namespace

std::vector<std::string> assertion_names() {
  std::vector<std::string> out;
  for (const auto& [k, _] : catalogue()) out.push_back(k);
  return out;
}

std::vector<std::string> audit_all(const World& w) {
  std::vector<std::string> out;
  for (std::uint16_t r = 1; r <= w.config().rns; ++r) {
    auto report = ledger::audit_chain(w.rn(r).chain(), w.shared().keys);
    if (!report.chain_intact) out.push_back("rn" + std::to_string(r) + ": hash chain broken");
    for (const auto& f : report.invalid_transactions)
      out.push_back("rn" + std::to_string(r) + " height " + std::to_string(f.height) + " tx " + std::to_string(f.index) + ": " + f.result.detail);
  }
  // Nodes may lag each other but must never hold different blocks at one height.
  for (std::uint64_t h = 1;; ++h) {
    std::map<Digest, std::string> seen;
    for (std::uint16_t r = 1; r <= w.config().rns; ++r) {
      const auto& blocks = w.rn(r).chain().blocks();
      if (h < blocks.size()) seen[blocks[h].block_hash] += (seen[blocks[h].block_hash].empty() ? "rn" : ",rn") + std::to_string(r);
    }
    if (seen.empty()) break;
    if (seen.size() > 1) {
      std::string line = "fork at height " + std::to_string(h) + ":";
      for (const auto& [hash, who] : seen) line += " {" + who + "}";
      out.push_back(line);
      break;  // everything above follows from the first fork
    }
  }
  return out;
}

Scenario parse_scenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw sim::ConfigError(std::string("scenario is not valid JSON: ") + e.what());
  }
  try {
    check_keys(j, {"name", "description", "seed", "horizon_ms", "topology", "consensus", "link", "roles", "bootstrap", "steps",
                   "faults", "assertions"},
               "scenario");
    Scenario s;
    s.name = j.at("name").get<std::string>();
    maybe(j, "description", s.description);
    maybe(j, "seed", s.seed);
    maybe(j, "horizon_ms", s.horizon);
    maybe(j, "bootstrap", s.bootstrap);
    auto& w = s.world;
    if (j.contains("topology")) {
      const auto& t = j.at("topology");
      check_keys(t, {"rns", "manufacturers", "devices_per_region", "providers", "forged_devices", "certified_manufacturers"}, "topology");
      maybe(t, "rns", w.rns);
      maybe(t, "manufacturers", w.manufacturers);
      maybe(t, "devices_per_region", w.devices_per_region);
      maybe(t, "providers", w.providers);
      maybe(t, "forged_devices", w.forged_devices);
      maybe(t, "certified_manufacturers", w.certified_manufacturers);
    }
    if (j.contains("consensus")) {
      const auto& t = j.at("consensus");
      check_keys(t, {"engine", "timeout_ms", "batch_size", "batch_timeout_ms", "status_interval_ms"}, "consensus");
      if (t.contains("engine")) {
        auto e = t.at("engine").get<std::string>();
        if (e == "pbft") w.engine = consensus::EngineKind::Pbft;
        else if (e == "ordering-stub") w.engine = consensus::EngineKind::OrderingStub;
        else throw sim::ConfigError("unknown engine '" + e + "'");
      }
      maybe(t, "timeout_ms", w.consensus.timeout_ms);
      maybe(t, "batch_size", w.consensus.batch_size);
      maybe(t, "batch_timeout_ms", w.consensus.batch_timeout_ms);
      maybe(t, "status_interval_ms", w.consensus.status_interval_ms);
    }
    if (j.contains("link")) {
      const auto& t = j.at("link");
      check_keys(t, {"device_latency_ms", "node_latency_ms", "service_latency_ms", "jitter_ms", "drop_probability"}, "link");
      maybe(t, "device_latency_ms", w.link.device_latency);
      maybe(t, "node_latency_ms", w.link.node_latency);
      maybe(t, "service_latency_ms", w.link.service_latency);
      maybe(t, "jitter_ms", w.link.jitter);
      maybe(t, "drop_probability", w.link.drop_probability);
    }
    if (j.contains("roles")) {
      const auto& t = j.at("roles");
      check_keys(t, {"flush_interval_ms", "flush_size", "query_interval_ms", "retry_interval_ms", "report_threshold", "markers"}, "roles");
      maybe(t, "flush_interval_ms", w.flush_interval);
      maybe(t, "flush_size", w.flush_size);
      maybe(t, "query_interval_ms", w.query_interval);
      maybe(t, "retry_interval_ms", w.retry_interval);
      maybe(t, "report_threshold", w.report_threshold);
      maybe(t, "markers", w.markers);
    }
    for (const auto& st : j.value("steps", json::array())) {
      check_keys(st, {"at", "actor", "command", "args"}, "step");
      s.steps.push_back({st.at("at").get<Time>(), st.at("actor").get<std::string>(), st.at("command").get<std::string>(),
                         args_from(st.value("args", json()), "step")});
    }
    for (const auto& f : j.value("faults", json::array())) {
      check_keys(f, {"at", "kind", "target", "duration_ms", "args", "groups"}, "fault");
      FaultSpec fs;
      fs.at = f.at("at").get<Time>();
      fs.kind = f.at("kind").get<std::string>();
      maybe(f, "target", fs.target);
      maybe(f, "duration_ms", fs.duration);
      maybe(f, "args", fs.args);
      maybe(f, "groups", fs.groups);
      s.faults.push_back(std::move(fs));
    }
    for (const auto& a : j.value("assertions", json::array())) {
      check_keys(a, {"name", "args"}, "assertion");
      s.assertions.push_back({a.at("name").get<std::string>(), args_from(a.value("args", json()), "assertion")});
    }
    return s;
  } catch (const json::exception& e) {
    throw sim::ConfigError(std::string("scenario: ") + e.what());
  }
}

std::string to_json(const Scenario& s) {
  const auto& w = s.world;
  json j;
  j["name"] = s.name;
  j["description"] = s.description;
  j["seed"] = s.seed;
  j["horizon_ms"] = s.horizon;
  j["bootstrap"] = s.bootstrap;
  j["topology"] = {{"rns", w.rns},
                   {"manufacturers", w.manufacturers},
                   {"devices_per_region", w.devices_per_region},
                   {"providers", w.providers},
                   {"forged_devices", w.forged_devices},
                   {"certified_manufacturers", w.certified_manufacturers}};
  j["consensus"] = {{"engine", engine_name(w.engine)},
                    {"timeout_ms", w.consensus.timeout_ms},
                    {"batch_size", w.consensus.batch_size},
                    {"batch_timeout_ms", w.consensus.batch_timeout_ms},
                    {"status_interval_ms", w.consensus.status_interval_ms}};
  j["link"] = {{"device_latency_ms", w.link.device_latency},
               {"node_latency_ms", w.link.node_latency},
               {"service_latency_ms", w.link.service_latency},
               {"jitter_ms", w.link.jitter},
               {"drop_probability", w.link.drop_probability}};
  j["roles"] = {{"flush_interval_ms", w.flush_interval}, {"flush_size", w.flush_size},
                {"query_interval_ms", w.query_interval}, {"retry_interval_ms", w.retry_interval},
                {"report_threshold", w.report_threshold}, {"markers", w.markers}};
  j["steps"] = json::array();
  for (const auto& st : s.steps) j["steps"].push_back({{"at", st.at}, {"actor", st.actor}, {"command", st.command}, {"args", st.args}});
  j["faults"] = json::array();
  for (const auto& f : s.faults) {
    json fj{{"at", f.at}, {"kind", f.kind}};
    if (!f.target.empty()) fj["target"] = f.target;
    if (f.duration) fj["duration_ms"] = f.duration;
    if (!f.args.empty()) fj["args"] = f.args;
    if (!f.groups.empty()) fj["groups"] = f.groups;
    j["faults"].push_back(std::move(fj));
  }
  j["assertions"] = json::array();
  for (const auto& a : s.assertions) j["assertions"].push_back({{"name", a.name}, {"args", a.args}});
  return j.dump(2) + "\n";
}

bool Verdict::passed() const {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

std::string Verdict::text() const {
  std::ostringstream os;
  os << "scenario " << scenario << " seed=" << seed << " horizon_ms=" << horizon << " records=" << trace_records << ": "
     << (passed() ? "PASS" : "FAIL") << "\n";
  for (const auto& r : results) {
    os << "  [" << (r.passed ? "PASS" : "FAIL") << "] " << r.name;
    if (!r.args.empty()) os << " " << roles::format_args(r.args);
    if (!r.detail.empty()) os << ": " << r.detail;
    os << "\n";
    if (!r.passed) {
      os << "    replay: seed=" << seed << " event=" << r.event_index << "\n";
      for (const auto& l : r.slice) os << "    " << l << "\n";
    }
  }
  return os.str();
}

std::string Verdict::structured() const {
  std::string out = json{{"scenario", scenario},
                         {"seed", seed},
                         {"horizon_ms", horizon},
                         {"records", trace_records},
                         {"passed", passed()},
                         {"assertions", results.size()}}
                        .dump() +
                    "\n";
  for (const auto& r : results) {
    json j{{"assertion", r.name}, {"args", r.args}, {"passed", r.passed}, {"detail", r.detail}};
    if (!r.passed) {
      j["replay"] = {{"seed", seed}, {"event_index", r.event_index}};
      j["slice"] = r.slice;
    }
    out += j.dump() + "\n";
  }
  return out;
}

RunResult run_scenario(const Scenario& s) {
  for (const auto& a : s.assertions)
    if (!catalogue().contains(a.name)) throw sim::ConfigError("unknown assertion '" + a.name + "'");
  if (s.horizon == 0) throw sim::ConfigError("horizon must be positive");

  RunResult out;
  out.world = std::make_unique<World>(s.world, s.seed);
  auto& w = *out.world;
  if (s.bootstrap) w.bootstrap();
  for (const auto& f : s.faults) {
    sim::ScheduledFault sf;
    sf.at = f.at;
    sf.fault.kind = fault_kind(f.kind);
    if (!f.target.empty()) sf.fault.target = w.id(f.target);
    sf.fault.duration = f.duration;
    sf.fault.args = f.args;
    for (const auto& g : f.groups) {
      std::vector<ActorId> ids;
      for (const auto& n : g) ids.push_back(w.id(n));
      sf.fault.groups.push_back(std::move(ids));
    }
    if (f.kind == "tamper") {
      // device=NAME is resolved to the device id for the provider
      auto a = roles::parse_args(f.args);
      if (auto it = a.find("device"); it != a.end() && !std::isdigit(static_cast<unsigned char>(it->second[0])))
        it->second = std::to_string(w.device_info(it->second).device_id);
      sf.fault.args = roles::format_args(a);
    }
    w.net().schedule(std::move(sf));
  }
  for (const auto& st : s.steps) w.command(st.at, st.actor, st.command, st.args);

  const auto& trace = w.net().run(s.horizon);

  auto& v = out.verdict;
  v.scenario = s.name;
  v.seed = s.seed;
  v.horizon = s.horizon;
  v.trace_records = trace.records.size();
  for (const auto& a : s.assertions) {
    AssertionResult r{a.name, a.args, false, {}, trace.records.size(), {}};
    Outcome o;
    try {
      o = catalogue().at(a.name)(Ctx{w, trace, a.args});
    } catch (const sim::ConfigError& e) {
      o = fail(std::string("bad assertion arguments: ") + e.what());
    }
    r.passed = o.ok;
    r.detail = o.detail;
    if (!o.ok) {
      r.event_index = o.at.value_or(trace.records.size() ? trace.records.size() - 1 : 0);
      r.slice = slice_around(trace, r.event_index);
    }
    v.results.push_back(std::move(r));
  }
  return out;
}

}  // namespace iotchain::scen

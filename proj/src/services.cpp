#include <algorithm>

#include "roles_util.hpp"

namespace iotchain::roles {

using namespace detail;

namespace {

constexpr std::uint64_t kRetryTimer = 1;
constexpr sim::Time kRetryInterval = 2000;

void submit_to_rns(Context& ctx, const Shared& shared, const Transaction& t) {
  auto wire = tx_wire(t);
  for (auto rn : shared.topo.rns) post(ctx, rn, msg::kSubmit, wire);
}

bool contains(ByteView hay, ByteView needle) {
  if (needle.empty()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

// ---- certification center ----

CertificationCenter::CertificationCenter(std::shared_ptr<Shared> shared, KeyPair key, std::uint64_t seed)
    : shared_(std::move(shared)), key_(std::move(key)), rng_(seed), follower_(*shared_) {}

void CertificationCenter::on_start(Context& ctx) { ctx.set_timer(kRetryInterval, kRetryTimer); }

void CertificationCenter::on_timer(Context& ctx, std::uint64_t tag, ByteView) {
  if (tag != kRetryTimer) return;
  for (const auto& [id, p] : pending_) submit_to_rns(ctx, *shared_, p.tx);
  ctx.set_timer(kRetryInterval, kRetryTimer);
}

void CertificationCenter::on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) {
  if (type == msg::kBlock) {
    for (auto h : follower_.on_announce(from, payload)) {
      for (const auto& t : follower_.ledger().blocks()[h].txs) {
        auto it = pending_.find(tx::tx_digest(t));
        if (it == pending_.end()) continue;
        const auto& e = it->second.tx;
        const auto& issued = issued_.at({e.entity_class, e.entity_id});
        ByteWriter w;
        w.u8(static_cast<std::uint8_t>(e.entity_class)).u16(e.entity_id).u32(e.key_id).u64(issued.key_seed);
        post(ctx, it->second.applicant, msg::kIssued, std::move(w).take());
        ctx.note("issued", tx::to_string(e.entity_class) + " " + std::to_string(e.entity_id) + " height=" + std::to_string(h));
        pending_.erase(it);
      }
    }
    return;
  }
  if (type != msg::kApply) return;

  // Review: the request must name an admissible class and carry evidence.
  auto refuse = [&](const std::string& reason) {
    ctx.note("refuse", "applicant=" + ctx.name_of(from) + " " + reason);
    post(ctx, from, msg::kRefused, to_bytes(reason));
  };
  Args args;
  EntityClass cls{};
  std::uint16_t id = 0;
  try {
    args = parse_args(as_text(payload));
    cls = parse_class(args.count("class") ? args.at("class") : "");
    id = static_cast<std::uint16_t>(arg_u64(args, "id"));
  } catch (const sim::ConfigError& e) {
    return refuse(std::string("malformed request: ") + e.what());
  }
  if (cls != EntityClass::Manufacturer && cls != EntityClass::RegionalNode) return refuse("class not admissible");
  if (args["evidence"].empty()) return refuse("no evidence");
  if (id == 0 || issued_.contains({cls, id}) || follower_.tables().entity_key(cls, id)) return refuse("entity id taken");

  auto seed = rng_.next();
  DeterministicRng key_rng(seed);
  auto kp = generate_keypair(key_rng);
  std::uint32_t key_id = 0x41000000u | next_key_++;
  shared_->keys.publish(key_id, ledger::KeyRecord{kp.public_key, std::nullopt, std::nullopt});
  auto t = ledger::make_entity_registration(key_, cls, id, key_id);
  issued_[{cls, id}] = Issued{cls, key_id, seed};
  pending_[tx::tx_digest(t)] = Pending{from, id, t};
  ctx.note("approve", tx::to_string(cls) + " " + std::to_string(id));
  submit_to_rns(ctx, *shared_, t);
}

// ---- detection center ----

DetectionCenter::DetectionCenter(std::shared_ptr<Shared> shared, KeyPair key, std::vector<Bytes> markers,
                                 std::size_t report_threshold)
    : shared_(std::move(shared)),
      key_(std::move(key)),
      markers_(std::move(markers)),
      threshold_(report_threshold),
      follower_(*shared_) {}

void DetectionCenter::on_start(Context& ctx) { ctx.set_timer(kRetryInterval, kRetryTimer); }

void DetectionCenter::on_timer(Context& ctx, std::uint64_t tag, ByteView) {
  if (tag != kRetryTimer) return;
  for (const auto& [id, c] : unconfirmed_) submit_to_rns(ctx, *shared_, c);
  ctx.set_timer(kRetryInterval, kRetryTimer);
}

void DetectionCenter::on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) {
  try {
    if (type == msg::kBlock) {
      for (auto h : follower_.on_announce(from, payload)) {
        for (const auto& t : follower_.ledger().blocks()[h].txs) {
          if (const auto* u = std::get_if<tx::UpdateReleaseTx>(&t)) scan_payload(ctx, *u, "height=" + std::to_string(h));
          if (auto it = unconfirmed_.find(tx::tx_digest(t)); it != unconfirmed_.end()) {
            ctx.note("cancel-confirmed", tx::to_string(it->second.entity_class) + " " +
                                             std::to_string(it->second.entity_id) + " height=" + std::to_string(h));
            unconfirmed_.erase(it);
          }
        }
      }
    } else if (type == msg::kInspect) {
      if (!shared_->topo.replica_of(from)) return;
      scan_payload(ctx, tx::decode_package(payload), "region=" + std::to_string(*shared_->topo.replica_of(from) + 1));
    } else if (type == msg::kReport) {
      handle_report(ctx, payload);
    }
  } catch (const TruncatedInput& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  } catch (const tx::TxDecodeError& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  }
}

void DetectionCenter::scan_payload(Context& ctx, const tx::UpdateReleaseTx& u, const std::string& where) {
  for (const auto& m : markers_) {
    if (!contains(u.payload, m)) continue;
    auto key = follower_.tables().entity_key(EntityClass::Manufacturer, u.manufacturer_id);
    findings_.push_back(Finding{ctx.now(), "malware", EntityClass::Manufacturer, u.manufacturer_id, key.value_or(0),
                                where + " payload=" + hash(u.payload).prefix()});
    ctx.note("finding", "malware manufacturer=" + std::to_string(u.manufacturer_id) + " " + where);
    audit_and_cancel(ctx, &findings_.back());
    return;
  }
}

void DetectionCenter::handle_report(Context& ctx, ByteView payload) {
  ByteReader r(payload);
  auto kind = r.str();
  if (kind == "rejecting") {
    auto region = r.u16();
    auto n = r.u32();
    std::size_t valid = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
      auto wire = r.blob();
      // The reported transactions must be ones an honest node would accept.
      if (ledger::validate(tx_unwire(wire), follower_.tables(), shared_->keys).ok()) ++valid;
    }
    auto key = follower_.tables().entity_key(EntityClass::RegionalNode, region);
    if (valid < threshold_ || !key) {
      ctx.note("report-dismissed", "rejecting region=" + std::to_string(region) + " valid=" + std::to_string(valid));
      return;
    }
    findings_.push_back(Finding{ctx.now(), "rejecting", EntityClass::RegionalNode, region, *key,
                                std::to_string(valid) + " valid transactions rejected"});
    ctx.note("finding", "rejecting region=" + std::to_string(region));
    audit_and_cancel(ctx, &findings_.back());
    return;
  }
  if (kind == "tampering") {
    auto provider = r.u16();
    auto key_id = r.u32();
    auto device = r.u32();
    auto number = r.u16();
    auto data = r.blob();
    auto sig = Signature::from(r.raw(kSignatureSize));
    const auto* rec = shared_->keys.find(key_id);
    bool signed_by_provider = false;
    try {
      signed_by_provider = rec && verify(rec->public_key, CloudProvider::response_bytes(provider, device, number, data), sig);
    } catch (const DecodeError&) {
    }
    auto recorded = follower_.tables().storage_info.find({device, number});
    if (!signed_by_provider || recorded == follower_.tables().storage_info.end() || recorded->second == hash(data)) {
      ctx.note("report-dismissed", "tampering provider=" + std::to_string(provider));
      return;
    }
    findings_.push_back(Finding{ctx.now(), "tampering", EntityClass::CloudProvider, provider, key_id,
                                "device=" + dev_hex(device) + " number=" + std::to_string(number) +
                                    " served=" + hash(data).prefix() + " recorded=" + recorded->second.prefix()});
    ctx.note("finding", "tampering provider=" + std::to_string(provider));
    audit_and_cancel(ctx, &findings_.back());
    return;
  }
  ctx.note("report-dismissed", "unknown kind " + kind);
}

std::optional<tx::CancellationTx> DetectionCenter::audit_and_cancel(Context& ctx, const Finding* finding) {
  if (!finding) {
    ctx.note("cancel-refused", "no finding");
    return std::nullopt;
  }
  if (finding->target_key == 0) {
    ctx.note("cancel-refused", "target key unknown");
    return std::nullopt;
  }
  if (!cancelled_.insert({finding->target_class, finding->target_id}).second) return std::nullopt;
  tx::CancellationTx c{finding->target_class, finding->target_id, finding->target_key, {}};
  c.signature = iotchain::sign(key_.secret_key, tx::signing_bytes(c));
  unconfirmed_[tx::tx_digest(c)] = c;
  ctx.note("cancel", tx::to_string(c.entity_class) + " " + std::to_string(c.entity_id) + " finding=" + finding->kind);
  submit_to_rns(ctx, *shared_, c);
  return c;
}

// ---- manufacturer ----

Manufacturer::Manufacturer(std::shared_ptr<Shared> shared, std::uint16_t id, std::vector<Product> line,
                           std::uint64_t seed)
    : shared_(std::move(shared)), id_(id), line_(std::move(line)), rng_(seed), follower_(*shared_) {}

bool Manufacturer::cancelled() const {
  for (const auto& [key, row] : follower_.tables().registry)
    if (!row.is_device && row.entity_class == EntityClass::Manufacturer && row.entity_id == id_ &&
        row.status == ledger::Status::Cancelled)
      return true;
  return false;
}

void Manufacturer::on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) {
  if (from == sim::kHarness) {
    try {
      command(ctx, type, parse_args(as_text(payload)));
    } catch (const sim::ConfigError& e) {
      ctx.note("bad-command", type + " " + e.what());
    }
    return;
  }
  if (type == msg::kBlock) {
    try {
      follower_.on_announce(from, payload);
    } catch (const std::exception& e) {
      ctx.note("drop-malformed", e.what());
    }
  } else if (type == msg::kIssued && from == shared_->topo.cc) {
    ByteReader r(payload);
    r.u8();
    auto id = r.u16();
    r.u32();
    DeterministicRng key_rng(r.u64());
    if (id != id_) return;
    key_ = generate_keypair(key_rng);
    ctx.note("issued", "manufacturer=" + std::to_string(id_));
  } else if (type == msg::kRefused) {
    ctx.note("apply-refused", as_text(payload));
  } else if (type == msg::kReceipt) {
    ctx.note("release-receipt", "from=" + ctx.name_of(from));
  } else if (type == msg::kReject) {
    ByteReader r(payload);
    ctx.note("rejected", "reason=" + r.str());
  }
}

void Manufacturer::command(Context& ctx, const std::string& type, const Args& args) {
  if (type == "apply") {
    Args req{{"class", "manufacturer"}, {"id", std::to_string(id_)}};
    if (auto it = args.find("evidence"); it != args.end()) req["evidence"] = it->second;
    post(ctx, shared_->topo.cc, msg::kApply, command_payload(req));
    return;
  }
  if (type == "provision") {
    if (!key_) {
      ctx.note("provision-refused", "manufacturer not certified");
      return;
    }
    if (cancelled()) {
      ctx.note("provision-refused", "certification cancelled");
      return;
    }
    for (const auto& p : line_) {
      std::uint32_t device_id = (static_cast<std::uint32_t>(id_) << 16) | p.serial;
      if (produced_.contains(device_id)) continue;
      auto seed = rng_.next();
      DeterministicRng key_rng(seed);
      auto kp = generate_keypair(key_rng);
      auto cert = issue_certificate(*key_, id_, kp.public_key);
      shared_->keys.publish(device_id, ledger::KeyRecord{kp.public_key, cert, p.region});
      tx::DeviceRegistrationTx reg{id_, device_id, {}};
      reg.signature = iotchain::sign(key_->secret_key, tx::signing_bytes(reg));
      produced_[device_id] = cert;
      // Written to the device's HSM at the factory.
      ByteWriter w;
      w.u64(seed).u32(device_id).raw(cert.manufacturer_signature.view()).u16(id_).raw(key_->public_key.view()).raw(tx::encode(reg));
      post(ctx, p.device, msg::kHsm, std::move(w).take());
    }
    ctx.note("provisioned", "count=" + std::to_string(produced_.size()));
    return;
  }
  if (type == "release") {
    if (!key_) {
      ctx.note("release-refused", "manufacturer not certified");
      return;
    }
    auto model = static_cast<std::uint16_t>(arg_u64(args, "model", 1));
    Bytes payload;
    if (auto it = args.find("payload_hex"); it != args.end()) payload = from_hex(it->second);
    else if (auto p = args.find("payload"); p != args.end()) payload = to_bytes(p->second);
    tx::UpdateReleaseTx u{id_, model, {}, std::move(payload)};
    u.signature = iotchain::sign(key_->secret_key, tx::signing_bytes(u));
    releases_.push_back(u);
    auto regions = args.find("regions");
    ctx.note("release", "model=" + std::to_string(model) + " payload=" + hash(u.payload).prefix() +
                            (regions == args.end() ? " scope=global" : " regions=" + regions->second));
    if (regions == args.end()) {
      submit_to_rns(ctx, *shared_, u);
      return;
    }
    auto package = tx::encode_package(u);
    std::string list = regions->second;
    std::size_t pos = 0;
    while (pos < list.size()) {
      auto comma = list.find(',', pos);
      auto tok = list.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      if (auto rn = shared_->topo.rn_of_region(static_cast<std::uint16_t>(std::stoul(tok)))) post(ctx, rn, msg::kLocalRelease, package);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    return;
  }
  ctx.note("bad-command", type);
}

// ---- cloud provider ----

CloudProvider::CloudProvider(std::shared_ptr<Shared> shared, std::uint16_t id, std::uint16_t region, KeyPair key,
                             std::uint32_t key_id)
    : shared_(std::move(shared)), id_(id), region_(region), key_(std::move(key)), key_id_(key_id), follower_(*shared_) {}

Bytes CloudProvider::response_bytes(std::uint16_t provider, std::uint32_t device, std::uint16_t number, ByteView data) {
  ByteWriter w;
  w.str("cloud-data").u16(provider).u32(device).u16(number).raw(hash(data).view());
  return std::move(w).take();
}

void CloudProvider::on_fault(Context& ctx, const sim::Fault& fault) {
  if (fault.kind != sim::FaultKind::Tamper) return;
  auto args = parse_args(fault.args);
  Tamper t;
  if (args.contains("device")) t.device = static_cast<std::uint32_t>(arg_u64(args, "device"));
  if (args.contains("number")) t.number = static_cast<std::uint16_t>(arg_u64(args, "number"));
  t.byte = arg_u64(args, "byte", 0);
  tampers_.push_back(t);
  ctx.note("tamper", fault.args.empty() ? "all" : fault.args);
}

void CloudProvider::try_store(Context& ctx) {
  const auto& info = follower_.tables().storage_info;
  std::erase_if(waiting_, [&](auto& w) {
    auto it = info.find(w.first);
    if (it == info.end()) return false;
    if (it->second != hash(w.second)) {
      ctx.note("put-mismatch", "device=" + dev_hex(w.first.first) + " number=" + std::to_string(w.first.second));
      return true;
    }
    store_[w.first] = std::move(w.second);
    ctx.note("stored", "device=" + dev_hex(w.first.first) + " number=" + std::to_string(w.first.second));
    return true;
  });
}

void CloudProvider::on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) {
  if (from == sim::kHarness) {
    if (type == "register") {
      ByteWriter w;
      w.u16(id_).u32(key_id_);
      post(ctx, shared_->topo.rn_of_region(region_), msg::kCloudRegister, std::move(w).take());
    }
    return;
  }
  try {
    if (type == msg::kBlock) {
      if (!follower_.on_announce(from, payload).empty()) try_store(ctx);
    } else if (type == msg::kReceipt && from == shared_->topo.rn_of_region(region_)) {
      registered_ = true;
      ctx.note("registered", "provider=" + std::to_string(id_));
    } else if (type == msg::kCloudPut) {
      if (!registered_) {
        post(ctx, from, msg::kCloudRefused, {});
        return;
      }
      ByteReader r(payload);
      auto device = r.u32();
      auto number = r.u16();
      waiting_.push_back({{device, number}, r.blob()});
      try_store(ctx);
    } else if (type == msg::kCloudGet) {
      ByteReader r(payload);
      auto device = r.u32();
      auto number = r.u16();
      auto it = store_.find({device, number});
      if (it == store_.end()) {
        post(ctx, from, msg::kCloudMissing, Bytes(payload.begin(), payload.end()));
        return;
      }
      Bytes data = it->second;
      for (const auto& t : tampers_) {
        if ((t.device && *t.device != device) || (t.number && *t.number != number) || data.empty()) continue;
        data[t.byte % data.size()] ^= 0x01;
      }
      auto sig = iotchain::sign(key_.secret_key, response_bytes(id_, device, number, data));
      ByteWriter w;
      w.u16(id_).u32(key_id_).u32(device).u16(number).blob(data).raw(sig.view());
      post(ctx, from, msg::kCloudData, std::move(w).take());
    }
  } catch (const TruncatedInput& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  }
}

}  // namespace iotchain::roles

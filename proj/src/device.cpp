#include "roles_util.hpp"

namespace iotchain::roles {

using namespace detail;

namespace {

constexpr std::uint64_t kQueryTimer = 1;
constexpr std::uint64_t kRetryTimer = 2;

}  // namespace

Device::Device(std::shared_ptr<Shared> shared, Config config) : shared_(std::move(shared)), config_(config) {}

ActorId Device::rn() const { return shared_->topo.rn_of_region(config_.region); }

void Device::forge_identity(DeterministicRng& rng, std::uint16_t claimed_manufacturer, std::uint16_t serial) {
  auto fake_mfr = generate_keypair(rng);
  auto kp = generate_keypair(rng);
  std::uint32_t id = (static_cast<std::uint32_t>(claimed_manufacturer) << 16) | serial;
  auto cert = issue_certificate(fake_mfr, claimed_manufacturer, kp.public_key);
  shared_->keys.publish(id, ledger::KeyRecord{kp.public_key, cert, config_.region});
  tx::DeviceRegistrationTx reg{claimed_manufacturer, id, {}};
  reg.signature = iotchain::sign(fake_mfr.secret_key, tx::signing_bytes(reg));
  hsm_.emplace(std::move(kp), cert);
  device_id_ = id;
  manufacturer_key_ = fake_mfr.public_key;
  registration_ = reg;
}

void Device::submit(Context& ctx, std::string_view type, const Transaction& t) {
  auto wire = tx::encode(t);
  submitted_[tx::tx_digest(t)] = wire;
  post(ctx, rn(), type, std::move(wire));
}

void Device::rejected(Context& ctx, ByteView payload) {
  ByteReader r(payload);
  auto reason = r.str();
  auto detail = r.str();
  auto wire = r.blob();
  ctx.note("rejected", "reason=" + reason + (detail.empty() ? "" : " " + detail));
  if (registered_ && registration_ && wire == tx::encode(*registration_)) return;  // late duplicate
  rejected_txs_.push_back(std::move(wire));
  if (++consecutive_rejections_ < config_.report_threshold || reported_) return;
  // The home node keeps refusing: hand the refused transactions to the DC.
  reported_ = true;
  ByteWriter w;
  w.str("rejecting").u16(config_.region).u32(static_cast<std::uint32_t>(rejected_txs_.size()));
  for (const auto& b : rejected_txs_) w.blob(b);
  ctx.note("report", "rejecting region=" + std::to_string(config_.region) + " count=" + std::to_string(rejected_txs_.size()));
  post(ctx, shared_->topo.dc, msg::kReport, std::move(w).take());
}

void Device::on_timer(Context& ctx, std::uint64_t tag, ByteView) {
  if (tag == kQueryTimer) {
    command(ctx, "query", {});
    ctx.set_timer(config_.query_interval, kQueryTimer);
  } else if (tag == kRetryTimer && !registered_ && registration_) {
    submit(ctx, msg::kRegister, *registration_);
    ctx.set_timer(config_.retry_interval, kRetryTimer);
  }
}

void Device::on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) {
  if (from == sim::kHarness) {
    try {
      command(ctx, type, parse_args(as_text(payload)));
    } catch (const sim::ConfigError& e) {
      ctx.note("bad-command", type + " " + e.what());
    }
    return;
  }
  try {
    if (type == msg::kHsm) {
      if (hsm_) return;  // write-once
      ByteReader r(payload);
      DeterministicRng key_rng(r.u64());
      auto id = r.u32();
      auto sig = Signature::from(r.raw(kSignatureSize));
      auto mid = r.u16();
      auto mpk = PublicKey::from(r.raw(kPublicKeySize));
      auto reg = std::get<tx::DeviceRegistrationTx>(tx::decode(r.raw(tx::size::kDeviceRegistration)));
      auto kp = generate_keypair(key_rng);
      DeviceCertificate cert{kp.public_key, sig, mid};
      if (!verify_certificate(cert, mpk)) {
        ctx.note("hsm-refused", "certificate does not verify");
        return;
      }
      hsm_.emplace(std::move(kp), cert);
      device_id_ = id;
      manufacturer_key_ = mpk;
      registration_ = reg;
      ctx.note("provisioned", dev_hex(id));
    } else if (type == msg::kReceipt && from == rn()) {
      ByteReader r(payload);
      auto height = r.u64();
      auto proof = merkle::parse_proof(r.blob());
      auto it = submitted_.find(proof.leaf);
      if (it == submitted_.end() || !merkle::verify_proof(proof)) {
        ctx.note("receipt-invalid", "leaf=" + proof.leaf.prefix());
        return;
      }
      receipts_.push_back(proof);
      submitted_.erase(it);
      consecutive_rejections_ = 0;
      if (registration_ && proof.leaf == tx::tx_digest(*registration_) && !registered_) {
        registered_ = true;
        ctx.note("registered", dev_hex(*device_id_) + " height=" + std::to_string(height) + " root=" + proof.root.prefix());
        if (config_.query_interval) ctx.set_timer(config_.query_interval, kQueryTimer);
      }
    } else if (type == msg::kReject) {
      rejected(ctx, payload);
    } else if (type == msg::kConfirmed) {
      ByteReader r(payload);
      auto id = Digest::from(r.raw(kDigestSize));
      auto height = r.u64();
      submitted_.erase(id);
      consecutive_rejections_ = 0;
      if (auto s = storage_txs_.find(id); s != storage_txs_.end()) {
        auto& rec = stored_.at(s->second);
        rec.confirmed = true;
        ctx.note("storage-confirmed", "number=" + std::to_string(s->second) + " height=" + std::to_string(height));
        if (auto p = shared_->topo.providers.find(rec.provider); p != shared_->topo.providers.end()) {
          ByteWriter w;
          w.u32(*device_id_).u16(s->second).blob(rec.data);
          post(ctx, p->second, msg::kCloudPut, std::move(w).take());
        }
        storage_txs_.erase(s);
      } else {
        ctx.note("confirmed", "tx=" + id.prefix() + " height=" + std::to_string(height));
      }
    } else if (type == msg::kUpdate && from == rn()) {
      auto u = tx::decode_package(payload);
      bool ok = manufacturer_key_ && u.model_id == config_.model &&
                verify(*manufacturer_key_, tx::signing_bytes(u), u.signature);
      if (!ok) {
        ctx.note("update-refused", "payload=" + hash(u.payload).prefix());
        return;
      }
      auto digest = hash(u.payload);
      if (std::find(installed_.begin(), installed_.end(), digest) == installed_.end()) {
        installed_.push_back(digest);
        ctx.note("installed", "payload=" + digest.prefix());
      }
    } else if (type == msg::kUpdateNone) {
      // nothing released for this model yet
    } else if (type == msg::kSession) {
      auto plain = hsm_ ? hsm_->open_sealed(payload) : std::nullopt;
      if (!plain) {
        ctx.note("session-unreadable", {});
        return;
      }
      ByteReader r(*plain);
      SessionKey key;
      auto raw = r.raw(kSessionKeySize);
      std::copy(raw.begin(), raw.end(), key.bytes.begin());
      key.participants.first = r.u32();
      key.participants.second = r.u32();
      auto nonce = r.u64();
      auto peer = key.participants.first == *device_id_ ? key.participants.second : key.participants.first;
      sessions_[peer] = key;
      ctx.note("session", "peer=" + dev_hex(peer) + " nonce=" + std::to_string(nonce));
    } else if (type == msg::kDenied) {
      ByteReader r(payload);
      ctx.note("denied", "peer=" + dev_hex(r.u32()));
    } else if (type == msg::kStored) {
      ByteReader r(payload);
      ctx.note("stored-local", "number=" + std::to_string(r.u16()));
    } else if (type == msg::kCloudData) {
      ByteReader r(payload);
      auto provider = r.u16();
      auto key_id = r.u32();
      auto device = r.u32();
      auto number = r.u16();
      auto data = r.blob();
      auto sig_raw = r.raw(kSignatureSize);
      auto rec = stored_.find(number);
      if (device != device_id_ || rec == stored_.end()) return;
      if (hash(data) == rec->second.hash) {
        ctx.note("integrity-ok", "number=" + std::to_string(number));
        return;
      }
      ctx.note("integrity-violation", "number=" + std::to_string(number) + " provider=" + std::to_string(provider));
      ByteWriter w;
      w.str("tampering").u16(provider).u32(key_id).u32(device).u16(number).blob(data).raw(sig_raw);
      post(ctx, shared_->topo.dc, msg::kReport, std::move(w).take());
    } else if (type == msg::kCloudMissing) {
      ByteReader r(payload);
      r.u32();
      ctx.note("cloud-missing", "number=" + std::to_string(r.u16()));
    } else if (type == msg::kCloudRefused) {
      ctx.note("cloud-refused", {});
    } else if (type == msg::kData) {
      ByteReader r(payload);
      auto sender = r.u32();
      auto data = r.blob();
      auto tag = r.raw(16);
      auto s = sessions_.find(sender);
      bool ok = false;
      if (s != sessions_.end()) {
        auto expect = session_tag(s->second, data);
        ok = std::equal(expect.begin(), expect.end(), tag.begin());
      }
      ctx.note(ok ? "data-accepted" : "data-rejected", "from=" + dev_hex(sender));
    }
  } catch (const TruncatedInput& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  } catch (const tx::TxDecodeError& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  } catch (const DecodeError& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  } catch (const merkle::MerkleError& e) {
    ctx.note("drop-malformed", type + " " + e.what());
  }
}

void Device::command(Context& ctx, const std::string& type, const Args& args) {
  if (!hsm_ || !device_id_) {
    ctx.note("not-provisioned", type);
    return;
  }
  auto peer = [&] { return static_cast<std::uint32_t>(arg_u64(args, "peer")); };
  auto op = [&] { return parse_operation(args.count("op") ? args.at("op") : "read"); };
  if (type == "register") {
    submit(ctx, msg::kRegister, *registration_);
    ctx.set_timer(config_.retry_interval, kRetryTimer);
  } else if (type == "query") {
    submit(ctx, msg::kQuery, tx::UpdateQueryTx{registration_->manufacturer_id, config_.model});
  } else if (type == "grant") {
    submit(ctx, msg::kGrant, tx::PermissionTx{false, *device_id_, peer(), op(), {}});
  } else if (type == "request") {
    tx::PermissionTx p{true, *device_id_, peer(), op(), {Signature{}}};
    p.signatures[0] = hsm_->sign(tx::signing_bytes(p));
    submit(ctx, msg::kRequest, p);
  } else if (type == "store") {
    auto number = static_cast<std::uint16_t>(arg_u64(args, "number"));
    auto provider = static_cast<std::uint16_t>(arg_u64(args, "provider", 1));
    Bytes data = to_bytes(args.count("data") ? args.at("data") : "");
    tx::DeviceStorageTx s{*device_id_, number, static_cast<std::uint8_t>(arg_u64(args, "method", 0)), hash(data), {}};
    s.signature = hsm_->sign(tx::signing_bytes(s));
    stored_[number] = Stored{s.data_hash, provider, std::move(data), false};
    storage_txs_[tx::tx_digest(s)] = number;
    submit(ctx, msg::kStorage, s);
  } else if (type == "retrieve") {
    auto number = static_cast<std::uint16_t>(arg_u64(args, "number"));
    auto rec = stored_.find(number);
    auto provider = rec != stored_.end() ? rec->second.provider : static_cast<std::uint16_t>(arg_u64(args, "provider", 1));
    auto p = shared_->topo.providers.find(provider);
    if (p == shared_->topo.providers.end()) {
      ctx.note("bad-command", "unknown provider");
      return;
    }
    ByteWriter w;
    w.u32(*device_id_).u16(number);
    post(ctx, p->second, msg::kCloudGet, std::move(w).take());
  } else if (type == "store-local") {
    ByteWriter w;
    w.u16(static_cast<std::uint16_t>(arg_u64(args, "number"))).blob(to_bytes(args.count("data") ? args.at("data") : ""));
    post(ctx, rn(), msg::kStoreLocal, std::move(w).take());
  } else if (type == "send-data") {
    // actor= is the peer's network address; peer= its device id
    auto target = static_cast<ActorId>(arg_u64(args, "actor"));
    auto data = to_bytes(args.count("data") ? args.at("data") : "");
    std::array<std::uint8_t, 16> tag{};
    if (auto s = sessions_.find(peer()); s != sessions_.end()) tag = session_tag(s->second, data);
    ByteWriter w;
    w.u32(*device_id_).blob(data).raw(ByteView(tag.data(), tag.size()));
    post(ctx, target, msg::kData, std::move(w).take());
  } else {
    ctx.note("bad-command", type);
  }
}

}  // namespace iotchain::roles

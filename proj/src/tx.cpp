#include "iotchain/tx.hpp"

#include <sstream>

namespace iotchain::tx {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::uint8_t kMaxEntityClass = static_cast<std::uint8_t>(EntityClass::DetectionCenter);
constexpr std::uint8_t kMaxOperation = static_cast<std::uint8_t>(Operation::RealTimeRead);

constexpr std::uint8_t tag(TxType t) { return static_cast<std::uint8_t>(t); }

void check_permission_shape(const PermissionTx& p) {
  if (static_cast<std::uint8_t>(p.operation) > kMaxOperation) throw EncodeError("permission: operation code out of range");
  auto n = p.signatures.size();
  if (p.is_request ? (n != 1 && n != 2) : (n != 0 && n != 2))
    throw EncodeError("permission: invalid signature count " + std::to_string(n));
}

void check_class(EntityClass c) {
  if (static_cast<std::uint8_t>(c) > kMaxEntityClass) throw EncodeError("entity class out of range");
}

Bytes permission_body(const PermissionTx& p) {
  ByteWriter w(size::kPermissionLocalRelease);
  w.u8(tag(p.is_request ? TxType::PermissionRequest : TxType::PermissionRelease))
      .u32(p.d1_id)
      .u32(p.d2_id)
      .u8(static_cast<std::uint8_t>(p.operation));
  return std::move(w).take();
}

// Everything except the signature fields, in wire order.
Bytes unsigned_prefix(const Transaction& tx) {
  return std::visit(
      overloaded{
          [](const DeviceRegistrationTx& t) {
            return std::move(ByteWriter().u8(tag(TxType::DeviceRegistration)).u16(t.manufacturer_id).u32(t.device_key_id)).take();
          },
          [](const EntityRegistrationTx& t) {
            check_class(t.entity_class);
            return std::move(ByteWriter()
                                 .u8(tag(TxType::EntityRegistration))
                                 .u8(static_cast<std::uint8_t>(t.entity_class))
                                 .u16(t.entity_id)
                                 .u32(t.key_id))
                .take();
          },
          [](const CancellationTx& t) {
            check_class(t.entity_class);
            return std::move(ByteWriter()
                                 .u8(tag(TxType::Cancellation))
                                 .u8(static_cast<std::uint8_t>(t.entity_class))
                                 .u16(t.entity_id)
                                 .u32(t.key_id))
                .take();
          },
          [](const UpdateReleaseTx& t) {
            return std::move(ByteWriter().u8(tag(TxType::UpdateRelease)).u16(t.manufacturer_id).u16(t.model_id)).take();
          },
          [](const UpdateQueryTx& t) {
            return std::move(ByteWriter().u8(tag(TxType::UpdateQuery)).u16(t.manufacturer_id).u16(t.model_id)).take();
          },
          [](const DeviceStorageTx& t) {
            return std::move(ByteWriter()
                                 .u8(tag(TxType::DeviceStorage))
                                 .u32(t.device_id)
                                 .u16(t.data_number)
                                 .u8(t.processing_method)
                                 .raw(t.data_hash.view()))
                .take();
          },
          [](const PermissionTx& t) {
            check_permission_shape(t);
            return permission_body(t);
          },
          [](const LocalInteractiveTx& t) {
            return std::move(ByteWriter()
                                 .u8(tag(TxType::LocalInteractive))
                                 .u16(t.rn_id)
                                 .raw(t.merkle_root.view())
                                 .u16(t.batch_size))
                .take();
          },
      },
      tx);
}

std::vector<const Signature*> signatures_of(const Transaction& tx) {
  return std::visit(overloaded{
                        [](const UpdateQueryTx&) { return std::vector<const Signature*>{}; },
                        [](const PermissionTx& t) {
                          std::vector<const Signature*> out;
                          for (const auto& s : t.signatures) out.push_back(&s);
                          return out;
                        },
                        [](const auto& t) { return std::vector<const Signature*>{&t.signature}; },
                    },
                    tx);
}

[[noreturn]] void fail(TxDecodeError::Kind kind, const std::string& what) { throw TxDecodeError(kind, what); }

void expect_length(ByteView bytes, std::size_t want, const char* name) {
  if (bytes.size() < want)
    fail(TxDecodeError::Kind::Truncated, std::string(name) + ": truncated (" + std::to_string(bytes.size()) + " of " +
                                             std::to_string(want) + " bytes)");
  if (bytes.size() > want)
    fail(TxDecodeError::Kind::TrailingBytes, std::string(name) + ": " + std::to_string(bytes.size() - want) + " trailing bytes");
}

EntityClass read_class(ByteReader& r) {
  auto c = r.u8();
  if (c > kMaxEntityClass) fail(TxDecodeError::Kind::BadField, "entity class out of range");
  return static_cast<EntityClass>(c);
}

Signature read_sig(ByteReader& r) { return Signature::from(r.raw(kSignatureSize)); }

PermissionTx decode_permission(ByteView bytes, bool is_request) {
  std::size_t local = is_request ? size::kPermissionLocalRequest : size::kPermissionLocalRelease;
  const char* name = is_request ? "permission request" : "permission release";
  if (bytes.size() != local) expect_length(bytes, size::kPermissionCrossRegion, name);
  ByteReader r(bytes);
  r.u8();
  PermissionTx p;
  p.is_request = is_request;
  p.d1_id = r.u32();
  p.d2_id = r.u32();
  auto op = r.u8();
  if (op > kMaxOperation) fail(TxDecodeError::Kind::BadField, "operation code out of range");
  p.operation = static_cast<Operation>(op);
  while (!r.done()) p.signatures.push_back(read_sig(r));
  return p;
}

}  // namespace

std::string to_string(TxType t) {
  switch (t) {
    case TxType::DeviceRegistration: return "device-registration";
    case TxType::EntityRegistration: return "entity-registration";
    case TxType::Cancellation: return "cancellation";
    case TxType::UpdateRelease: return "update-release";
    case TxType::UpdateQuery: return "update-query";
    case TxType::DeviceStorage: return "device-storage";
    case TxType::PermissionRelease: return "permission-release";
    case TxType::PermissionRequest: return "permission-request";
    case TxType::LocalInteractive: return "local-interactive";
  }
  return "unknown";
}

std::string to_string(EntityClass c) {
  switch (c) {
    case EntityClass::CertificationCenter: return "certification-center";
    case EntityClass::Manufacturer: return "manufacturer";
    case EntityClass::RegionalNode: return "regional-node";
    case EntityClass::CloudProvider: return "cloud-provider";
    case EntityClass::DetectionCenter: return "detection-center";
  }
  return "unknown";
}

std::string to_string(Operation op) {
  switch (op) {
    case Operation::Read: return "read";
    case Operation::Write: return "write";
    case Operation::Revise: return "revise";
    case Operation::Query: return "query";
    case Operation::RealTimeRead: return "real-time-read";
  }
  return "unknown";
}

TxType type_of(const Transaction& tx) {
  return std::visit(overloaded{
                        [](const DeviceRegistrationTx&) { return TxType::DeviceRegistration; },
                        [](const EntityRegistrationTx&) { return TxType::EntityRegistration; },
                        [](const CancellationTx&) { return TxType::Cancellation; },
                        [](const UpdateReleaseTx&) { return TxType::UpdateRelease; },
                        [](const UpdateQueryTx&) { return TxType::UpdateQuery; },
                        [](const DeviceStorageTx&) { return TxType::DeviceStorage; },
                        [](const PermissionTx& p) { return p.is_request ? TxType::PermissionRequest : TxType::PermissionRelease; },
                        [](const LocalInteractiveTx&) { return TxType::LocalInteractive; },
                    },
                    tx);
}

Bytes encode(const Transaction& tx) {
  Bytes out = unsigned_prefix(tx);
  for (const Signature* s : signatures_of(tx)) append(out, s->view());
  return out;
}

Transaction decode(ByteView bytes) {
  if (bytes.empty()) fail(TxDecodeError::Kind::Truncated, "empty buffer");
  auto t = bytes[0];
  ByteReader r(bytes);
  switch (t) {
    case tag(TxType::DeviceRegistration): {
      expect_length(bytes, size::kDeviceRegistration, "device registration");
      r.u8();
      DeviceRegistrationTx out;
      out.manufacturer_id = r.u16();
      out.device_key_id = r.u32();
      out.signature = read_sig(r);
      return out;
    }
    case tag(TxType::EntityRegistration):
    case tag(TxType::Cancellation): {
      expect_length(bytes, size::kEntityRegistration, t == 2 ? "entity registration" : "cancellation");
      r.u8();
      auto cls = read_class(r);
      auto id = r.u16();
      auto key = r.u32();
      auto sig = read_sig(r);
      if (t == tag(TxType::EntityRegistration)) return EntityRegistrationTx{cls, id, key, sig};
      return CancellationTx{cls, id, key, sig};
    }
    case tag(TxType::UpdateRelease): {
      expect_length(bytes, size::kUpdateReleaseHeader, "update release");
      r.u8();
      UpdateReleaseTx out;
      out.manufacturer_id = r.u16();
      out.model_id = r.u16();
      out.signature = read_sig(r);
      return out;
    }
    case tag(TxType::UpdateQuery): {
      expect_length(bytes, size::kUpdateQuery, "update query");
      r.u8();
      UpdateQueryTx out;
      out.manufacturer_id = r.u16();
      out.model_id = r.u16();
      return out;
    }
    case tag(TxType::DeviceStorage): {
      expect_length(bytes, size::kDeviceStorage, "device storage");
      r.u8();
      DeviceStorageTx out;
      out.device_id = r.u32();
      out.data_number = r.u16();
      out.processing_method = r.u8();
      out.data_hash = Digest::from(r.raw(kDigestSize));
      out.signature = read_sig(r);
      return out;
    }
    case tag(TxType::PermissionRelease): return decode_permission(bytes, false);
    case tag(TxType::PermissionRequest): return decode_permission(bytes, true);
    case tag(TxType::LocalInteractive): {
      expect_length(bytes, size::kLocalInteractive, "local interactive");
      r.u8();
      LocalInteractiveTx out;
      out.rn_id = r.u16();
      out.merkle_root = Digest::from(r.raw(kDigestSize));
      out.batch_size = r.u16();
      out.signature = read_sig(r);
      return out;
    }
    default: fail(TxDecodeError::Kind::UnknownTag, "unknown transaction tag " + std::to_string(t));
  }
}

Bytes signing_bytes(const Transaction& tx, std::size_t signer_index) {
  Bytes out = unsigned_prefix(tx);
  if (const auto* u = std::get_if<UpdateReleaseTx>(&tx)) {
    append(out, hash(u->payload).view());
  } else if (const auto* p = std::get_if<PermissionTx>(&tx)) {
    if (signer_index > 0) {
      if (!p->cross_region() || signer_index > 1) throw EncodeError("permission: no such signer");
      append(out, p->signatures[0].view());
    }
  }
  return out;
}

std::size_t signature_count(const Transaction& tx) { return signatures_of(tx).size(); }

Bytes chain_bytes(const Transaction& tx) {
  Bytes out = encode(tx);
  if (const auto* u = std::get_if<UpdateReleaseTx>(&tx)) append(out, hash(u->payload).view());
  return out;
}

Transaction decode_chain_entry(ByteView bytes, std::optional<Digest>* payload_digest) {
  if (!bytes.empty() && bytes[0] == tag(TxType::UpdateRelease)) {
    expect_length(bytes, size::kUpdateReleaseHeader + kDigestSize, "update release chain entry");
    auto out = decode(bytes.first(size::kUpdateReleaseHeader));
    if (payload_digest) *payload_digest = Digest::from(bytes.subspan(size::kUpdateReleaseHeader));
    return out;
  }
  if (payload_digest) payload_digest->reset();
  return decode(bytes);
}

Bytes encode_package(const UpdateReleaseTx& tx) {
  ByteWriter w;
  w.raw(encode(tx)).blob(tx.payload);
  return std::move(w).take();
}

UpdateReleaseTx decode_package(ByteView bytes) {
  if (bytes.size() < size::kUpdateReleaseHeader) fail(TxDecodeError::Kind::Truncated, "update package: truncated");
  auto header = std::get<UpdateReleaseTx>(decode(bytes.first(size::kUpdateReleaseHeader)));
  ByteReader r(bytes.subspan(size::kUpdateReleaseHeader));
  try {
    header.payload = r.blob();
  } catch (const TruncatedInput&) {
    fail(TxDecodeError::Kind::Truncated, "update package: payload truncated");
  }
  if (!r.done()) fail(TxDecodeError::Kind::TrailingBytes, "update package: trailing bytes");
  return header;
}

Digest tx_digest(const Transaction& tx) { return hash(chain_bytes(tx)); }

std::string debug_line(const Transaction& tx) {
  std::ostringstream os;
  os << to_string(type_of(tx)) << " len=" << encode(tx).size();
  std::visit(overloaded{
                 [&](const DeviceRegistrationTx& t) {
                   os << " manufacturer=" << t.manufacturer_id << " device_key=" << std::hex << t.device_key_id << std::dec;
                 },
                 [&](const EntityRegistrationTx& t) {
                   os << " class=" << to_string(t.entity_class) << " entity=" << t.entity_id << " key=" << std::hex << t.key_id
                      << std::dec;
                 },
                 [&](const CancellationTx& t) {
                   os << " class=" << to_string(t.entity_class) << " entity=" << t.entity_id << " key=" << std::hex << t.key_id
                      << std::dec;
                 },
                 [&](const UpdateReleaseTx& t) {
                   os << " manufacturer=" << t.manufacturer_id << " model=" << t.model_id
                      << " payload_hash=" << hash(t.payload).hex();
                 },
                 [&](const UpdateQueryTx& t) { os << " manufacturer=" << t.manufacturer_id << " model=" << t.model_id; },
                 [&](const DeviceStorageTx& t) {
                   os << " device=" << std::hex << t.device_id << std::dec << " data=" << t.data_number
                      << " hash=" << t.data_hash.hex();
                 },
                 [&](const PermissionTx& t) {
                   os << " d1=" << std::hex << t.d1_id << " d2=" << t.d2_id << std::dec << " op=" << to_string(t.operation)
                      << " sigs=" << t.signatures.size();
                 },
                 [&](const LocalInteractiveTx& t) {
                   os << " rn=" << t.rn_id << " root=" << t.merkle_root.hex() << " batch=" << t.batch_size;
                 },
             },
             tx);
  os << " hex=" << to_hex(encode(tx));
  return os.str();
}

}  // namespace iotchain::tx

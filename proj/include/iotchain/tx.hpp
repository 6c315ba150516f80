#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "iotchain/crypto.hpp"

namespace iotchain::tx {

enum class TxType : std::uint8_t {
  DeviceRegistration = 1,
  EntityRegistration = 2,
  Cancellation = 3,
  UpdateRelease = 4,
  UpdateQuery = 5,
  DeviceStorage = 6,
  PermissionRelease = 7,
  PermissionRequest = 8,
  LocalInteractive = 9,
};

enum class EntityClass : std::uint8_t {
  CertificationCenter = 0,
  Manufacturer = 1,
  RegionalNode = 2,
  CloudProvider = 3,
  DetectionCenter = 4,
};

enum class Operation : std::uint8_t { Read = 0, Write = 1, Revise = 2, Query = 3, RealTimeRead = 4 };

std::string to_string(TxType t);
std::string to_string(EntityClass c);
std::string to_string(Operation op);

class EncodeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Decode failures are distinguished by kind so callers can tell a short
/// buffer from garbage.
class TxDecodeError : public std::runtime_error {
 public:
  enum class Kind { UnknownTag, Truncated, TrailingBytes, BadField };
  TxDecodeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct DeviceRegistrationTx {
  std::uint16_t manufacturer_id = 0;
  std::uint32_t device_key_id = 0;
  Signature signature;  // manufacturer
  bool operator==(const DeviceRegistrationTx&) const = default;
};

struct EntityRegistrationTx {
  EntityClass entity_class = EntityClass::Manufacturer;
  std::uint16_t entity_id = 0;
  std::uint32_t key_id = 0;
  Signature signature;  // CC, or the admitting RN for cloud providers
  bool operator==(const EntityRegistrationTx&) const = default;
};

struct CancellationTx {
  EntityClass entity_class = EntityClass::Manufacturer;
  std::uint16_t entity_id = 0;
  std::uint32_t key_id = 0;
  Signature signature;  // CC or DC
  bool operator==(const CancellationTx&) const = default;
};

/// The payload travels beside the 77-byte header and is bound to it through
/// the signature preimage.
struct UpdateReleaseTx {
  std::uint16_t manufacturer_id = 0;
  std::uint16_t model_id = 0;
  Signature signature;
  Bytes payload;
  bool operator==(const UpdateReleaseTx&) const = default;
};

struct UpdateQueryTx {
  std::uint16_t manufacturer_id = 0;
  std::uint16_t model_id = 0;
  bool operator==(const UpdateQueryTx&) const = default;
};

struct DeviceStorageTx {
  std::uint32_t device_id = 0;
  std::uint16_t data_number = 0;
  std::uint8_t processing_method = 0;
  Digest data_hash;
  Signature signature;  // device
  bool operator==(const DeviceStorageTx&) const = default;
};

/// Release and request share one layout. Zero signatures: same-region
/// release; one (device) signature: same-region request; two (RN of d1, then
/// RN of d2 over the first): cross-region release or request.
struct PermissionTx {
  bool is_request = false;
  std::uint32_t d1_id = 0;
  std::uint32_t d2_id = 0;
  Operation operation = Operation::Read;
  std::vector<Signature> signatures;

  bool cross_region() const { return signatures.size() == 2; }
  bool operator==(const PermissionTx&) const = default;
};

struct LocalInteractiveTx {
  std::uint16_t rn_id = 0;
  Digest merkle_root;
  std::uint16_t batch_size = 0;
  Signature signature;  // RN
  bool operator==(const LocalInteractiveTx&) const = default;
};

using Transaction = std::variant<DeviceRegistrationTx, EntityRegistrationTx, CancellationTx, UpdateReleaseTx,
                                 UpdateQueryTx, DeviceStorageTx, PermissionTx, LocalInteractiveTx>;

TxType type_of(const Transaction& tx);

/// Exact wire sizes, tag byte included.
namespace size {
inline constexpr std::size_t kDeviceRegistration = 79;
inline constexpr std::size_t kEntityRegistration = 80;
inline constexpr std::size_t kCancellation = 80;
inline constexpr std::size_t kUpdateReleaseHeader = 77;
inline constexpr std::size_t kUpdateQuery = 5;
inline constexpr std::size_t kDeviceStorage = 112;
inline constexpr std::size_t kPermissionLocalRelease = 10;
inline constexpr std::size_t kPermissionLocalRequest = 82;
inline constexpr std::size_t kPermissionCrossRegion = 154;
inline constexpr std::size_t kLocalInteractive = 109;
}  // namespace size

/// Bit-exact wire encoding. UpdateRelease encodes only its header.
Bytes encode(const Transaction& tx);
/// Inverse of encode; consumes exactly the whole buffer.
Transaction decode(ByteView bytes);

/// Message passed to sign/verify. For cross-region permissions `signer_index`
/// selects the preimage of the first (0) or second (1) endorsement.
Bytes signing_bytes(const Transaction& tx, std::size_t signer_index = 0);

/// Number of signature fields the transaction carries.
std::size_t signature_count(const Transaction& tx);

/// Chain entry: encode(tx), plus SHA-256(payload) for update releases.
Bytes chain_bytes(const Transaction& tx);
/// Inverse of chain_bytes. The payload of an update release is not restored.
Transaction decode_chain_entry(ByteView bytes, std::optional<Digest>* payload_digest = nullptr);

/// Header plus length-prefixed payload, for shipping a full update.
Bytes encode_package(const UpdateReleaseTx& tx);
UpdateReleaseTx decode_package(ByteView bytes);

Digest tx_digest(const Transaction& tx);

/// One-line hex rendering for reports.
std::string debug_line(const Transaction& tx);

}  // namespace iotchain::tx

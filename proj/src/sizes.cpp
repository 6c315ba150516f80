#include "iotchain/sizes.hpp"

namespace iotchain {

std::vector<SizeRow> size_table() {
  using namespace tx;
  DeterministicRng rng(0x73697a6573);
  auto k = generate_keypair(rng);
  auto signed_tx = [&](Transaction t) {
    for (std::size_t i = 0; i < signature_count(t); ++i) {
      auto sig = sign(k.secret_key, signing_bytes(t, i));
      std::visit([&](auto& x) {
        if constexpr (requires { x.signatures; }) x.signatures[i] = sig;
        else if constexpr (requires { x.signature; }) x.signature = sig;
      }, t);
    }
    return t;
  };
  auto row = [&](std::string name, const Transaction& t, std::optional<std::uint16_t> from = std::nullopt,
                 std::optional<std::uint16_t> to = std::nullopt) {
    auto s = signed_tx(t);
    return SizeRow{std::move(name), ledger::classify(s, from, to), encode(s).size()};
  };

  Bytes firmware(4096, 0xA5);
  PermissionTx release{false, 0x00010001, 0x00010002, Operation::Read, {}};
  PermissionTx request{true, 0x00010001, 0x00010002, Operation::Read, {Signature{}}};
  PermissionTx cross_release{false, 0x00010001, 0x00010003, Operation::Read, {Signature{}, Signature{}}};
  PermissionTx cross_request{true, 0x00010001, 0x00010003, Operation::Read, {Signature{}, Signature{}}};
  return {
      row("device-registration", DeviceRegistrationTx{1, 0x00010001, {}}),
      row("update-release", UpdateReleaseTx{1, 1, {}, firmware}, std::nullopt, 2),
      row("update-query", UpdateQueryTx{1, 1}),
      row("permission-release", release, 1, 1),
      row("permission-request", request, 1, 1),
      row("entity-registration", EntityRegistrationTx{EntityClass::Manufacturer, 1, 0x40000001, {}}),
      row("cancellation", CancellationTx{EntityClass::Manufacturer, 1, 0x40000001, {}}),
      row("update-release", UpdateReleaseTx{1, 1, {}, firmware}),
      row("device-storage", DeviceStorageTx{0x00010001, 1, 0, hash(firmware), {}}),
      row("permission-release-cross-region", cross_release, 1, 2),
      row("permission-request-cross-region", cross_request, 1, 2),
      row("local-interactive", LocalInteractiveTx{1, hash(firmware), 16, {}}),
  };
}

std::string format(const SizeRow& r) {
  return r.name + ", " + ledger::to_string(r.mode) + ", " + std::to_string(r.bytes);
}

}  // namespace iotchain

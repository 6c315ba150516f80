#pragma once

// Small helpers shared by the role implementations.

#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "iotchain/roles.hpp"

namespace iotchain::roles::detail {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline void post(Context& ctx, ActorId to, std::string_view type, Bytes payload, std::string detail = {}) {
  ctx.send(to, std::string(type), std::move(payload), std::move(detail));
}

inline std::string as_text(ByteView v) { return std::string(v.begin(), v.end()); }

inline std::string dev_hex(std::uint32_t id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", id);
  return buf;
}

/// Resolves an entity's current public key through the chain tables.
inline const PublicKey* entity_key(const ledger::RnTables& t, const ledger::KeyDirectory& keys, EntityClass c,
                                   std::uint16_t id) {
  auto k = t.entity_key(c, id);
  const auto* rec = k ? keys.find(*k) : nullptr;
  return rec ? &rec->public_key : nullptr;
}

EntityClass parse_class(std::string_view s);
Operation parse_operation(std::string_view s);
std::uint64_t arg_u64(const Args& a, const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt);

}  // namespace iotchain::roles::detail

#include <algorithm>
#include <sstream>

#include "roles_util.hpp"

namespace iotchain::roles {

Args parse_args(std::string_view text) {
  Args out;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) throw sim::ConfigError("bad argument '" + tok + "'");
    out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

std::string format_args(const Args& args) {
  std::string out;
  for (const auto& [k, v] : args) {
    if (v.find_first_of(" \n") != std::string::npos) throw sim::ConfigError("argument value with whitespace: " + k);
    out += (out.empty() ? "" : " ") + k + "=" + v;
  }
  return out;
}

Bytes command_payload(const Args& args) { return to_bytes(format_args(args)); }

Bytes tx_wire(const Transaction& t) {
  if (const auto* u = std::get_if<tx::UpdateReleaseTx>(&t)) return tx::encode_package(*u);
  return tx::encode(t);
}

Transaction tx_unwire(ByteView bytes) {
  if (!bytes.empty() && bytes[0] == static_cast<std::uint8_t>(tx::TxType::UpdateRelease)) return tx::decode_package(bytes);
  return tx::decode(bytes);
}

std::optional<std::size_t> Topology::replica_of(ActorId a) const {
  auto it = std::find(rns.begin(), rns.end(), a);
  if (it == rns.end()) return std::nullopt;
  return static_cast<std::size_t>(it - rns.begin());
}

ActorId Topology::rn_of_region(std::uint16_t region) const {
  if (region == 0 || region > rns.size()) return 0;
  return rns[region - 1];
}

namespace detail {

EntityClass parse_class(std::string_view s) {
  for (auto c : {EntityClass::CertificationCenter, EntityClass::Manufacturer, EntityClass::RegionalNode,
                 EntityClass::CloudProvider, EntityClass::DetectionCenter})
    if (tx::to_string(c) == s) return c;
  throw sim::ConfigError("unknown entity class '" + std::string(s) + "'");
}

Operation parse_operation(std::string_view s) {
  for (auto op : {Operation::Read, Operation::Write, Operation::Revise, Operation::Query, Operation::RealTimeRead})
    if (tx::to_string(op) == s) return op;
  throw sim::ConfigError("unknown operation '" + std::string(s) + "'");
}

std::uint64_t arg_u64(const Args& a, const std::string& key, std::optional<std::uint64_t> fallback) {
  auto it = a.find(key);
  if (it == a.end()) {
    if (fallback) return *fallback;
    throw sim::ConfigError("missing argument " + key);
  }
  try {
    std::size_t used = 0;
    auto v = std::stoull(it->second, &used, 0);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::logic_error&) {
    throw sim::ConfigError("argument " + key + " is not a number: " + it->second);
  }
}

}  // namespace detail

ChainFollower::ChainFollower(const Shared& shared)
    : shared_(shared), ledger_(shared.genesis), tables_(ledger::replay(ledger_)) {}

std::vector<std::uint64_t> ChainFollower::on_announce(ActorId from, ByteView payload) {
  std::vector<std::uint64_t> adopted;
  if (!shared_.topo.replica_of(from)) return adopted;
  auto block = ledger::decode_block(payload);
  if (block.height <= ledger_.height()) return adopted;
  auto& slot = votes_[block.height][block.block_hash];
  slot.first.insert(from);
  if (slot.first.size() == 1) slot.second = std::move(block);

  std::size_t need = static_cast<std::size_t>(shared_.consensus.f()) + 1;
  for (;;) {
    auto it = votes_.find(ledger_.height() + 1);
    if (it == votes_.end()) break;
    const ledger::Block* agreed = nullptr;
    for (const auto& [h, v] : it->second)
      if (v.first.size() >= need && v.second.prev_hash == ledger_.tip().block_hash) agreed = &v.second;
    if (!agreed) break;
    ledger_.append_block(*agreed);
    const auto& b = ledger_.tip();
    for (const auto& t : b.txs) {
      confirmed_.emplace(tx::tx_digest(t), b.height);
      if (ledger::validate(t, tables_, shared_.keys).ok()) ledger::apply_to_tables(tables_, t);
    }
    adopted.push_back(b.height);
    votes_.erase(it);
  }
  return adopted;
}

std::optional<std::uint64_t> ChainFollower::confirmed_at(const Digest& tx_id) const {
  auto it = confirmed_.find(tx_id);
  if (it == confirmed_.end()) return std::nullopt;
  return it->second;
}

}  // namespace iotchain::roles

#include "iotchain/scenarios.hpp"

namespace iotchain::scen {

namespace {

constexpr ActorId kCcActor = 1, kDcActor = 2, kRnBase = 10, kMfrBase = 100, kCloudBase = 200, kDeviceBase = 1000,
                  kForgedBase = 5000;
constexpr std::uint32_t kGenesisKeys = 0x40000000u, kProviderKeys = 0x42000000u;

}  // namespace

World::World(const WorldConfig& config, std::uint64_t seed) : config_(config), shared_(std::make_shared<roles::Shared>()) {
  if (config_.rns < 4) throw sim::ConfigError("at least 4 regional nodes are needed to tolerate one fault");
  if (config_.rns > 200 || config_.manufacturers > 90 || config_.providers > 90)
    throw sim::ConfigError("topology too large");
  config_.consensus.n = config_.rns;
  net_ = std::make_unique<sim::Network>(config_.link, seed);

  DeterministicRng rng(seed ^ 0x776F726C64ULL);
  auto& keys = shared_->keys;
  std::uint32_t next_key = 0;
  auto publish = [&](const KeyPair& kp) {
    std::uint32_t id = kGenesisKeys | next_key++;
    keys.publish(id, ledger::KeyRecord{kp.public_key, std::nullopt, std::nullopt});
    return id;
  };

  auto cc_key = generate_keypair(rng);
  auto cc_id = publish(cc_key);
  auto dc_key = generate_keypair(rng);
  std::vector<tx::EntityRegistrationTx> members;
  members.push_back(ledger::make_entity_registration(cc_key, tx::EntityClass::DetectionCenter, 0, publish(dc_key)));
  std::vector<KeyPair> rn_keys;
  for (std::uint16_t r = 1; r <= config_.rns; ++r) {
    rn_keys.push_back(generate_keypair(rng));
    members.push_back(ledger::make_entity_registration(cc_key, tx::EntityClass::RegionalNode, r, publish(rn_keys.back())));
  }
  std::vector<KeyPair> mfr_keys;
  for (std::uint16_t m = 1; m <= config_.manufacturers; ++m) {
    mfr_keys.push_back(generate_keypair(rng));
    if (config_.certified_manufacturers)
      members.push_back(ledger::make_entity_registration(cc_key, tx::EntityClass::Manufacturer, m, publish(mfr_keys.back())));
  }
  shared_->genesis = ledger::make_genesis(cc_key, cc_id, members);
  shared_->consensus = config_.consensus;
  shared_->engine = config_.engine;

  auto& topo = shared_->topo;
  topo.cc = kCcActor;
  topo.dc = kDcActor;
  topo.subscribers = {kCcActor, kDcActor};
  for (std::uint16_t r = 1; r <= config_.rns; ++r) topo.rns.push_back(kRnBase + r - 1);
  for (std::uint16_t p = 1; p <= config_.providers; ++p) {
    topo.providers[p] = kCloudBase + p;
    topo.subscribers.push_back(kCloudBase + p);
  }

  auto add = [&](ActorId id, std::string name, sim::Tier tier, std::unique_ptr<sim::Actor> a) {
    ids_[name] = id;
    net_->add(id, std::move(name), tier, std::move(a));
  };

  add(kCcActor, "cc", sim::Tier::Service, std::make_unique<roles::CertificationCenter>(shared_, cc_key, rng.next()));
  std::vector<Bytes> markers;
  for (const auto& m : config_.markers) markers.push_back(to_bytes(m));
  add(kDcActor, "dc", sim::Tier::Service,
      std::make_unique<roles::DetectionCenter>(shared_, dc_key, std::move(markers), config_.report_threshold));
  for (std::uint16_t r = 1; r <= config_.rns; ++r)
    add(kRnBase + r - 1, "rn" + std::to_string(r), sim::Tier::Node,
        std::make_unique<roles::RegionalNode>(shared_, static_cast<std::uint16_t>(r - 1), rn_keys[r - 1],
                                              roles::RegionalNode::Options{config_.flush_interval, config_.flush_size}));

  ActorId next_device = kDeviceBase;
  std::size_t k = 0;
  for (std::uint16_t m = 1; m <= config_.manufacturers; ++m) {
    std::vector<roles::Manufacturer::Product> line;
    std::uint16_t serial = 0;
    for (std::uint16_t r = 1; r <= config_.rns; ++r) {
      for (std::uint16_t i = 0; i < config_.devices_per_region; ++i) {
        ActorId a = next_device++;
        ++serial;
        line.push_back({a, serial, r});
        DeviceInfo info{"d" + std::to_string(++k), a, (static_cast<std::uint32_t>(m) << 16) | serial, r, m, false};
        roles::Device::Config dc{r, 1, config_.query_interval, config_.retry_interval, config_.report_threshold};
        add(a, info.name, sim::Tier::Device, std::make_unique<roles::Device>(shared_, dc));
        devices_.push_back(std::move(info));
      }
    }
    auto mfr = std::make_unique<roles::Manufacturer>(shared_, m, std::move(line), rng.next());
    if (config_.certified_manufacturers) mfr->install_key(mfr_keys[m - 1]);
    add(kMfrBase + m, "m" + std::to_string(m), sim::Tier::Service, std::move(mfr));
    topo.subscribers.push_back(kMfrBase + m);
  }

  for (std::uint16_t p = 1; p <= config_.providers; ++p) {
    auto kp = generate_keypair(rng);
    keys.publish(kProviderKeys | p, ledger::KeyRecord{kp.public_key, std::nullopt, std::nullopt});
    auto region = static_cast<std::uint16_t>((p - 1) % config_.rns + 1);
    add(kCloudBase + p, "cloud" + std::to_string(p), sim::Tier::Service,
        std::make_unique<roles::CloudProvider>(shared_, p, region, std::move(kp), kProviderKeys | p));
  }

  for (std::uint16_t f = 1; f <= config_.forged_devices; ++f) {
    auto dev = std::make_unique<roles::Device>(
        shared_, roles::Device::Config{1, 1, config_.query_interval, config_.retry_interval, config_.report_threshold});
    auto serial = static_cast<std::uint16_t>(0x8000 + f);
    dev->forge_identity(rng, 1, serial);
    DeviceInfo info{"x" + std::to_string(f), kForgedBase + f, (1u << 16) | serial, 1, 1, true};
    add(info.actor, info.name, sim::Tier::Device, std::move(dev));
    devices_.push_back(std::move(info));
  }
}

ActorId World::id(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw sim::ConfigError("unknown actor '" + name + "'");
  return it->second;
}

const DeviceInfo& World::device_info(const std::string& name) const {
  for (const auto& d : devices_)
    if (d.name == name) return d;
  throw sim::ConfigError("unknown device '" + name + "'");
}

std::vector<std::string> World::rn_names() const {
  std::vector<std::string> out;
  for (std::uint16_t r = 1; r <= config_.rns; ++r) out.push_back("rn" + std::to_string(r));
  return out;
}

roles::RegionalNode& World::rn(std::uint16_t region) {
  return net_->actor_as<roles::RegionalNode>(shared_->topo.rn_of_region(region));
}
const roles::RegionalNode& World::rn(std::uint16_t region) const {
  return net_->actor_as<roles::RegionalNode>(shared_->topo.rn_of_region(region));
}
roles::Device& World::device(const std::string& name) { return net_->actor_as<roles::Device>(device_info(name).actor); }
const roles::Device& World::device(const std::string& name) const {
  return net_->actor_as<roles::Device>(device_info(name).actor);
}
const roles::Manufacturer& World::manufacturer(std::uint16_t id) const {
  return net_->actor_as<roles::Manufacturer>(kMfrBase + id);
}
const roles::CloudProvider& World::provider(std::uint16_t id) const {
  return net_->actor_as<roles::CloudProvider>(kCloudBase + id);
}
const roles::CertificationCenter& World::cc() const { return net_->actor_as<roles::CertificationCenter>(kCcActor); }
const roles::DetectionCenter& World::dc() const { return net_->actor_as<roles::DetectionCenter>(kDcActor); }

void World::command(Time at, const std::string& actor, const std::string& type, Args args) {
  for (auto& [k, v] : args) {
    if (v.starts_with("id:")) v = std::to_string(device_info(v.substr(3)).device_id);
    else if (v.starts_with("actor:")) v = std::to_string(id(v.substr(6)));
  }
  net_->command(at, id(actor), type, roles::command_payload(args));
}

void World::bootstrap() {
  Time provision = 0;
  if (!config_.certified_manufacturers) {
    for (std::uint16_t m = 1; m <= config_.manufacturers; ++m)
      command(0, "m" + std::to_string(m), "apply", {{"evidence", "factory-audit"}});
    provision = 3000;
  }
  for (std::uint16_t m = 1; m <= config_.manufacturers; ++m) command(provision, "m" + std::to_string(m), "provision");
  for (const auto& d : devices_) command(provision + 200, d.name, "register");
  for (std::uint16_t p = 1; p <= config_.providers; ++p) command(200, "cloud" + std::to_string(p), "register");
}

}  // namespace iotchain::scen

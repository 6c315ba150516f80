#pragma once

// A small signed world for ledger-level tests: CC, DC, two regional nodes,
// two manufacturers and a handful of certified devices.

#include <map>

#include "iotchain/ledger.hpp"

namespace fixture {

using namespace iotchain;
using namespace iotchain::ledger;
using tx::EntityClass;

struct World {
  DeterministicRng rng{77};
  KeyDirectory keys;
  KeyPair cc, dc;
  std::map<std::uint16_t, KeyPair> rns, mfrs;
  std::map<std::uint32_t, KeyPair> devices;
  std::map<std::uint32_t, std::uint32_t> key_ids;  // (class<<16|id) -> key id
  std::uint32_t next_key = 1;

  static std::uint32_t slot(EntityClass c, std::uint16_t id) { return (static_cast<std::uint32_t>(c) << 16) | id; }

  std::uint32_t publish_entity(const KeyPair& kp, EntityClass c, std::uint16_t id) {
    std::uint32_t k = 0x40000000u | next_key++;
    keys.publish(k, KeyRecord{kp.public_key, std::nullopt, std::nullopt});
    key_ids[slot(c, id)] = k;
    return k;
  }

  World() {
    cc = generate_keypair(rng);
    dc = generate_keypair(rng);
    std::uint32_t cc_key = publish_entity(cc, EntityClass::CertificationCenter, 0);
    std::vector<tx::EntityRegistrationTx> members;
    members.push_back(make_entity_registration(cc, EntityClass::DetectionCenter, 0,
                                               publish_entity(dc, EntityClass::DetectionCenter, 0)));
    for (std::uint16_t r : {1, 2}) {
      rns[r] = generate_keypair(rng);
      members.push_back(make_entity_registration(cc, EntityClass::RegionalNode, r,
                                                 publish_entity(rns[r], EntityClass::RegionalNode, r)));
    }
    for (std::uint16_t m : {7, 8}) {
      mfrs[m] = generate_keypair(rng);
      members.push_back(make_entity_registration(cc, EntityClass::Manufacturer, m,
                                                 publish_entity(mfrs[m], EntityClass::Manufacturer, m)));
    }
    genesis = make_genesis(cc, cc_key, members);
  }

  Block genesis;

  std::uint32_t key_of(EntityClass c, std::uint16_t id) const { return key_ids.at(slot(c, id)); }

  // Certified device key, published with its home region.
  std::uint32_t make_device(std::uint16_t mid, std::uint16_t serial, std::uint16_t region) {
    auto kp = generate_keypair(rng);
    std::uint32_t id = (static_cast<std::uint32_t>(mid) << 16) | serial;
    keys.publish(id, KeyRecord{kp.public_key, issue_certificate(mfrs.at(mid), mid, kp.public_key), region});
    devices[id] = kp;
    return id;
  }

  tx::DeviceRegistrationTx register_device(std::uint32_t id) {
    auto mid = static_cast<std::uint16_t>(id >> 16);
    tx::DeviceRegistrationTx t{mid, id, {}};
    t.signature = sign(mfrs.at(mid).secret_key, tx::signing_bytes(t));
    return t;
  }

  tx::UpdateReleaseTx release(const KeyPair& signer, std::uint16_t mid, std::uint16_t model, std::string payload) {
    tx::UpdateReleaseTx u{mid, model, {}, to_bytes(payload)};
    u.signature = sign(signer.secret_key, tx::signing_bytes(u));
    return u;
  }

  tx::CancellationTx cancel(const KeyPair& signer, EntityClass c, std::uint16_t id) {
    tx::CancellationTx t{c, id, key_of(c, id), {}};
    t.signature = sign(signer.secret_key, tx::signing_bytes(t));
    return t;
  }

  tx::DeviceStorageTx storage(std::uint32_t dev, std::uint16_t num, ByteView data) {
    tx::DeviceStorageTx t{dev, num, 0, hash(data), {}};
    t.signature = sign(devices.at(dev).secret_key, tx::signing_bytes(t));
    return t;
  }

  tx::PermissionTx cross_region(bool request, std::uint32_t d1, std::uint16_t r1, std::uint32_t d2, std::uint16_t r2,
                                tx::Operation op) {
    tx::PermissionTx p{request, d1, d2, op, {Signature{}, Signature{}}};
    p.signatures[0] = sign(rns.at(r1).secret_key, tx::signing_bytes(p, 0));
    p.signatures[1] = sign(rns.at(r2).secret_key, tx::signing_bytes(p, 1));
    return p;
  }

  tx::LocalInteractiveTx local_root(std::uint16_t rn, const Digest& root, std::uint16_t n) {
    tx::LocalInteractiveTx l{rn, root, n, {}};
    l.signature = sign(rns.at(rn).secret_key, tx::signing_bytes(l));
    return l;
  }
};

}  // namespace fixture

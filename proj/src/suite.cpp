#include "iotchain/scenarios.hpp"

namespace iotchain::scen {

namespace {

// Default topology: rn1..rn4, one manufacturer, two devices per region:
// d1,d2 in region 1, d3,d4 in region 2, d5,d6 in region 3, d7,d8 in region 4.

AssertionSpec A(std::string name, Args args = {}) { return {std::move(name), std::move(args)}; }
Step S(Time at, std::string actor, std::string command, Args args = {}) {
  return {at, std::move(actor), std::move(command), std::move(args)};
}
FaultSpec F(Time at, std::string kind, std::string target, Time duration = 0, std::string args = {}) {
  return {at, std::move(kind), std::move(target), duration, std::move(args), {}};
}

std::vector<AssertionSpec> safety() {
  return {A("audit-clean"), A("no-forged-confirmed"), A("cancellation-monotonic"), A("updates-authentic"),
          A("sessions-authorized")};
}

Scenario dos_attack() {
  Scenario s;
  s.name = "dos-attack";
  s.description = "One regional node is flooded for 10 s while an update is released; the rest keep deciding and serving it.";
  s.horizon = 40000;
  s.faults = {F(5000, "dos", "rn1", 10000)};
  s.steps = {S(6000, "m1", "release", {{"model", "1"}, {"payload", "fw-2.1"}})};
  s.assertions = {A("blocks-during", {{"from", "5500"}, {"to", "15000"}, {"exclude", "rn1"}}),
                  A("note-count", {{"kind", "installed"}, {"actor", "d3,d4,d5,d6,d7,d8"}, {"before", "15000"}, {"min", "6"}}),
                  A("installed", {{"payload", "fw-2.1"}}),
                  A("ledgers-identical")};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario malicious_rn() {
  Scenario s;
  s.name = "malicious-rn";
  s.description = "rn2 refuses every client transaction and injects forged ones into consensus; its users report it and the DC cancels it.";
  s.horizon = 30000;
  s.faults = {F(0, "byzantine", "rn2", 0, "reject-clients|forge-inject")};
  s.steps = {S(20000, "m1", "release", {{"model", "1"}, {"payload", "fw-after-cancel"}})};
  s.assertions = {A("note-count", {{"kind", "report"}, {"actor", "d3,d4"}, {"min", "1"}}),
                  A("finding", {{"kind", "rejecting"}}),
                  A("entity-cancelled", {{"class", "regional-node"}, {"id", "2"}, {"exclude", "rn2"}}),
                  A("devices-registered", {{"exclude_regions", "2"}}),
                  A("installed", {{"payload", "fw-after-cancel"}, {"exclude_regions", "2"}}),
                  A("ledgers-identical", {{"exclude", "rn2"}})};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario identity_forgery() {
  Scenario s;
  s.name = "identity-forgery";
  s.description = "Attacker devices with self-made keys and a fake manufacturer signature try to register, store and request access.";
  s.horizon = 20000;
  s.world.forged_devices = 2;
  s.steps = {S(5000, "x1", "store", {{"number", "1"}, {"data", "spoofed"}}),
             S(5000, "x2", "request", {{"peer", "id:d1"}, {"op", "read"}})};
  s.assertions = {A("not-registered"),
                  A("note-count", {{"kind", "rejected"}, {"actor", "x1,x2"}, {"min", "4"}}),
                  A("devices-registered"),
                  A("no-finding"),
                  A("entity-active", {{"class", "regional-node"}, {"id", "1"}}),
                  A("ledgers-identical")};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario malicious_cloud() {
  Scenario s;
  s.name = "malicious-cloud";
  s.description = "The cloud provider flips a byte of one stored record; the owner detects it on retrieval and the DC cancels the provider.";
  s.horizon = 25000;
  s.faults = {F(3000, "tamper", "cloud1", 0, "device=d1 number=1 byte=3")};
  s.steps = {S(4000, "d1", "store", {{"number", "1"}, {"data", "reading-0001"}, {"provider", "1"}}),
             S(4000, "d3", "store", {{"number", "1"}, {"data", "reading-0003"}, {"provider", "1"}}),
             S(10000, "d1", "retrieve", {{"number", "1"}}),
             S(10000, "d3", "retrieve", {{"number", "1"}})};
  s.assertions = {A("note-count", {{"kind", "integrity-violation"}, {"actor", "d1"}, {"min", "1"}}),
                  A("note-count", {{"kind", "integrity-ok"}, {"actor", "d3"}, {"min", "1"}}),
                  A("note-count", {{"kind", "integrity-violation"}, {"actor", "d3"}, {"min", "0"}, {"max", "0"}}),
                  A("finding", {{"kind", "tampering"}}),
                  A("entity-cancelled", {{"class", "cloud-provider"}, {"id", "1"}}),
                  A("ledgers-identical")};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario malicious_manufacturer() {
  Scenario s;
  s.name = "malicious-manufacturer";
  s.description = "m2 ships an update carrying a malware marker; the DC spots it on chain and cancels m2, whose later releases are refused.";
  s.horizon = 30000;
  s.world.manufacturers = 2;
  s.steps = {S(4000, "m2", "release", {{"model", "1"}, {"payload", "fw-MALWARE-dropper"}}),
             S(4000, "m1", "release", {{"model", "1"}, {"payload", "fw-1.1"}}),
             S(15000, "m2", "release", {{"model", "1"}, {"payload", "fw-2.0"}}),
             S(15000, "m2", "provision")};
  s.assertions = {A("finding", {{"kind", "malware"}}),
                  A("entity-cancelled", {{"class", "manufacturer"}, {"id", "2"}}),
                  A("entity-active", {{"class", "manufacturer"}, {"id", "1"}}),
                  A("installed", {{"payload", "fw-1.1"}, {"devices", "d1,d2,d3,d4,d5,d6,d7,d8"}}),
                  A("not-installed", {{"payload", "fw-2.0"}}),
                  A("note-count", {{"kind", "provision-refused"}, {"actor", "m2"}, {"min", "1"}, {"max", "1"}}),
                  A("tx-count", {{"type", "cancellation"}, {"size", "80"}, {"min", "1"}, {"max", "1"}}),
                  A("ledgers-identical")};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario pbft_byzantine() {
  Scenario s;
  s.name = "pbft-fault-tolerance";
  s.description = "n=4 with the initial primary equivocating and forging; the three honest nodes agree and confirm every valid transaction.";
  s.horizon = 30000;
  s.faults = {F(0, "byzantine", "rn1", 0, "equivocate|forge-inject")};
  s.steps = {S(5000, "d3", "store", {{"number", "1"}, {"data", "t-3"}}), S(5000, "d5", "store", {{"number", "1"}, {"data", "t-5"}}),
             S(5000, "d7", "store", {{"number", "1"}, {"data", "t-7"}}),
             S(6000, "m1", "release", {{"model", "1"}, {"payload", "fw-bft"}})};
  s.assertions = {A("ledgers-identical", {{"exclude", "rn1"}}),
                  A("devices-registered", {{"exclude_regions", "1"}}),
                  A("note-count", {{"kind", "storage-confirmed"}, {"actor", "d3,d5,d7"}, {"min", "3"}}),
                  A("installed", {{"payload", "fw-bft"}, {"exclude_regions", "1"}})};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario pbft_crash() {
  Scenario s;
  s.name = "pbft-fault-tolerance-crash";
  s.description = "n=7 with f=2 nodes crashing, the first two primaries among them; the five survivors keep agreeing.";
  s.horizon = 40000;
  s.world.rns = 7;
  s.world.devices_per_region = 1;
  s.faults = {F(6000, "crash", "rn1"), F(6000, "crash", "rn2")};
  s.steps = {S(8000, "d3", "store", {{"number", "1"}, {"data", "c-3"}}), S(8000, "d5", "store", {{"number", "1"}, {"data", "c-5"}}),
             S(8000, "d7", "store", {{"number", "1"}, {"data", "c-7"}}),
             S(9000, "m1", "release", {{"model", "1"}, {"payload", "fw-crash"}})};
  s.assertions = {A("ledgers-identical", {{"exclude", "rn1,rn2"}}),
                  A("devices-registered"),
                  A("note-count", {{"kind", "storage-confirmed"}, {"actor", "d3,d5,d7"}, {"min", "3"}}),
                  A("installed", {{"payload", "fw-crash"}, {"exclude_regions", "1,2"}})};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario update_anti_dos() {
  Scenario s;
  s.name = "update-anti-dos";
  s.description = "The manufacturer is flooded right after releasing; devices still fetch the update from their regional nodes.";
  s.horizon = 30000;
  s.steps = {S(4000, "m1", "release", {{"model", "1"}, {"payload", "fw-3.0"}})};
  s.faults = {F(4500, "dos", "m1", 30000)};
  s.assertions = {A("installed", {{"payload", "fw-3.0"}}),
                  A("note-count", {{"kind", "installed"}, {"after", "4500"}, {"min", "8"}}),
                  A("ledgers-identical")};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario storage_integrity() {
  Scenario s;
  s.name = "storage-integrity";
  s.description = "Records stored with two providers, one of which alters a record; only that record fails its check. Local storage leaves no chain footprint.";
  s.horizon = 25000;
  s.world.providers = 2;
  s.faults = {F(3000, "tamper", "cloud1", 0, "device=d1 number=2 byte=0")};
  s.steps = {S(4000, "d1", "store", {{"number", "1"}, {"data", "alpha"}, {"provider", "1"}}),
             S(4000, "d1", "store", {{"number", "2"}, {"data", "bravo"}, {"provider", "1"}}),
             S(4000, "d3", "store", {{"number", "1"}, {"data", "charlie"}, {"provider", "2"}}),
             S(4000, "d5", "store-local", {{"number", "1"}, {"data", "delta"}}),
             S(11000, "d1", "retrieve", {{"number", "1"}}),
             S(11000, "d1", "retrieve", {{"number", "2"}}),
             S(11000, "d3", "retrieve", {{"number", "1"}})};
  s.assertions = {A("note-count", {{"kind", "integrity-violation"}, {"min", "1"}, {"max", "1"}, {"actor", "d1"}}),
                  A("note-count", {{"kind", "integrity-ok"}, {"min", "2"}, {"max", "2"}}),
                  A("finding", {{"kind", "tampering"}}),
                  A("tx-count", {{"type", "device-storage"}, {"size", "112"}, {"min", "3"}, {"max", "3"}}),
                  A("note-count", {{"kind", "stored-local"}, {"actor", "d5"}}),
                  A("ledgers-identical")};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario privacy_split() {
  Scenario s;
  s.name = "privacy-split";
  s.description = "Registrations, queries, same-region permissions, a regional release and a provider sign-up stay inside their regions; only roots reach the chain.";
  s.horizon = 20000;
  s.steps = {S(4000, "d1", "grant", {{"peer", "id:d2"}, {"op", "read"}}),
             S(4000, "m1", "release", {{"model", "1"}, {"payload", "fw-r2"}, {"regions", "2"}}),
             S(8000, "d1", "request", {{"peer", "id:d2"}, {"op", "read"}})};
  s.assertions = {A("privacy-split"),
                  A("session", {{"a", "d1"}, {"b", "d2"}}),
                  A("installed", {{"payload", "fw-r2"}, {"devices", "d3,d4"}}),
                  A("not-installed", {{"payload", "fw-r2"}, {"exclude_regions", "2"}}),
                  A("tx-count", {{"type", "update-release"}, {"min", "0"}, {"max", "0"}}),
                  A("ledgers-identical")};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario lightweight_split() {
  Scenario s;
  s.name = "lightweight-split";
  s.description = "Devices in different regions obtain a session through their nodes; devices only ever talk to their node with small transactions.";
  s.horizon = 25000;
  s.steps = {S(4000, "d1", "grant", {{"peer", "id:d3"}, {"op", "read"}}),
             S(9000, "d1", "request", {{"peer", "id:d3"}, {"op", "read"}}),
             S(9000, "d5", "request", {{"peer", "id:d7"}, {"op", "write"}}),
             S(9000, "d2", "store", {{"number", "1"}, {"data", "light"}}),
             S(16000, "d1", "send-data", {{"peer", "id:d3"}, {"actor", "actor:d3"}, {"data", "hello"}}),
             S(16000, "d5", "send-data", {{"peer", "id:d7"}, {"actor", "actor:d7"}, {"data", "sneak"}})};
  s.assertions = {A("lightweight-split"),
                  A("session", {{"a", "d1"}, {"b", "d3"}}),
                  A("no-session", {{"a", "d5"}, {"b", "d7"}}),
                  A("note-count", {{"kind", "denied"}, {"actor", "d5"}}),
                  A("note-count", {{"kind", "data-accepted"}, {"actor", "d3"}}),
                  A("note-count", {{"kind", "data-rejected"}, {"actor", "d7"}}),
                  A("tx-count", {{"type", "permission-release-cross-region"}, {"size", "154"}, {"min", "1"}}),
                  A("tx-count", {{"type", "permission-request-cross-region"}, {"size", "154"}, {"min", "1"}}),
                  A("ledgers-identical")};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

Scenario certification() {
  Scenario s;
  s.name = "certification";
  s.description = "A manufacturer applies to the CC, is certified on chain, then provisions devices that register normally.";
  s.horizon = 20000;
  s.world.certified_manufacturers = false;
  s.steps = {S(500, "m1", "apply", {})};  // no evidence: refused
  s.assertions = {A("note-count", {{"kind", "refuse"}, {"actor", "cc"}, {"min", "1"}, {"max", "1"}}),
                  A("note-count", {{"kind", "issued"}, {"actor", "cc"}, {"min", "1"}, {"max", "1"}}),
                  A("tx-count", {{"type", "entity-registration"}, {"size", "80"}, {"min", "1"}, {"max", "1"}}),
                  A("entity-active", {{"class", "manufacturer"}, {"id", "1"}}),
                  A("devices-registered"),
                  A("ledgers-identical")};
  for (auto& a : safety()) s.assertions.push_back(a);
  return s;
}

}  // namespace

std::vector<Scenario> builtin_suite() {
  return {dos_attack(),    malicious_rn(),    identity_forgery(), malicious_cloud(), malicious_manufacturer(),
          pbft_byzantine(), pbft_crash(),     update_anti_dos(),  storage_integrity(), privacy_split(),
          lightweight_split(), certification()};
}

std::optional<Scenario> find_builtin(const std::string& name) {
  for (auto& s : builtin_suite())
    if (s.name == name) return s;
  return std::nullopt;
}

}  // namespace iotchain::scen

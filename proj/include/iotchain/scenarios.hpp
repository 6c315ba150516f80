#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "iotchain/roles.hpp"

namespace iotchain::scen {

using roles::Args;
using sim::ActorId;
using sim::Time;

struct WorldConfig {
  std::uint16_t rns = 4;
  std::uint16_t manufacturers = 1;
  std::uint16_t devices_per_region = 2;  // per manufacturer
  std::uint16_t providers = 1;
  std::uint16_t forged_devices = 0;      // attacker devices homed in region 1
  bool certified_manufacturers = true;   // false: manufacturers apply to the CC first
  consensus::EngineKind engine = consensus::EngineKind::Pbft;
  consensus::ConsensusConfig consensus;  // n is taken from `rns`
  sim::LinkModel link;
  Time flush_interval = 300;
  std::size_t flush_size = 16;
  Time query_interval = 5000;
  Time retry_interval = 1000;
  std::size_t report_threshold = 3;
  std::vector<std::string> markers{"MALWARE"};
};

struct DeviceInfo {
  std::string name;
  ActorId actor = 0;
  std::uint32_t device_id = 0;
  std::uint16_t region = 0;
  std::uint16_t manufacturer = 0;
  bool forged = false;
};

/// A complete simulated deployment: CC, DC, regional nodes, manufacturers,
/// cloud providers and devices on one network.
///
/// Names: cc, dc, rn1..rnN (rnK serves region K), m1..mM, cloud1..cloudP,
/// d1..dK for certified devices (ordered by manufacturer, then region) and
/// x1..xF for forged ones.
class World {
 public:
  World(const WorldConfig& config, std::uint64_t seed);

  sim::Network& net() { return *net_; }
  const sim::Network& net() const { return *net_; }
  const WorldConfig& config() const { return config_; }
  const roles::Shared& shared() const { return *shared_; }

  /// Actor id for a name; throws sim::ConfigError when unknown.
  ActorId id(const std::string& name) const;
  const std::vector<DeviceInfo>& devices() const { return devices_; }
  const DeviceInfo& device_info(const std::string& name) const;
  std::vector<std::string> rn_names() const;

  roles::RegionalNode& rn(std::uint16_t region);
  const roles::RegionalNode& rn(std::uint16_t region) const;
  roles::Device& device(const std::string& name);
  const roles::Device& device(const std::string& name) const;
  const roles::Manufacturer& manufacturer(std::uint16_t id) const;
  const roles::CloudProvider& provider(std::uint16_t id) const;
  const roles::CertificationCenter& cc() const;
  const roles::DetectionCenter& dc() const;

  /// Harness command. Argument values of the form id:NAME and actor:NAME are
  /// replaced by a device id or an actor id.
  void command(Time at, const std::string& actor, const std::string& type, Args args = {});
  /// Default workload start: provisioning, registrations, provider sign-up.
  void bootstrap();

 private:
  WorldConfig config_;
  std::shared_ptr<roles::Shared> shared_;
  std::unique_ptr<sim::Network> net_;
  std::map<std::string, ActorId> ids_;
  std::vector<DeviceInfo> devices_;
};

// ---- scenario definitions ----

struct Step {
  Time at = 0;
  std::string actor;
  std::string command;
  Args args;
};

struct FaultSpec {
  Time at = 0;
  std::string kind;  // crash | dos | byzantine | tamper | partition | heal
  std::string target;
  Time duration = 0;
  std::string args;
  std::vector<std::vector<std::string>> groups;
};

struct AssertionSpec {
  std::string name;
  Args args;
};

struct Scenario {
  std::string name;
  std::string description;
  std::uint64_t seed = 1;
  Time horizon = 40000;
  WorldConfig world;
  bool bootstrap = true;
  std::vector<Step> steps;
  std::vector<FaultSpec> faults;
  std::vector<AssertionSpec> assertions;
};

/// Scenario documents are JSON; unknown keys are configuration errors.
Scenario parse_scenario(const std::string& json_text);
std::string to_json(const Scenario& s);

struct AssertionResult {
  std::string name;
  Args args;
  bool passed = false;
  std::string detail;
  std::size_t event_index = 0;     // trace record the failure points at
  std::vector<std::string> slice;  // trace lines around event_index, on failure
};

struct Verdict {
  std::string scenario;
  std::uint64_t seed = 0;
  Time horizon = 0;
  std::size_t trace_records = 0;
  std::vector<AssertionResult> results;

  bool passed() const;
  std::string text() const;
  /// One JSON object per line: a header, then one line per assertion.
  std::string structured() const;
};

struct RunResult {
  std::unique_ptr<World> world;
  Verdict verdict;
};

/// Builds the world, applies faults and steps, runs to the horizon and
/// evaluates every assertion.
RunResult run_scenario(const Scenario& s);

std::vector<Scenario> builtin_suite();
std::optional<Scenario> find_builtin(const std::string& name);
std::vector<std::string> assertion_names();

/// Post-hoc audit of every block on every regional node: chain links and
/// every confirmed transaction valid against the state preceding it.
/// Also reports the first height at which two nodes hold different blocks.
/// Returns one line per problem.
std::vector<std::string> audit_all(const World& w);

}  // namespace iotchain::scen

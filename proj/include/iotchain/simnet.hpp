#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "iotchain/bytes.hpp"

namespace iotchain::sim {

using ActorId = std::uint32_t;
using Time = std::uint64_t;  // simulated milliseconds

/// Sender id of workload commands injected by the harness.
inline constexpr ActorId kHarness = 0;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Tier : std::uint8_t { Device, Node, Service };

enum class FaultKind : std::uint8_t { Crash, Dos, Byzantine, Tamper, Partition, Heal };
std::string to_string(FaultKind k);

struct Fault {
  FaultKind kind = FaultKind::Crash;
  ActorId target = 0;                      // unused for partition / global heal
  Time duration = 0;                       // dos
  std::string args;                        // byzantine mode, tamper arguments
  std::vector<std::vector<ActorId>> groups;  // partition
};

struct ScheduledFault {
  Time at = 0;
  Fault fault;
};

using FaultPlan = std::vector<ScheduledFault>;

struct LinkModel {
  Time device_latency = 50;   // device <-> anything
  Time node_latency = 100;    // node <-> node
  Time service_latency = 50;  // everything else
  Time jitter = 10;           // uniform extra delay in [0, jitter]
  double drop_probability = 0.0;
  std::map<std::pair<ActorId, ActorId>, Time> overrides;  // directed pair -> base latency
  std::vector<std::vector<ActorId>> partitions;           // initial partition groups
};

struct TraceRecord {
  Time time = 0;
  std::string kind;  // deliver | drop | fault | note | command
  std::string from, to, type, digest;
  std::string detail;

  std::string line() const;
  static TraceRecord parse(const std::string& line);
  bool operator==(const TraceRecord&) const = default;
};

struct Trace {
  std::vector<TraceRecord> records;
  std::string text() const;
  static Trace parse(const std::string& text);
};

class Network;

/// Handle an actor uses to act on the network during a callback.
class Context {
 public:
  Context(Network& net, ActorId self) : net_(net), self_(self) {}
  Time now() const;
  ActorId self() const { return self_; }
  void send(ActorId to, const std::string& type, Bytes payload, std::string detail = {});
  std::uint64_t set_timer(Time delay, std::uint64_t tag, Bytes payload = {});
  void cancel_timer(std::uint64_t id);
  void note(const std::string& kind, std::string detail);
  const std::string& name_of(ActorId id) const;

 private:
  Network& net_;
  ActorId self_;
};

class Actor {
 public:
  virtual ~Actor() = default;
  virtual void on_start(Context&) {}
  virtual void on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) = 0;
  virtual void on_timer(Context&, std::uint64_t /*tag*/, ByteView /*payload*/) {}
  /// Byzantine and tamper faults are handed to the target to interpret.
  virtual void on_fault(Context&, const Fault&) {}
};

class Network {
 public:
  Network(LinkModel link, std::uint64_t seed);

  /// Throws ConfigError on a duplicate id or name, or id 0.
  void add(ActorId id, std::string name, Tier tier, std::unique_ptr<Actor> actor);
  void schedule(const FaultPlan& plan);
  void schedule(ScheduledFault fault);
  /// Workload command delivered to `to` at time `at` with sender kHarness.
  void command(Time at, ActorId to, const std::string& type, Bytes payload);

  /// Processes events up to and including `horizon`, or until the queue drains.
  const Trace& run(Time horizon);

  Time now() const { return now_; }
  const Trace& trace() const { return trace_; }
  bool has(ActorId id) const { return actors_.contains(id); }
  Actor& actor(ActorId id);
  template <class T>
  T& actor_as(ActorId id) {
    return dynamic_cast<T&>(actor(id));
  }
  const std::string& name_of(ActorId id) const;
  std::vector<ActorId> actor_ids() const;
  bool crashed(ActorId id) const { return crashed_.contains(id); }

  /// Message scheduling as seen by `send`: the delivery time, or nothing
  /// when the message is dropped. Exposed for tests.
  std::optional<Time> schedule_message(ActorId from, ActorId to, const std::string& type, Bytes payload,
                                       std::string detail);

 private:
  friend class Context;

  enum class EventKind : std::uint8_t { Deliver, Timer, Fault, Command, Start };
  struct Event {
    Time at = 0;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::Deliver;
    ActorId from = 0, to = 0;
    std::string type;
    Bytes payload;
    std::string detail;
    Time sent_at = 0;
    std::uint64_t timer_id = 0, tag = 0;
    Fault fault;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };
  struct Entry {
    std::string name;
    Tier tier;
    std::unique_ptr<Actor> actor;
  };

  void push(Event e);
  Time base_latency(ActorId from, ActorId to) const;
  bool reachable(ActorId a, ActorId b) const;
  bool suppressed(ActorId to, Time at) const;
  std::uint64_t draw(ActorId from, ActorId to);
  void record(Time t, std::string kind, ActorId from, ActorId to, std::string type, ByteView payload,
              std::string detail);
  void apply_fault(const Event& e);

  LinkModel link_;
  std::uint64_t seed_;
  Time now_ = 0;
  std::uint64_t next_seq_ = 0, next_timer_ = 1;
  std::map<ActorId, Entry> actors_;
  std::set<std::string> names_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::set<std::uint64_t> cancelled_timers_;
  std::map<std::pair<ActorId, ActorId>, std::uint64_t> link_counters_;
  std::vector<std::vector<ActorId>> partitions_;
  std::map<ActorId, Time> dos_until_;
  std::set<ActorId> crashed_;
  bool started_ = false;
  Trace trace_;
};

}  // namespace iotchain::sim

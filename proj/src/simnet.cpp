#include "iotchain/simnet.hpp"

#include <algorithm>
#include <sstream>

#include "iotchain/crypto.hpp"

namespace iotchain::sim {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

const std::string kNobody = "-";

}  // namespace

std::string to_string(FaultKind k) {
  switch (k) {
    case FaultKind::Crash: return "crash";
    case FaultKind::Dos: return "dos";
    case FaultKind::Byzantine: return "byzantine";
    case FaultKind::Tamper: return "tamper";
    case FaultKind::Partition: return "partition";
    case FaultKind::Heal: return "heal";
  }
  return "unknown";
}

std::string TraceRecord::line() const {
  std::ostringstream os;
  os << "t=" << time << " kind=" << kind << " from=" << from << " to=" << to << " type=" << type
     << " digest=" << digest;
  if (!detail.empty()) os << " detail=" << detail;
  return os.str();
}

TraceRecord TraceRecord::parse(const std::string& line) {
  TraceRecord r;
  std::string rest = line;
  auto take = [&](const std::string& key) {
    std::string prefix = key + "=";
    if (rest.compare(0, prefix.size(), prefix) != 0) throw ConfigError("trace line: expected " + key + ": " + line);
    rest.erase(0, prefix.size());
    if (key == "detail") {
      std::string v = rest;
      rest.clear();
      return v;
    }
    auto sp = rest.find(' ');
    std::string v = rest.substr(0, sp);
    rest = sp == std::string::npos ? "" : rest.substr(sp + 1);
    return v;
  };
  r.time = std::stoull(take("t"));
  r.kind = take("kind");
  r.from = take("from");
  r.to = take("to");
  r.type = take("type");
  r.digest = take("digest");
  if (!rest.empty()) r.detail = take("detail");
  return r;
}

std::string Trace::text() const {
  std::string out;
  for (const auto& r : records) out += r.line() + '\n';
  return out;
}

Trace Trace::parse(const std::string& text) {
  Trace t;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) t.records.push_back(TraceRecord::parse(line));
  return t;
}

Time Context::now() const { return net_.now_; }

void Context::send(ActorId to, const std::string& type, Bytes payload, std::string detail) {
  net_.schedule_message(self_, to, type, std::move(payload), std::move(detail));
}

std::uint64_t Context::set_timer(Time delay, std::uint64_t tag, Bytes payload) {
  Network::Event e;
  e.at = net_.now_ + delay;
  e.kind = Network::EventKind::Timer;
  e.to = self_;
  e.timer_id = net_.next_timer_++;
  e.tag = tag;
  e.payload = std::move(payload);
  auto id = e.timer_id;
  net_.push(std::move(e));
  return id;
}

void Context::cancel_timer(std::uint64_t id) { net_.cancelled_timers_.insert(id); }

void Context::note(const std::string& kind, std::string detail) {
  net_.trace_.records.push_back({net_.now_, "note", net_.name_of(self_), kNobody, kind, kNobody, std::move(detail)});
}

const std::string& Context::name_of(ActorId id) const { return net_.name_of(id); }

Network::Network(LinkModel link, std::uint64_t seed) : link_(std::move(link)), seed_(seed) {
  partitions_ = link_.partitions;
  if (link_.drop_probability < 0.0 || link_.drop_probability > 1.0) throw ConfigError("drop probability outside [0,1]");
}

void Network::add(ActorId id, std::string name, Tier tier, std::unique_ptr<Actor> actor) {
  if (id == kHarness) throw ConfigError("actor id 0 is reserved for the harness");
  if (actors_.contains(id)) throw ConfigError("duplicate actor id " + std::to_string(id));
  if (name.empty() || name.find_first_of(" \n=") != std::string::npos) throw ConfigError("bad actor name '" + name + "'");
  if (!names_.insert(name).second) throw ConfigError("duplicate actor name " + name);
  if (started_) throw ConfigError("actors must be added before the run starts");
  actors_.emplace(id, Entry{std::move(name), tier, std::move(actor)});
}

void Network::schedule(const FaultPlan& plan) {
  for (const auto& f : plan) schedule(f);
}

void Network::schedule(ScheduledFault sf) {
  if (sf.fault.kind != FaultKind::Partition && !(sf.fault.kind == FaultKind::Heal && sf.fault.target == 0) &&
      !actors_.contains(sf.fault.target))
    throw ConfigError("fault targets unknown actor " + std::to_string(sf.fault.target));
  Event e;
  e.at = sf.at;
  e.kind = EventKind::Fault;
  e.to = sf.fault.target;
  e.fault = std::move(sf.fault);
  push(std::move(e));
}

void Network::command(Time at, ActorId to, const std::string& type, Bytes payload) {
  if (!actors_.contains(to)) throw ConfigError("command targets unknown actor " + std::to_string(to));
  Event e;
  e.at = at;
  e.kind = EventKind::Command;
  e.from = kHarness;
  e.to = to;
  e.type = type;
  e.payload = std::move(payload);
  push(std::move(e));
}

void Network::push(Event e) {
  e.seq = next_seq_++;
  queue_.push(std::move(e));
}

Actor& Network::actor(ActorId id) {
  auto it = actors_.find(id);
  if (it == actors_.end()) throw ConfigError("unknown actor " + std::to_string(id));
  return *it->second.actor;
}

const std::string& Network::name_of(ActorId id) const {
  static const std::string harness = "harness";
  if (id == kHarness) return harness;
  auto it = actors_.find(id);
  return it == actors_.end() ? kNobody : it->second.name;
}

std::vector<ActorId> Network::actor_ids() const {
  std::vector<ActorId> ids;
  for (const auto& [id, _] : actors_) ids.push_back(id);
  return ids;
}

Time Network::base_latency(ActorId from, ActorId to) const {
  if (auto it = link_.overrides.find({from, to}); it != link_.overrides.end()) return it->second;
  Tier a = actors_.at(from).tier, b = actors_.at(to).tier;
  if (a == Tier::Device || b == Tier::Device) return link_.device_latency;
  if (a == Tier::Node && b == Tier::Node) return link_.node_latency;
  return link_.service_latency;
}

bool Network::reachable(ActorId a, ActorId b) const {
  auto group_of = [&](ActorId x) -> int {
    for (std::size_t i = 0; i < partitions_.size(); ++i)
      if (std::find(partitions_[i].begin(), partitions_[i].end(), x) != partitions_[i].end()) return static_cast<int>(i);
    return -1;
  };
  return group_of(a) == group_of(b);
}

bool Network::suppressed(ActorId to, Time at) const {
  auto it = dos_until_.find(to);
  return it != dos_until_.end() && at < it->second;
}

// Per-link stream: a fault on one link never shifts the draws of another.
std::uint64_t Network::draw(ActorId from, ActorId to) {
  auto n = link_counters_[{from, to}]++;
  return splitmix(seed_ ^ splitmix((static_cast<std::uint64_t>(from) << 32) | to) ^ splitmix(n + 0x5151));
}

void Network::record(Time t, std::string kind, ActorId from, ActorId to, std::string type, ByteView payload,
                     std::string detail) {
  trace_.records.push_back(
      {t, std::move(kind), name_of(from), name_of(to), std::move(type), hash(payload).prefix(), std::move(detail)});
}

std::optional<Time> Network::schedule_message(ActorId from, ActorId to, const std::string& type, Bytes payload,
                                              std::string detail) {
  if (!actors_.contains(to)) throw ConfigError("send to unknown actor " + std::to_string(to));
  auto r = draw(from, to);
  double u = static_cast<double>(r >> 11) * 0x1.0p-53;
  if (!reachable(from, to)) {
    record(now_, "drop", from, to, type, payload, "partition");
    return std::nullopt;
  }
  if (u < link_.drop_probability) {
    record(now_, "drop", from, to, type, payload, "loss");
    return std::nullopt;
  }
  Time jitter = link_.jitter ? splitmix(r) % (link_.jitter + 1) : 0;
  Event e;
  e.at = now_ + base_latency(from, to) + jitter;
  e.kind = EventKind::Deliver;
  e.from = from;
  e.to = to;
  e.type = type;
  e.payload = std::move(payload);
  e.detail = std::move(detail);
  e.sent_at = now_;
  auto at = e.at;
  push(std::move(e));
  return at;
}

void Network::apply_fault(const Event& e) {
  const Fault& f = e.fault;
  std::string detail = f.args;
  if (f.kind == FaultKind::Dos) detail = "duration=" + std::to_string(f.duration);
  if (f.kind == FaultKind::Partition) {
    for (const auto& g : f.groups) {
      detail += detail.empty() ? "" : "|";
      for (std::size_t i = 0; i < g.size(); ++i) detail += (i ? "," : "") + name_of(g[i]);
    }
  }
  trace_.records.push_back({e.at, "fault", kNobody, f.target ? name_of(f.target) : kNobody, to_string(f.kind), kNobody, detail});
  switch (f.kind) {
    case FaultKind::Crash: crashed_.insert(f.target); break;
    case FaultKind::Dos: dos_until_[f.target] = e.at + f.duration; break;
    case FaultKind::Partition: partitions_ = f.groups; break;
    case FaultKind::Heal:
      if (f.target == 0) {
        partitions_.clear();
        dos_until_.clear();
      } else {
        dos_until_.erase(f.target);
        for (auto& g : partitions_) std::erase(g, f.target);
      }
      break;
    case FaultKind::Byzantine:
    case FaultKind::Tamper:
      if (!crashed_.contains(f.target)) {
        Context ctx(*this, f.target);
        actor(f.target).on_fault(ctx, f);
      }
      break;
  }
}

const Trace& Network::run(Time horizon) {
  if (!started_) {
    started_ = true;
    for (auto& [id, entry] : actors_) {
      Context ctx(*this, id);
      entry.actor->on_start(ctx);
    }
  }
  while (!queue_.empty() && queue_.top().at <= horizon) {
    Event e = queue_.top();
    queue_.pop();
    now_ = e.at;
    switch (e.kind) {
      case EventKind::Deliver: {
        if (crashed_.contains(e.to)) {
          record(now_, "drop", e.from, e.to, e.type, e.payload, "crashed");
          break;
        }
        if (suppressed(e.to, now_)) {
          record(now_, "drop", e.from, e.to, e.type, e.payload, "dos");
          break;
        }
        std::string detail = "sent=" + std::to_string(e.sent_at) + " size=" + std::to_string(e.payload.size());
        if (!e.detail.empty()) detail += " " + e.detail;
        record(now_, "deliver", e.from, e.to, e.type, e.payload, std::move(detail));
        Context ctx(*this, e.to);
        actors_.at(e.to).actor->on_message(ctx, e.from, e.type, e.payload);
        break;
      }
      case EventKind::Command: {
        if (crashed_.contains(e.to)) break;
        record(now_, "command", e.from, e.to, e.type, e.payload, {});
        Context ctx(*this, e.to);
        actors_.at(e.to).actor->on_message(ctx, kHarness, e.type, e.payload);
        break;
      }
      case EventKind::Timer: {
        if (cancelled_timers_.erase(e.timer_id) || crashed_.contains(e.to)) break;
        Context ctx(*this, e.to);
        actors_.at(e.to).actor->on_timer(ctx, e.tag, e.payload);
        break;
      }
      case EventKind::Fault: apply_fault(e); break;
      case EventKind::Start: break;
    }
  }
  now_ = std::max(now_, horizon);
  return trace_;
}

}  // namespace iotchain::sim

#include <gtest/gtest.h>

#include "iotchain/simnet.hpp"

using namespace iotchain::sim;
using iotchain::Bytes;
using iotchain::ByteView;

namespace {

// Sends a ping to its peer every `period` ms and answers every ping.
struct Pinger : Actor {
  ActorId peer;
  Time period;
  int pings = 0, pongs = 0;
  std::vector<std::pair<ActorId, std::string>> seen;
  Pinger(ActorId p, Time per = 200) : peer(p), period(per) {}

  void on_start(Context& ctx) override {
    if (period) ctx.set_timer(period, 1);
  }
  void on_timer(Context& ctx, std::uint64_t, ByteView) override {
    ctx.send(peer, "ping", Bytes{static_cast<std::uint8_t>(pings++)});
    ctx.set_timer(period, 1);
  }
  void on_message(Context& ctx, ActorId from, const std::string& type, ByteView payload) override {
    seen.emplace_back(from, type);
    if (type == "ping") ctx.send(from, "pong", Bytes(payload.begin(), payload.end()));
    if (type == "pong") ++pongs;
  }
};

struct Sink : Actor {
  std::vector<std::tuple<Time, ActorId, std::string>> got;
  int faults = 0;
  void on_message(Context& ctx, ActorId from, const std::string& type, ByteView) override {
    got.emplace_back(ctx.now(), from, type);
  }
  void on_fault(Context&, const Fault&) override { ++faults; }
};

LinkModel lossy(double p) {
  LinkModel l;
  l.drop_probability = p;
  return l;
}

Network pair_net(LinkModel link, std::uint64_t seed) {
  Network net(std::move(link), seed);
  net.add(1, "a", Tier::Node, std::make_unique<Pinger>(2));
  net.add(2, "b", Tier::Node, std::make_unique<Pinger>(1, 300));
  return net;
}

std::vector<TraceRecord> involving(const Trace& t, const std::set<std::string>& names) {
  std::vector<TraceRecord> out;
  for (const auto& r : t.records)
    if (names.contains(r.from) || names.contains(r.to)) out.push_back(r);
  return out;
}

}  // namespace

TEST(Simnet, SameSeedSameTrace) {
  auto a = pair_net(lossy(0.2), 42);
  auto b = pair_net(lossy(0.2), 42);
  auto ta = a.run(20'000).text();
  EXPECT_EQ(ta, b.run(20'000).text());
  EXPECT_NE(ta.find("detail=loss"), std::string::npos);
  auto c = pair_net(lossy(0.2), 43);
  EXPECT_NE(ta, c.run(20'000).text());
}

TEST(Simnet, LatencyByTierWithoutJitter) {
  LinkModel l;
  l.jitter = 0;
  Network net(l, 1);
  net.add(1, "dev", Tier::Device, std::make_unique<Sink>());
  net.add(2, "n1", Tier::Node, std::make_unique<Sink>());
  net.add(3, "n2", Tier::Node, std::make_unique<Sink>());
  net.add(4, "svc", Tier::Service, std::make_unique<Sink>());
  EXPECT_EQ(net.schedule_message(1, 2, "x", {}, {}), 50u);
  EXPECT_EQ(net.schedule_message(2, 3, "x", {}, {}), 100u);
  EXPECT_EQ(net.schedule_message(3, 4, "x", {}, {}), 50u);
  EXPECT_EQ(net.schedule_message(4, 1, "x", {}, {}), 50u);
  net.run(1000);
  auto& n2 = net.actor_as<Sink>(3);
  ASSERT_EQ(n2.got.size(), 1u);
  EXPECT_EQ(std::get<0>(n2.got[0]), 100u);
  EXPECT_EQ(std::get<1>(n2.got[0]), 2u);
}

TEST(Simnet, LatencyOverrideIsDirected) {
  LinkModel l;
  l.jitter = 0;
  l.overrides[{1, 2}] = 7;
  Network net(l, 1);
  net.add(1, "a", Tier::Node, std::make_unique<Sink>());
  net.add(2, "b", Tier::Node, std::make_unique<Sink>());
  EXPECT_EQ(net.schedule_message(1, 2, "x", {}, {}), 7u);
  EXPECT_EQ(net.schedule_message(2, 1, "x", {}, {}), 100u);
}

TEST(Simnet, JitterStaysInBounds) {
  auto net = pair_net(LinkModel{}, 9);
  net.run(30'000);
  int delivered = 0;
  std::set<Time> delays;
  for (const auto& r : net.trace().records) {
    if (r.kind != "deliver") continue;
    ++delivered;
    Time sent = std::stoull(r.detail.substr(r.detail.find("sent=") + 5));
    ASSERT_GE(r.time, sent + 100);
    ASSERT_LE(r.time, sent + 110);
    delays.insert(r.time - sent);
  }
  EXPECT_GT(delivered, 200);
  EXPECT_GT(delays.size(), 5u);
}

TEST(Simnet, PartitionDropsAreLoggedAndHealRestores) {
  auto net = pair_net(LinkModel{}, 3);
  Fault part{FaultKind::Partition, 0, 0, {}, {{1}, {2}}};
  net.schedule({{1000, part}, {3000, Fault{FaultKind::Heal}}});
  net.run(5000);
  int dropped_inside = 0, delivered_inside = 0, delivered_after = 0;
  for (const auto& r : net.trace().records) {
    bool inside = r.time >= 1000 && r.time < 3000;
    if (r.kind == "drop" && r.detail == "partition") {
      EXPECT_TRUE(inside);
      ++dropped_inside;
    }
    if (r.kind == "deliver") {
      Time sent = std::stoull(r.detail.substr(5));
      if (sent >= 1000 && sent < 3000) ++delivered_inside;
      if (r.time > 3200) ++delivered_after;
    }
  }
  EXPECT_GT(dropped_inside, 5);
  EXPECT_EQ(delivered_inside, 0);
  EXPECT_GT(delivered_after, 5);
}

TEST(Simnet, UngroupedActorsShareAGroup) {
  LinkModel l;
  l.partitions = {{1}};
  Network net(l, 3);
  net.add(1, "a", Tier::Node, std::make_unique<Sink>());
  net.add(2, "b", Tier::Node, std::make_unique<Sink>());
  net.add(3, "c", Tier::Node, std::make_unique<Sink>());
  EXPECT_FALSE(net.schedule_message(1, 2, "x", {}, {}));
  EXPECT_TRUE(net.schedule_message(2, 3, "x", {}, {}));
}

TEST(Simnet, DosSuppressesInboundThenResumes) {
  LinkModel l;
  l.jitter = 0;
  Network net(l, 5);
  net.add(1, "src", Tier::Node, std::make_unique<Pinger>(2, 100));
  net.add(2, "victim", Tier::Node, std::make_unique<Sink>());
  net.schedule(ScheduledFault{1000, Fault{FaultKind::Dos, 2, 1000}});
  net.run(3000);
  auto& got = net.actor_as<Sink>(2).got;
  for (auto& [t, from, type] : got) EXPECT_TRUE(t < 1000 || t >= 2000) << t;
  // one ping every 100 ms arriving 100 ms later: t=200..3000, minus 1000..1900
  EXPECT_EQ(got.size(), 19u);
  int dos_drops = 0;
  for (const auto& r : net.trace().records)
    if (r.kind == "drop" && r.detail == "dos") ++dos_drops;
  EXPECT_EQ(dos_drops, 10);
}

TEST(Simnet, CrashedActorGetsNothing) {
  auto net = pair_net(LinkModel{}, 11);
  net.schedule(ScheduledFault{1000, Fault{FaultKind::Crash, 2}});
  net.run(5000);
  EXPECT_TRUE(net.crashed(2));
  for (const auto& r : net.trace().records) {
    if (r.time <= 1000) continue;
    // messages b sent before the crash may still land
    if (r.from == "b") EXPECT_TRUE(r.kind == "deliver" && std::stoull(r.detail.substr(5)) < 1000) << r.line();
    if (r.to == "b" && r.kind != "fault") EXPECT_EQ(r.kind + r.detail, "dropcrashed");
  }
}

TEST(Simnet, ConfigErrors) {
  Network net(LinkModel{}, 1);
  net.add(1, "a", Tier::Node, std::make_unique<Sink>());
  EXPECT_THROW(net.add(1, "b", Tier::Node, std::make_unique<Sink>()), ConfigError);
  EXPECT_THROW(net.add(2, "a", Tier::Node, std::make_unique<Sink>()), ConfigError);
  EXPECT_THROW(net.add(0, "h", Tier::Node, std::make_unique<Sink>()), ConfigError);
  EXPECT_THROW(net.add(3, "has space", Tier::Node, std::make_unique<Sink>()), ConfigError);
  EXPECT_THROW(net.schedule(ScheduledFault{10, Fault{FaultKind::Crash, 99}}), ConfigError);
  EXPECT_THROW(net.command(10, 99, "x", {}), ConfigError);
  EXPECT_THROW(Network(lossy(1.5), 1), ConfigError);
}

TEST(Simnet, NoCausalityViolation) {
  auto net = pair_net(lossy(0.1), 21);
  net.schedule({{500, Fault{FaultKind::Dos, 1, 700}}, {2000, Fault{FaultKind::Partition, 0, 0, {}, {{1}}}},
                {2600, Fault{FaultKind::Heal}}});
  net.run(10'000);
  Time last = 0;
  for (const auto& r : net.trace().records) {
    EXPECT_GE(r.time, last);
    last = r.time;
    if (r.kind == "deliver") EXPECT_LE(std::stoull(r.detail.substr(5)), r.time);
  }
}

TEST(Simnet, FaultsStayOnTheirOwnLinks) {
  auto build = [](bool with_fault) {
    Network net(lossy(0.15), 77);
    net.add(1, "a", Tier::Node, std::make_unique<Pinger>(2));
    net.add(2, "b", Tier::Node, std::make_unique<Pinger>(1, 300));
    net.add(3, "c", Tier::Device, std::make_unique<Pinger>(4, 150));
    net.add(4, "d", Tier::Service, std::make_unique<Pinger>(3, 250));
    if (with_fault) {
      net.schedule({{1000, Fault{FaultKind::Dos, 3, 2000}}, {4000, Fault{FaultKind::Crash, 4}}});
    }
    net.run(15'000);
    return net.trace();
  };
  auto base = build(false), faulted = build(true);
  EXPECT_EQ(involving(base, {"a", "b"}), involving(faulted, {"a", "b"}));
  EXPECT_NE(involving(base, {"c", "d"}), involving(faulted, {"c", "d"}));
}

TEST(Simnet, CommandsComeFromHarness) {
  Network net(LinkModel{}, 1);
  net.add(5, "s", Tier::Service, std::make_unique<Sink>());
  net.command(250, 5, "go", Bytes{1, 2});
  net.run(1000);
  auto& got = net.actor_as<Sink>(5).got;
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0], std::make_tuple(Time{250}, kHarness, std::string("go")));
  ASSERT_EQ(net.trace().records.size(), 1u);
  EXPECT_EQ(net.trace().records[0].kind, "command");
  EXPECT_EQ(net.trace().records[0].from, "harness");
}

TEST(Simnet, ByzantineAndTamperFaultsReachTheActor) {
  Network net(LinkModel{}, 1);
  net.add(5, "s", Tier::Node, std::make_unique<Sink>());
  net.schedule({{10, Fault{FaultKind::Byzantine, 5, 0, "silent"}}, {20, Fault{FaultKind::Tamper, 5}}});
  net.run(100);
  EXPECT_EQ(net.actor_as<Sink>(5).faults, 2);
  EXPECT_EQ(net.trace().records[0].detail, "silent");
}

TEST(Simnet, CancelledTimerDoesNotFire) {
  struct T : Actor {
    int fired = 0;
    void on_start(Context& ctx) override {
      auto id = ctx.set_timer(100, 1);
      ctx.set_timer(50, 2);
      ctx.cancel_timer(id);
    }
    void on_timer(Context&, std::uint64_t tag, ByteView) override { fired += static_cast<int>(tag); }
    void on_message(Context&, ActorId, const std::string&, ByteView) override {}
  };
  Network net(LinkModel{}, 1);
  net.add(1, "t", Tier::Node, std::make_unique<T>());
  net.run(1000);
  EXPECT_EQ(net.actor_as<T>(1).fired, 2);
}

TEST(Simnet, RunCanResume) {
  auto once = pair_net(lossy(0.1), 8);
  auto twice = pair_net(lossy(0.1), 8);
  once.run(6000);
  twice.run(2500);
  twice.run(6000);
  EXPECT_EQ(once.trace().text(), twice.trace().text());
}

TEST(Trace, LineRoundTrip) {
  auto net = pair_net(lossy(0.3), 4);
  net.schedule({{100, Fault{FaultKind::Partition, 0, 0, {}, {{1}, {2}}}}, {900, Fault{FaultKind::Heal}}});
  net.run(4000);
  auto text = net.trace().text();
  auto parsed = Trace::parse(text);
  ASSERT_EQ(parsed.records.size(), net.trace().records.size());
  EXPECT_EQ(parsed.records, net.trace().records);
  EXPECT_EQ(parsed.text(), text);
  TraceRecord r{5, "note", "x", "-", "decide", "-", "v=0 s=1 d=abcd"};
  EXPECT_EQ(r.line(), "t=5 kind=note from=x to=- type=decide digest=- detail=v=0 s=1 d=abcd");
  EXPECT_EQ(TraceRecord::parse(r.line()), r);
  EXPECT_THROW(TraceRecord::parse("kind=note"), ConfigError);
}

#include <gtest/gtest.h>

#include "dropscan/backend.hpp"
#include "dropscan/error.hpp"
#include "dropscan/probe_engine.hpp"

using namespace dropscan;

namespace {

NetworkConfig lab(CensorDirection d = CensorDirection::None) {
  NetworkConfig n;
  n.measurement_addrs = {SimAddresses::measurement_a, SimAddresses::measurement_b, SimAddresses::listener};
  n.clients.push_back({SimAddresses::client, {}});
  n.servers.push_back({SimAddresses::server, {}});
  if (d != CensorDirection::None) {
    CensorPolicy c;
    c.direction = d;
    n.censors.push_back(c);
  }
  return n;
}

struct Rig {
  EngineConfig cfg;
  SimBackend backend;
  ProbeEngine engine;

  explicit Rig(NetworkConfig n, std::uint64_t seed = 3)
      : backend(std::move(n), cfg.capture_filter({SimAddresses::listener})), engine(backend, cfg, seed) {}
};

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST(RateGuard, LimitAndWindow) {
  RateGuard g(5.0);
  EXPECT_EQ(g.limit(), 55u);
  Millis t = 0;
  for (int i = 0; i < 400; ++i) {
    t = g.earliest(t);
    g.record(t);
  }
  EXPECT_LE(g.max_in_window(), 55u);
  // 400 sends at no more than 55 per 10 s need at least 70 s.
  EXPECT_GE(t, 70000.0);
}

TEST(RateGuard, SpacedSendsNeverWait) {
  RateGuard g(5.0);
  for (int i = 0; i < 100; ++i) {
    const Millis t = 200.0 * i;
    EXPECT_DOUBLE_EQ(g.earliest(t), t);
    g.record(t);
  }
  EXPECT_LE(g.max_in_window(), 51u);
}

TEST(EngineConfig, RefusesHighForgeRates) {
  EngineConfig c;
  c.forge_rate_per_s = EngineConfig::kMaxForgeRate + 1;
  EXPECT_THROW(c.validate(), Error);
  c.forge_rate_per_s = 0;
  EXPECT_THROW(c.validate(), Error);
  c.forge_rate_per_s = 10;
  EXPECT_NO_THROW(c.validate());
}

TEST(CaptureFilter, MatchesAndExpression) {
  CaptureFilter f{{SimAddresses::measurement_a}};
  Packet p;
  p.dst = SimAddresses::measurement_a;
  p.flags = tcp::kRst;
  EXPECT_TRUE(f.matches(p));
  p.flags = tcp::kAck;
  EXPECT_FALSE(f.matches(p));
  p.flags = tcp::kRst;
  p.dst = SimAddresses::measurement_b;
  EXPECT_FALSE(f.matches(p));
  EXPECT_NE(f.expression().find("198.51.100.1"), std::string::npos);
}

TEST(ProbeEngine, ProbeClientReadsIpid) {
  Rig r(lab());
  const IpidSample s = r.engine.probe_client(SimAddresses::client, SourceLabel::A);
  ASSERT_TRUE(s.recv_time.has_value());
  EXPECT_EQ(s.outcome, ProbeOutcome::Response);
  EXPECT_EQ(s.ipid, r.backend.network().client_ipid(SimAddresses::client));
}

TEST(ProbeEngine, QualifiesGlobalClientAndRejectsConstant) {
  Rig good(lab());
  const auto q = good.engine.qualify(SimAddresses::client, 20);
  EXPECT_TRUE(q.result.global) << q.result.reason;
  EXPECT_GE(q.samples.size(), 19u);
  NetworkConfig n = lab();
  n.clients[0].model.ipid_mode = IpidMode::Constant;
  Rig bad(n);
  EXPECT_FALSE(bad.engine.qualify(SimAddresses::client, 20).result.global);
}

TEST(ProbeEngine, MeasuresRetransmissionSchedule) {
  NetworkConfig n = lab();
  n.servers[0].model.schedule = RetransSchedule::from_offsets({0, 1000, 3000, 7000});
  Rig r(n);
  MeasureOptions o;
  o.trials = 3;
  const auto m = r.engine.measure_retrans_schedule(SimAddresses::server, 80, o);
  EXPECT_EQ(m.schedule.r, 4);
  EXPECT_EQ(m.schedule.offsets_ms, (std::vector<std::int64_t>{0, 1000, 3000, 7000}));
  EXPECT_DOUBLE_EQ(m.avg_synacks, 4.0);
  EXPECT_EQ(m.counts.size(), 3u);
}

TEST(ProbeEngine, ScheduleErrors) {
  Rig closed(lab());
  MeasureOptions o;
  o.trials = 1;
  EXPECT_EQ(kind_of([&] { closed.engine.measure_retrans_schedule(SimAddresses::server, 81, o); }),
            ErrorKind::PortClosed);
  NetworkConfig n = lab();
  n.loss_prob = 1.0;
  Rig silent(n);
  EXPECT_EQ(kind_of([&] { silent.engine.measure_retrans_schedule(SimAddresses::server, 80, o); }),
            ErrorKind::NoSynAck);
}

TEST(ProbeEngine, ForgingRequiresSelfTest) {
  Rig r(lab());
  EXPECT_EQ(kind_of([&] { r.engine.send_forged_syn(SimAddresses::server, 80, SimAddresses::client); }),
            ErrorKind::SpoofSelfTestFailed);
  r.engine.spoof_self_test(SimAddresses::listener, SimAddresses::client);
  EXPECT_TRUE(r.engine.spoof_verified());
  EXPECT_NO_THROW(r.engine.send_forged_syn(SimAddresses::server, 80, SimAddresses::client));
}

TEST(ProbeEngine, SelfTestFailsBehindSourceRewrite) {
  NetworkConfig n = lab();
  n.egress_rewrite = true;
  Rig r(n);
  EXPECT_EQ(kind_of([&] { r.engine.spoof_self_test(SimAddresses::listener, SimAddresses::client); }),
            ErrorKind::SpoofSelfTestFailed);
  EXPECT_FALSE(r.engine.spoof_verified());
}

TEST(ProbeEngine, CleanupIsIdempotent) {
  Rig r(lab(CensorDirection::ClientToServer));
  r.engine.spoof_self_test(SimAddresses::listener, SimAddresses::client);
  for (int i = 0; i < 5; ++i) r.engine.send_forged_syn(SimAddresses::server, 80, SimAddresses::client);
  r.engine.idle_until(r.engine.now() + 500);
  EXPECT_EQ(r.backend.network().backlog_size(SimAddresses::server), 5u);
  EXPECT_EQ(r.engine.cleanup_backlog(SimAddresses::server, 80, SimAddresses::client), 5u);
  EXPECT_EQ(r.engine.cleanup_backlog(SimAddresses::server, 80, SimAddresses::client), 0u);
  r.engine.idle_until(r.engine.now() + 500);
  EXPECT_EQ(r.backend.network().backlog_size(SimAddresses::server), 0u);
}

TEST(ProbeEngine, SessionRespectsRateAndCleansUp) {
  Rig r(lab(CensorDirection::ClientToServer));
  r.engine.spoof_self_test(SimAddresses::listener, SimAddresses::client);
  SessionPlan p;
  p.client = SimAddresses::client;
  p.server = SimAddresses::server;
  p.base_duration_s = 30;
  p.intervention_duration_s = 30;
  const SessionResult s = r.engine.run_session(p);
  EXPECT_EQ(s.forged_syns, 150u);
  EXPECT_EQ(s.cleanup_rsts, 150u);
  EXPECT_LE(r.engine.rate_guard().max_in_window(), r.engine.rate_guard().limit());
  EXPECT_TRUE(s.sender_responsive());
  EXPECT_DOUBLE_EQ(s.response_fraction(), 1.0);
  EXPECT_EQ(s.samples.size(), 60u);
  r.engine.idle_until(r.engine.now() + 1000);
  EXPECT_EQ(r.backend.network().backlog_size(SimAddresses::server), 0u);
}

TEST(ProbeEngine, SessionSeriesShowsAllRetransmissions) {
  Rig r(lab(CensorDirection::ClientToServer));
  r.engine.spoof_self_test(SimAddresses::listener, SimAddresses::client);
  SessionPlan p;
  p.client = SimAddresses::client;
  p.server = SimAddresses::server;
  p.base_duration_s = 30;
  p.intervention_duration_s = 30;
  const SessionResult s = r.engine.run_session(p);
  const DiffSeries y = build_diff_series(s.samples, 1000, s.first_forge_ms);
  EXPECT_EQ(y.values.front(), 1.0);
  EXPECT_EQ(y.values.back(), 16.0);
}

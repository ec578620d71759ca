#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "dropscan/error.hpp"
#include "dropscan/orchestrator.hpp"
#include "dropscan/records.hpp"

using namespace dropscan;

namespace {

ExperimentPlan plan(Ipv4 client, Ipv4 server, int reps = 3) {
  ExperimentPlan p;
  p.client = client;
  p.server = server;
  p.replications = reps;
  p.client_group = "c" + std::to_string(client);
  p.server_group = "s" + std::to_string(server);
  return p;
}

ExperimentRunner sleepy_runner(std::atomic<int>* calls = nullptr) {
  return [calls](const ExperimentPlan&, std::size_t, int) {
    if (calls) ++*calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    ExperimentResult r;
    r.verdict.kase = VerdictCase::NoPacketsDropped;
    return r;
  };
}

SimWorld small_world() {
  SimWorld w;
  w.clients.push_back({0xCB00710A, "CN", {}});
  w.clients.push_back({0xCB00710B, "US", {}});
  ServerModel web;
  web.schedule = RetransSchedule::from_offsets({0, 1000, 3000, 7000});
  w.servers.push_back({0xC0000250, "Tor-dir", {}});
  w.servers.push_back({0xC0000251, "Web", web});
  CensorPolicy c2s;
  c2s.direction = CensorDirection::ClientToServer;
  c2s.client = 0xCB00710A;
  c2s.server = 0xC0000250;
  w.censors.push_back(c2s);
  CensorPolicy s2c;
  s2c.direction = CensorDirection::ServerToClient;
  s2c.client = 0xCB00710B;
  s2c.server = 0xC0000251;
  w.censors.push_back(s2c);
  w.seed = 77;
  return w;
}

ExperimentPlan short_plan(Ipv4 client, Ipv4 server, int reps = 1) {
  ExperimentPlan p = plan(client, server, reps);
  p.base_duration_s = 60;
  p.intervention_duration_s = 60;
  p.cooldown_s = 10;
  return p;
}

}  // namespace

TEST(Liveness, Boundaries) {
  EXPECT_TRUE(LivenessReport::evaluate(2.5, 0.6, true).passed);
  EXPECT_FALSE(LivenessReport::evaluate(2.4999, 0.6, true).passed);
  EXPECT_FALSE(LivenessReport::evaluate(2.5, 0.5999, true).passed);
  EXPECT_FALSE(LivenessReport::evaluate(3.0, 1.0, false).passed);
}

TEST(ExperimentPlan, Validate) {
  EXPECT_NO_THROW(plan(1, 2).validate());
  ExperimentPlan p = plan(1, 2);
  p.replications = 0;
  EXPECT_THROW(p.validate(), Error);
  p = plan(0, 2);
  EXPECT_THROW(p.validate(), Error);
  p = plan(1, 2);
  p.cooldown_s = -1;
  EXPECT_THROW(p.validate(), Error);
}

TEST(ScheduleRound, NoAddressInTwoExperimentsAtOnce) {
  // Two plans share client 1 and two share server 20.
  const std::vector<ExperimentPlan> plans{plan(1, 10), plan(1, 20), plan(2, 20), plan(3, 30)};
  std::atomic<int> calls{0};
  const RoundOutput out = schedule_round(plans, 4, sleepy_runner(&calls));
  EXPECT_EQ(calls.load(), 12);
  ASSERT_EQ(out.results.size(), 12u);
  EXPECT_EQ(out.trace.size(), 24u);
  EXPECT_TRUE(exclusivity_holds(out.trace));
  for (std::size_t i = 0; i < out.results.size(); ++i) {
    EXPECT_EQ(out.results[i].plan_index, i / 3);
    EXPECT_EQ(out.results[i].replication, static_cast<int>(i % 3));
  }
}

TEST(ScheduleRound, ExclusivityCheckerCatchesOverlap) {
  std::vector<ScheduleEvent> t{{0, true, 0, 0, 1, 10}, {1, true, 1, 0, 1, 20}, {2, false, 0, 0, 1, 10},
                               {3, false, 1, 0, 1, 20}};
  EXPECT_FALSE(exclusivity_holds(t));
  t = {{0, true, 0, 0, 1, 10}, {1, false, 0, 0, 1, 10}, {2, true, 1, 0, 1, 20}, {3, false, 1, 0, 1, 20}};
  EXPECT_TRUE(exclusivity_holds(t));
}

TEST(ScheduleRound, ReplicationsOfAPlanRunInOrder) {
  const std::vector<ExperimentPlan> plans{plan(1, 10, 5), plan(2, 20, 5)};
  const RoundOutput out = schedule_round(plans, 2, sleepy_runner());
  std::vector<int> last(2, -1);
  for (const auto& e : out.trace) {
    if (!e.start) continue;
    EXPECT_EQ(e.replication, last[e.plan_index] + 1);
    last[e.plan_index] = e.replication;
  }
}

TEST(ScheduleRound, FailedRecheckVoidsNextReplication) {
  const std::vector<ExperimentPlan> plans{plan(1, 10, 4)};
  std::atomic<int> calls{0};
  const auto runner = [&](const ExperimentPlan&, std::size_t, int rep) {
    ++calls;
    ExperimentResult r;
    r.verdict.kase = VerdictCase::NoPacketsDropped;
    r.requalified = rep != 0;
    return r;
  };
  const RoundOutput out = schedule_round(plans, 1, runner);
  EXPECT_EQ(calls.load(), 3);
  ASSERT_EQ(out.results.size(), 4u);
  EXPECT_FALSE(out.results[0].discarded);
  EXPECT_TRUE(out.results[1].discarded);
  EXPECT_TRUE(out.results[1].verdict.is_error());
  EXPECT_FALSE(out.results[2].discarded);
}

TEST(ScheduleRound, RunnerErrorsBecomeDiscardedResults) {
  const std::vector<ExperimentPlan> plans{plan(1, 10, 2)};
  const auto runner = [](const ExperimentPlan&, std::size_t, int rep) -> ExperimentResult {
    if (rep == 0) throw Error(ErrorKind::PortClosed, "closed");
    return {};
  };
  const RoundOutput out = schedule_round(plans, 1, runner);
  EXPECT_TRUE(out.results[0].discarded);
  EXPECT_NE(out.results[0].verdict.reason.find("closed"), std::string::npos);
  EXPECT_FALSE(out.results[1].discarded);
}

TEST(ScheduleRound, OtherExceptionsPropagate) {
  const std::vector<ExperimentPlan> plans{plan(1, 10, 2)};
  const auto runner = [](const ExperimentPlan&, std::size_t, int) -> ExperimentResult {
    throw std::runtime_error("boom");
  };
  EXPECT_THROW(schedule_round(plans, 2, runner), std::runtime_error);
}

TEST(Aggregate, ReproducesReferencePercentages) {
  const auto lines = read_records(std::string(DROPSCAN_TEST_DATA) + "/reference_counts.jsonl");
  ASSERT_EQ(lines.size(), 15u);
  const char* cols[4] = {"S->C", "None", "C->S", "Error"};
  std::vector<ExperimentResult> results;
  std::map<std::string, std::array<double, 4>> published;
  for (const auto& j : lines) {
    const AggregateRow row = aggregate_row_from_json(j);
    std::array<double, 4> pct{};
    for (std::size_t c = 0; c < 4; ++c) pct[c] = j["percent"][cols[c]].get<double>();
    published[row.client_group + "," + row.server_group] = pct;
    if (row.client_group == "All") continue;
    // Expand the counts back into individual results.
    const VerdictCase kases[4] = {VerdictCase::ServerToClientDropped, VerdictCase::NoPacketsDropped,
                                  VerdictCase::ClientToServerDropped, VerdictCase::Error};
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t k = 0; k < row.counts[c]; ++k) {
        ExperimentResult r;
        r.client_group = row.client_group;
        r.server_group = row.server_group;
        r.verdict.kase = kases[c];
        results.push_back(r);
      }
    }
  }
  const AggregateTable t = aggregate(results);
  EXPECT_EQ(t.rows.size(), 12u);
  EXPECT_EQ(t.totals.size(), 3u);
  std::size_t checked = 0;
  for (const auto* group : {&t.rows, &t.totals}) {
    for (const auto& row : *group) {
      const auto& pct = published.at(row.client_group + "," + row.server_group);
      for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(row.percent(c), pct[c]) << row.client_group << "," << row.server_group;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 15u);
  EXPECT_NE(t.format().find("2200 (73.04)"), std::string::npos);
}

TEST(Aggregate, DiscardedResultsAreCountedSeparately) {
  std::vector<ExperimentResult> rs(3);
  for (auto& r : rs) {
    r.client_group = "CN";
    r.server_group = "Web";
    r.verdict.kase = VerdictCase::NoPacketsDropped;
  }
  rs[2].discarded = true;
  rs[2].verdict = Verdict::error("liveness");
  const AggregateTable t = aggregate(rs);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].total(), 2u);
  EXPECT_EQ(t.rows[0].discarded, 1u);
  EXPECT_DOUBLE_EQ(t.rows[0].percent(1), 100.0);
  EXPECT_DOUBLE_EQ(AggregateRow{}.percent(0), 0.0);
}

TEST(SimWorld, TruthAndNetworks) {
  const SimWorld w = small_world();
  EXPECT_EQ(w.truth(0xCB00710A, 0xC0000250, 80), VerdictCase::ClientToServerDropped);
  EXPECT_EQ(w.truth(0xCB00710B, 0xC0000251, 80), VerdictCase::ServerToClientDropped);
  EXPECT_EQ(w.truth(0xCB00710A, 0xC0000251, 80), VerdictCase::NoPacketsDropped);
  EXPECT_EQ(w.network_for(0xCB00710A, 0xC0000250, 1).censors.size(), 1u);
  EXPECT_TRUE(w.network_for(0xCB00710A, 0xC0000251, 1).censors.empty());
  EXPECT_THROW(w.network_for(0xCB00710C, 0xC0000250, 1), Error);
}

TEST(SimRunner, VerdictsMatchTruth) {
  const SimWorld w = small_world();
  std::vector<ExperimentPlan> plans;
  for (const auto& c : w.clients)
    for (const auto& s : w.servers) plans.push_back(short_plan(c.addr, s.addr));
  const RoundOutput out = schedule_round(plans, 2, make_sim_runner(w, EngineConfig{}, TestConfig{}));
  ASSERT_EQ(out.results.size(), 4u);
  for (const auto& r : out.results) {
    ASSERT_TRUE(r.truth.has_value());
    EXPECT_FALSE(r.discarded) << r.verdict.reason;
    EXPECT_EQ(r.verdict.kase, *r.truth) << format_ipv4(r.client) << " " << format_ipv4(r.server);
    EXPECT_TRUE(r.requalified);
    EXPECT_TRUE(r.liveness.passed);
  }
  EXPECT_TRUE(exclusivity_holds(out.trace));
}

TEST(SimRunner, DeterministicPerTask) {
  const SimWorld w = small_world();
  const std::vector<ExperimentPlan> plans{short_plan(0xCB00710A, 0xC0000251, 2)};
  const auto runner = make_sim_runner(w, EngineConfig{}, TestConfig{});
  EXPECT_EQ(schedule_round(plans, 1, runner).results, schedule_round(plans, 1, runner).results);
}

TEST(SimRunner, ShortScheduleServerIsDiscarded) {
  SimWorld w = small_world();
  w.servers[0].model.schedule = RetransSchedule::from_offsets({0, 1000});
  const std::vector<ExperimentPlan> plans{short_plan(0xCB00710B, 0xC0000250)};
  const RoundOutput out = schedule_round(plans, 1, make_sim_runner(w, EngineConfig{}, TestConfig{}));
  EXPECT_TRUE(out.results[0].discarded);
  EXPECT_EQ(out.results[0].verdict.reason, "liveness");
  EXPECT_DOUBLE_EQ(out.results[0].liveness.server_avg_synacks, 2.0);
}

TEST(SimRunner, LossyClientIsDiscarded) {
  SimWorld w = small_world();
  w.loss_prob = 0.3;  // about half the probe round trips fail
  const std::vector<ExperimentPlan> plans{short_plan(0xCB00710B, 0xC0000250)};
  const RoundOutput out = schedule_round(plans, 1, make_sim_runner(w, EngineConfig{}, TestConfig{}));
  EXPECT_TRUE(out.results[0].discarded);
  EXPECT_LT(out.results[0].liveness.client_response_fraction, 0.6);
}

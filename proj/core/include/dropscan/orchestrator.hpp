#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dropscan/intervention.hpp"
#include "dropscan/netsim.hpp"
#include "dropscan/probe_engine.hpp"

namespace dropscan {

struct ExperimentPlan {
  Ipv4 client = 0;
  Ipv4 server = 0;
  std::uint16_t server_port = 80;
  int base_duration_s = 100;
  int intervention_duration_s = 100;
  int cooldown_s = 60;
  int replications = 24;
  std::string client_group;
  std::string server_group;

  void validate() const;
};

struct LivenessReport {
  static constexpr double kMinAvgSynacks = 2.5;
  static constexpr double kMinResponseFraction = 3.0 / 5.0;

  double server_avg_synacks = 0.0;
  double client_response_fraction = 0.0;
  bool sender_responsive = true;
  bool passed = false;

  static LivenessReport evaluate(double avg_synacks, double response_fraction, bool sender_responsive);
  friend bool operator==(const LivenessReport&, const LivenessReport&) = default;
};

struct ExperimentResult {
  std::size_t plan_index = 0;
  int replication = 0;
  Ipv4 client = 0;
  Ipv4 server = 0;
  std::uint16_t server_port = 0;
  std::string client_group;
  std::string server_group;
  Verdict verdict;
  LivenessReport liveness;
  DiffSeries series;
  RetransSchedule schedule;
  bool discarded = false;
  /// Outcome of the qualification recheck run during the cooldown.
  bool requalified = true;
  Millis started_ms = 0;
  Millis finished_ms = 0;
  std::optional<VerdictCase> truth;  // known only for simulated runs

  friend bool operator==(const ExperimentResult&, const ExperimentResult&) = default;
};

/// One experiment on an engine whose spoofing self-test has passed, given the
/// server's measured schedule: base probing, forged SYNs, cleanup, then a
/// cooldown spent re-qualifying the client. Liveness failure yields
/// Verdict::Error("liveness") and a discarded result. Throws EngineFailure.
ExperimentResult run_experiment(const ExperimentPlan& plan, ProbeEngine& engine,
                                const ScheduleMeasurement& measured, const TestConfig& config);

/// Executes one (plan, replication) task; supplied by the caller so the
/// scheduler stays backend-agnostic.
using ExperimentRunner = std::function<ExperimentResult(const ExperimentPlan&, std::size_t plan_index,
                                                        int replication)>;

struct ScheduleEvent {
  std::uint64_t tick = 0;
  bool start = false;
  std::size_t plan_index = 0;
  int replication = 0;
  Ipv4 client = 0;
  Ipv4 server = 0;
};

struct RoundOutput {
  /// Ordered by (plan index, replication) regardless of completion order.
  std::vector<ExperimentResult> results;
  /// Start/finish events in the order the scheduler saw them.
  std::vector<ScheduleEvent> trace;
};

/// Runs every replication of every plan with up to `parallelism` concurrent
/// experiments, never letting a client or server address take part in two
/// at once. Replications of a plan run in order; a failed qualification
/// recheck voids the plan's next replication. `on_result` is called as
/// results complete.
RoundOutput schedule_round(const std::vector<ExperimentPlan>& plans, unsigned parallelism,
                           const ExperimentRunner& runner,
                           const std::function<void(const ExperimentResult&)>& on_result = {});

/// True when no address appears in two overlapping experiments of the trace.
bool exclusivity_holds(const std::vector<ScheduleEvent>& trace);

/// A simulated deployment: hosts with group tags, censors and link behaviour.
struct SimWorld {
  struct Client {
    Ipv4 addr = 0;
    std::string group;
    ClientModel model;
  };
  struct Server {
    Ipv4 addr = 0;
    std::string group;
    ServerModel model;
  };
  std::vector<Client> clients;
  std::vector<Server> servers;
  std::vector<CensorPolicy> censors;
  double loss_prob = 0.0;
  double delay_ms = 20.0;
  double delay_jitter_ms = 0.0;
  bool egress_rewrite = false;
  std::uint64_t seed = 1;

  const Client* client(Ipv4 a) const;
  const Server* server(Ipv4 a) const;
  /// Ground truth for a pair given the censor rules.
  VerdictCase truth(Ipv4 client, Ipv4 server, std::uint16_t port) const;
  /// Network holding just this pair, seeded per (plan, replication).
  NetworkConfig network_for(Ipv4 client, Ipv4 server, std::uint64_t seed) const;
};

/// Runner for SimWorld: spoof self-test, schedule measurement and the
/// experiment on a fresh simulated network per task.
ExperimentRunner make_sim_runner(const SimWorld& world, const EngineConfig& engine, const TestConfig& config);

struct AggregateRow {
  std::string client_group;  // "All" for per-server-group totals
  std::string server_group;
  std::array<std::size_t, 4> counts{};  // S->C, None, C->S, Error
  std::size_t discarded = 0;

  std::size_t total() const noexcept { return counts[0] + counts[1] + counts[2] + counts[3]; }
  /// Row percentage rounded to two decimals; 0 for an empty row.
  double percent(std::size_t column) const noexcept;
  friend bool operator==(const AggregateRow&, const AggregateRow&) = default;
};

struct AggregateTable {
  std::vector<AggregateRow> rows;
  std::vector<AggregateRow> totals;  // per server group

  /// Plain-text layout: "Client,Server | S->C (%) | None (%) | C->S (%) | Error (%)".
  std::string format() const;
};

AggregateRow make_row(std::string client_group, std::string server_group, std::array<std::size_t, 4> counts);

/// Counts verdicts of non-discarded results per (client group, server group).
AggregateTable aggregate(const std::vector<ExperimentResult>& results);

}  // namespace dropscan

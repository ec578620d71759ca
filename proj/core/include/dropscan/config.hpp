#pragma once

// JSON run configuration and simulation scenario files. Unknown keys are
// rejected; every error names the source, line and field.
//
// Run config:
//   backend            "sim" | "live"
//   output             result file ("-" or absent for stdout)
//   seed               sim only
//   parallelism        concurrent experiments
//   qualification_s    client qualification window
//   experiment         {base_duration_s, intervention_duration_s, cooldown_s,
//                       replications}
//   engine             {return_addr_a, return_addr_b, self_test_listener,
//                       forge_rate_per_s, probe_timeout_ms, probe_interval_ms,
//                       probe_port_equals_server_port}
//   test               {s, alpha_outlier, alpha_test, max_outlier_iterations,
//                       min_innovation_variance, threads}
//   targets            [{client, server, port, client_group, server_group}]
//   sim                {clients: [{addr, group, ...client model}],
//                       servers: [{addr, group, ...server model}],
//                       censors: [censor], loss_prob, delay_ms,
//                       delay_jitter_ms, egress_rewrite}
//
// Client model: {initial_ipid, ipid_mode, noise: {kind, burst_rate,
// burst_size_mean, burst_spread_ms, ar_phi, ar_mean, ar_sigma},
// rst_response, icmp_unreachable}. Server model: {schedule_offsets_ms,
// backlog_timeout_s, backlog_capacity, open_port}. Censor: {direction,
// drop_prob, client, server, server_port}.
//
// Scenario file: {seeds_per_scenario, threads, scenarios: [{name, client,
// server, censor, probe_interval_ms, forge_rate_per_s, base_duration_s,
// intervention_duration_s, loss_prob, delay_ms, delay_jitter_ms, seed}]}.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dropscan/intervention.hpp"
#include "dropscan/netsim.hpp"
#include "dropscan/orchestrator.hpp"
#include "dropscan/probe_engine.hpp"

namespace dropscan {

enum class BackendKind : std::uint8_t { Sim, Live };

struct Target {
  Ipv4 client = 0;
  Ipv4 server = 0;
  std::uint16_t port = 80;
  std::string client_group;
  std::string server_group;
};

struct RunConfig {
  BackendKind backend = BackendKind::Sim;
  std::vector<Target> targets;
  TestConfig test;
  EngineConfig engine;
  Ipv4 self_test_listener = SimAddresses::listener;
  int base_duration_s = 100;
  int intervention_duration_s = 100;
  int cooldown_s = 60;
  int replications = 24;
  int qualification_s = 60;
  unsigned parallelism = 1;
  std::string output_path;
  std::uint64_t seed = 1;
  SimWorld world;
  /// Set from the command line, never from the file.
  bool ethics_acknowledged = false;

  /// Throws ConfigError. The live backend needs the ethics acknowledgment.
  void validate() const;
  /// One plan per target. Empty groups fall back to the simulated hosts' tags.
  std::vector<ExperimentPlan> plans() const;
};

RunConfig parse_run_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_run_config(const std::string& path);

struct ScenarioFile {
  std::vector<SimScenario> scenarios;
  std::size_t seeds_per_scenario = 1;
  unsigned threads = 1;
};

ScenarioFile parse_scenario_file(std::string_view text, const std::string& source = "<scenarios>");
ScenarioFile load_scenario_file(const std::string& path);

}  // namespace dropscan

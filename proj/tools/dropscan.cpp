// dropscan: qualify clients, run measurements, analyze stored series,
// simulate labeled corpora and tabulate results.
//
// Exit status: 0 on success, 1 when every verdict of a run is an Error,
// 2 on configuration or input errors, 3 on engine failures.

#include <algorithm>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include "dropscan/backend.hpp"
#include "dropscan/config.hpp"
#include "dropscan/error.hpp"
#include "dropscan/intervention.hpp"
#include "dropscan/netsim.hpp"
#include "dropscan/orchestrator.hpp"
#include "dropscan/probe_engine.hpp"
#include "dropscan/records.hpp"

using namespace dropscan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAllErrors = 1;
constexpr int kExitConfig = 2;
constexpr int kExitEngine = 3;

int exit_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::ConfigError:
    case ErrorKind::MalformedRecord:
    case ErrorKind::InvalidArgument:
      return kExitConfig;
    default:
      return kExitEngine;
  }
}

// "a.b.c.d" or "a.b.c.d/len"; a /len range excludes nothing, so /24 yields
// 256 addresses.
std::vector<Ipv4> expand_range(const std::string& spec) {
  const auto slash = spec.find('/');
  const auto base = parse_ipv4(spec.substr(0, slash));
  if (!base) throw Error(ErrorKind::ConfigError, "bad address range: " + spec);
  if (slash == std::string::npos) return {*base};
  int len = -1;
  try {
    len = std::stoi(spec.substr(slash + 1));
  } catch (const std::exception&) {
  }
  if (len < 16 || len > 32) throw Error(ErrorKind::ConfigError, "prefix length must lie in [16, 32]: " + spec);
  const std::uint32_t mask = len == 32 ? 0xFFFFFFFFu : ~((1u << (32 - len)) - 1u);
  const std::uint32_t first = *base & mask;
  std::vector<Ipv4> out;
  for (std::uint64_t a = first; a <= (first | ~mask); ++a) out.push_back(static_cast<Ipv4>(a));
  return out;
}

int cmd_qualify(const std::string& config_path, const std::vector<std::string>& ranges, int duration_s,
                const std::string& output, bool ethics) {
  RunConfig cfg = load_run_config(config_path);
  cfg.ethics_acknowledged = ethics;
  cfg.validate();
  if (duration_s > 0) cfg.qualification_s = duration_s;

  std::vector<Ipv4> addrs;
  for (const auto& r : ranges) {
    const auto more = expand_range(r);
    addrs.insert(addrs.end(), more.begin(), more.end());
  }
  if (addrs.empty()) {
    std::set<Ipv4> seen;
    for (const auto& t : cfg.targets)
      if (seen.insert(t.client).second) addrs.push_back(t.client);
  }

  RecordWriter out(output.empty() ? cfg.output_path : output);
  std::unique_ptr<LiveBackend> live;
  if (cfg.backend == BackendKind::Live) live = std::make_unique<LiveBackend>(cfg.engine.capture_filter());
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < addrs.size(); ++i) {
    QualificationOutcome q;
    if (live) {
      ProbeEngine engine(*live, cfg.engine, cfg.seed + i);
      q = engine.qualify(addrs[i], cfg.qualification_s);
    } else {
      NetworkConfig nc;
      nc.measurement_addrs = {cfg.engine.return_addr_a, cfg.engine.return_addr_b};
      if (const auto* c = cfg.world.client(addrs[i])) nc.clients.push_back({c->addr, c->model});
      nc.loss_prob = cfg.world.loss_prob;
      nc.delay_ms = cfg.world.delay_ms;
      nc.delay_jitter_ms = cfg.world.delay_jitter_ms;
      nc.record_trace = false;
      nc.seed = cfg.seed + i;
      SimBackend backend(nc, cfg.engine.capture_filter());
      ProbeEngine engine(backend, cfg.engine, cfg.seed + i);
      q = engine.qualify(addrs[i], cfg.qualification_s);
    }
    if (q.result.global) ++accepted;
    out.write(QualificationRecord{addrs[i], q.result, q.diffs});
  }
  std::cerr << accepted << " of " << addrs.size() << " addresses have a global IPID\n";
  return kExitOk;
}

ExperimentRunner make_live_runner(const RunConfig& cfg, LiveBackend& backend) {
  return [&cfg, &backend](const ExperimentPlan& plan, std::size_t plan_index, int replication) {
    ProbeEngine engine(backend, cfg.engine, cfg.seed ^ (plan_index * 7919 + static_cast<std::size_t>(replication)));
    engine.spoof_self_test(cfg.self_test_listener, plan.client);
    const auto measured = engine.measure_retrans_schedule(plan.server, plan.server_port);
    return run_experiment(plan, engine, measured, cfg.test);
  };
}

int cmd_measure(const std::string& config_path, const std::string& output, bool ethics) {
  RunConfig cfg = load_run_config(config_path);
  cfg.ethics_acknowledged = ethics;
  cfg.validate();
  const auto plans = cfg.plans();
  if (plans.empty()) throw Error(ErrorKind::ConfigError, config_path + ": no targets");

  std::unique_ptr<LiveBackend> live;
  ExperimentRunner runner;
  if (cfg.backend == BackendKind::Live) {
    live = std::make_unique<LiveBackend>(cfg.engine.capture_filter({cfg.self_test_listener}));
    runner = make_live_runner(cfg, *live);
  } else {
    runner = make_sim_runner(cfg.world, cfg.engine, cfg.test);
  }

  const auto round = schedule_round(plans, cfg.parallelism, runner, [](const ExperimentResult& r) {
    std::cerr << format_ipv4(r.client) << " -> " << format_ipv4(r.server) << ":" << r.server_port << " #"
              << r.replication << ": " << to_string(r.verdict.kase)
              << (r.verdict.is_error() ? " (" + r.verdict.reason + ")" : std::string()) << "\n";
  });
  RecordWriter out(output.empty() ? cfg.output_path : output);
  for (const auto& r : round.results) out.write(r);
  std::cerr << aggregate(round.results).format();

  const bool all_errors = std::all_of(round.results.begin(), round.results.end(),
                                      [](const ExperimentResult& r) { return r.verdict.is_error(); });
  return all_errors ? kExitAllErrors : kExitOk;
}

int cmd_analyze(const std::vector<std::string>& inputs, const std::string& output, const std::string& schedule_text,
                unsigned threads) {
  std::optional<RetransSchedule> override_schedule;
  if (!schedule_text.empty()) {
    std::vector<std::int64_t> offsets;
    std::string tok;
    std::istringstream ss(schedule_text);
    try {
      while (std::getline(ss, tok, ',')) offsets.push_back(std::stoll(tok));
      override_schedule = RetransSchedule::from_offsets(offsets);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::ConfigError, "--schedule: " + std::string(e.what()));
    }
  }
  TestConfig test;
  test.threads = std::max(1u, threads);

  RecordWriter out(output);
  std::size_t n = 0, errors = 0;
  for (const auto& path : inputs) {
    for_each_record(path, [&](const nlohmann::json& j) {
      if (record_type(j) != RecordType::Series) return;
      const SeriesRecord s = series_from_json(j);
      const auto schedule = override_schedule ? override_schedule : s.schedule;
      if (!schedule) {
        throw Error(ErrorKind::ConfigError, path + ": series " + s.series_id + " has no schedule; pass --schedule");
      }
      VerdictRecord v{s.series_id, analyze(s.series, *schedule, test), s.label};
      ++n;
      if (v.verdict.is_error()) ++errors;
      out.write(v);
    });
  }
  std::cerr << n << " series analyzed, " << errors << " errors\n";
  return n > 0 && errors == n ? kExitAllErrors : kExitOk;
}

int cmd_simulate(const std::string& scenario_path, const std::string& output, std::size_t seeds, unsigned threads) {
  ScenarioFile f = load_scenario_file(scenario_path);
  if (seeds > 0) f.seeds_per_scenario = seeds;
  if (threads > 0) f.threads = threads;
  RecordWriter out(output);
  for (const auto& l : generate_corpus(f.scenarios, f.seeds_per_scenario, f.threads)) out.write(to_series_record(l));
  std::cerr << out.count() << " labeled series written\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& group, const std::string& format,
               const std::string& output) {
  if (group != "pair" && group != "client" && group != "server") {
    throw Error(ErrorKind::ConfigError, "--group must be pair, client or server");
  }
  if (format != "text" && format != "jsonl") throw Error(ErrorKind::ConfigError, "--format must be text or jsonl");

  // Result records are counted; aggregate rows (other than totals) are summed.
  std::vector<ExperimentResult> results;
  std::map<std::pair<std::string, std::string>, AggregateRow> summed;
  for (const auto& path : inputs) {
    for_each_record(path, [&](const nlohmann::json& j) {
      const auto t = record_type(j);
      if (t == RecordType::Result) {
        results.push_back(result_from_json(j));
      } else if (t == RecordType::AggregateRow) {
        const AggregateRow r = aggregate_row_from_json(j);
        if (r.client_group == "All") return;
        auto& acc = summed[{r.client_group, r.server_group}];
        acc.client_group = r.client_group;
        acc.server_group = r.server_group;
        for (std::size_t c = 0; c < 4; ++c) acc.counts[c] += r.counts[c];
        acc.discarded += r.discarded;
      }
    });
  }
  for (auto& r : results) {
    if (group == "server") r.client_group = "All";
    if (group == "client") r.server_group = "All";
  }
  AggregateTable table = aggregate(results);
  for (auto& [key, row] : summed) {
    AggregateRow r = row;
    if (group == "server") r.client_group = "All";
    if (group == "client") r.server_group = "All";
    auto it = std::find_if(table.rows.begin(), table.rows.end(), [&](const AggregateRow& x) {
      return x.client_group == r.client_group && x.server_group == r.server_group;
    });
    if (it == table.rows.end()) {
      table.rows.push_back(r);
    } else {
      for (std::size_t c = 0; c < 4; ++c) it->counts[c] += r.counts[c];
      it->discarded += r.discarded;
    }
  }
  std::sort(table.rows.begin(), table.rows.end(), [](const AggregateRow& a, const AggregateRow& b) {
    return std::tie(a.client_group, a.server_group) < std::tie(b.client_group, b.server_group);
  });
  // Totals follow from the merged rows.
  std::map<std::string, AggregateRow> totals;
  for (const auto& r : table.rows) {
    auto& t = totals[r.server_group];
    t.client_group = "All";
    t.server_group = r.server_group;
    for (std::size_t c = 0; c < 4; ++c) t.counts[c] += r.counts[c];
    t.discarded += r.discarded;
  }
  table.totals.clear();
  if (group == "pair")
    for (auto& [k, t] : totals) table.totals.push_back(t);
  if (group == "server") table.totals.clear();

  RecordWriter out(output);
  if (format == "text") {
    std::string text = table.format();
    if (!text.empty() && text.back() == '\n') text.pop_back();
    out.write_line(text);
  } else {
    for (const auto& r : table.rows) out.write(r);
    for (const auto& r : table.totals) out.write(r);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detect IP-based packet drops between third-party hosts"};
  app.require_subcommand(1);

  std::string config_path, output, schedule_text, scenario_path, group = "pair", format = "text";
  std::vector<std::string> ranges, inputs;
  int duration_s = 0;
  bool ethics = false;
  std::size_t seeds = 0;
  unsigned threads = 0;

  auto* qualify = app.add_subcommand("qualify", "Check which clients use a global IPID counter");
  qualify->add_option("-c,--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  qualify->add_option("--range", ranges, "Address or CIDR block to probe (repeatable); defaults to target clients");
  qualify->add_option("--duration", duration_s, "Seconds of probing per address");
  qualify->add_option("-o,--output", output, "Output file (default: config output or stdout)");
  qualify->add_flag("--i-understand-ethics", ethics, "Acknowledge that the live backend probes third-party hosts");

  auto* measure = app.add_subcommand("measure", "Run the configured experiments");
  measure->add_option("-c,--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  measure->add_option("-o,--output", output, "Output file (default: config output or stdout)");
  measure->add_flag("--i-understand-ethics", ethics,
                    "Acknowledge that the live backend sends spoofed SYNs to third-party servers");

  auto* analyze_cmd = app.add_subcommand("analyze", "Classify stored series records");
  analyze_cmd->add_option("inputs", inputs, "Series record files")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("-o,--output", output, "Output file (default: stdout)");
  analyze_cmd->add_option("--schedule", schedule_text, "Retransmission offsets in ms, e.g. 0,1000,3000");
  analyze_cmd->add_option("--threads", threads, "Threads for order selection");

  auto* simulate = app.add_subcommand("simulate", "Generate a labeled corpus from a scenario file");
  simulate->add_option("scenarios", scenario_path, "Scenario file (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("-o,--output", output, "Output file (default: stdout)");
  simulate->add_option("--seeds", seeds, "Seeds per scenario (overrides the file)");
  simulate->add_option("--threads", threads, "Worker threads (overrides the file)");

  auto* report = app.add_subcommand("report", "Tabulate verdicts by client and server group");
  report->add_option("inputs", inputs, "Result or aggregate_row record files")->required()->check(CLI::ExistingFile);
  report->add_option("--group", group, "pair, client or server");
  report->add_option("--format", format, "text or jsonl");
  report->add_option("-o,--output", output, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*qualify) return cmd_qualify(config_path, ranges, duration_s, output, ethics);
    if (*measure) return cmd_measure(config_path, output, ethics);
    if (*analyze_cmd) return cmd_analyze(inputs, output, schedule_text, threads);
    if (*simulate) return cmd_simulate(scenario_path, output, seeds, threads);
    if (*report) return cmd_report(inputs, group, format, output);
  } catch (const Error& e) {
    std::cerr << "dropscan: " << e.what() << "\n";
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "dropscan: " << e.what() << "\n";
    return kExitEngine;
  }
  return kExitOk;
}

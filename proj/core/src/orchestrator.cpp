#include "dropscan/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "dropscan/error.hpp"

namespace dropscan {

void ExperimentPlan::validate() const {
  if (client == 0 || server == 0) throw Error(ErrorKind::ConfigError, "plan needs a client and a server");
  if (base_duration_s <= 0 || intervention_duration_s <= 0) {
    throw Error(ErrorKind::ConfigError, "plan durations must be positive");
  }
  if (cooldown_s < 0) throw Error(ErrorKind::ConfigError, "cooldown must not be negative");
  if (replications <= 0) throw Error(ErrorKind::ConfigError, "replications must be positive");
}

LivenessReport LivenessReport::evaluate(double avg_synacks, double response_fraction, bool sender_responsive) {
  LivenessReport r;
  r.server_avg_synacks = avg_synacks;
  r.client_response_fraction = response_fraction;
  r.sender_responsive = sender_responsive;
  r.passed = avg_synacks >= kMinAvgSynacks && response_fraction >= kMinResponseFraction && sender_responsive;
  return r;
}

ExperimentResult run_experiment(const ExperimentPlan& plan, ProbeEngine& engine, const ScheduleMeasurement& measured,
                                const TestConfig& config) {
  plan.validate();
  ExperimentResult res;
  res.client = plan.client;
  res.server = plan.server;
  res.server_port = plan.server_port;
  res.client_group = plan.client_group;
  res.server_group = plan.server_group;
  res.schedule = measured.schedule;
  res.started_ms = engine.now();

  SessionResult session;
  try {
    session = engine.run_session(
        {plan.client, plan.server, plan.server_port, plan.base_duration_s, plan.intervention_duration_s});
    if (plan.cooldown_s > 0) {
      const Millis cooldown_end = res.started_ms + 1000.0 * (plan.base_duration_s + plan.intervention_duration_s) +
                                  1000.0 * plan.cooldown_s;
      // Leave room for the last probe's timeout inside the cooldown.
      const int recheck_s = std::max(2, plan.cooldown_s - engine.config().probe_timeout_ms / 1000 - 1);
      res.requalified = engine.qualify(plan.client, recheck_s).result.global;
      engine.idle_until(cooldown_end);
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::EngineFailure) throw;
    throw Error(ErrorKind::EngineFailure, e.what());
  }

  res.liveness = LivenessReport::evaluate(measured.avg_synacks, session.response_fraction(),
                                          session.sender_responsive());
  if (!res.liveness.passed) {
    res.verdict = Verdict::error("liveness");
    res.discarded = true;
  } else {
    try {
      res.series = build_diff_series(session.samples, engine.config().probe_interval_ms, session.first_forge_ms);
      res.verdict = analyze(res.series, res.schedule, config);
    } catch (const Error& e) {
      res.verdict = Verdict::error(e.what());
    }
  }
  res.finished_ms = engine.now();
  return res;
}

RoundOutput schedule_round(const std::vector<ExperimentPlan>& plans, unsigned parallelism,
                           const ExperimentRunner& runner,
                           const std::function<void(const ExperimentResult&)>& on_result) {
  for (const auto& p : plans) p.validate();
  parallelism = std::max(1u, parallelism);

  struct PlanState {
    int next = 0;
    bool running = false;
    bool void_next = false;
    std::vector<ExperimentResult> results;
  };
  std::vector<PlanState> state(plans.size());
  std::size_t remaining = 0;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    state[i].results.resize(static_cast<std::size_t>(plans[i].replications));
    remaining += static_cast<std::size_t>(plans[i].replications);
  }

  std::mutex m;
  std::condition_variable cv;
  std::multiset<Ipv4> busy;
  std::vector<ScheduleEvent> trace;
  std::uint64_t tick = 0;
  std::exception_ptr failure;

  // Lowest replication first so each round sweeps every pair before repeating.
  auto pick = [&]() -> std::optional<std::size_t> {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      const auto& s = state[i];
      if (s.running || s.next >= plans[i].replications) continue;
      if (busy.count(plans[i].client) || busy.count(plans[i].server)) continue;
      if (!best || s.next < state[*best].next) best = i;
    }
    return best;
  };

  auto worker = [&] {
    std::unique_lock lock(m);
    for (;;) {
      std::optional<std::size_t> idx;
      cv.wait(lock, [&] { return remaining == 0 || failure || (idx = pick()).has_value(); });
      if (remaining == 0 || failure) return;
      const std::size_t i = *idx;
      const ExperimentPlan& plan = plans[i];
      PlanState& s = state[i];
      const int rep = s.next;
      const bool voided = s.void_next;
      s.running = true;
      busy.insert(plan.client);
      busy.insert(plan.server);
      trace.push_back({tick++, true, i, rep, plan.client, plan.server});
      lock.unlock();

      ExperimentResult r;
      std::exception_ptr err;
      if (voided) {
        r.verdict = Verdict::error("previous qualification recheck failed");
        r.discarded = true;
      } else {
        try {
          r = runner(plan, i, rep);
        } catch (const Error& e) {
          r = ExperimentResult{};
          r.verdict = Verdict::error(e.what());
          r.discarded = true;
        } catch (...) {
          err = std::current_exception();
        }
      }
      r.plan_index = i;
      r.replication = rep;
      r.client = plan.client;
      r.server = plan.server;
      r.server_port = plan.server_port;
      r.client_group = plan.client_group;
      r.server_group = plan.server_group;

      lock.lock();
      trace.push_back({tick++, false, i, rep, plan.client, plan.server});
      busy.erase(busy.find(plan.client));
      busy.erase(busy.find(plan.server));
      s.running = false;
      s.void_next = !voided && !r.requalified;
      ++s.next;
      --remaining;
      if (err && !failure) failure = err;
      if (!err && on_result) on_result(r);
      s.results[static_cast<std::size_t>(rep)] = std::move(r);
      cv.notify_all();
    }
  };

  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < parallelism; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  RoundOutput out;
  for (auto& s : state)
    for (auto& r : s.results) out.results.push_back(std::move(r));
  out.trace = std::move(trace);
  return out;
}

bool exclusivity_holds(const std::vector<ScheduleEvent>& trace) {
  std::multiset<Ipv4> active;
  for (const auto& e : trace) {
    if (e.start) {
      if (active.count(e.client) || active.count(e.server)) return false;
      active.insert(e.client);
      active.insert(e.server);
    } else {
      for (Ipv4 a : {e.client, e.server}) {
        auto it = active.find(a);
        if (it == active.end()) return false;
        active.erase(it);
      }
    }
  }
  return true;
}

const SimWorld::Client* SimWorld::client(Ipv4 a) const {
  auto it = std::find_if(clients.begin(), clients.end(), [&](const Client& c) { return c.addr == a; });
  return it == clients.end() ? nullptr : &*it;
}

const SimWorld::Server* SimWorld::server(Ipv4 a) const {
  auto it = std::find_if(servers.begin(), servers.end(), [&](const Server& s) { return s.addr == a; });
  return it == servers.end() ? nullptr : &*it;
}

VerdictCase SimWorld::truth(Ipv4 c, Ipv4 s, std::uint16_t port) const {
  for (const auto& rule : censors) {
    if (rule.direction == CensorDirection::None || rule.drop_prob <= 0.0) continue;
    if (rule.client && *rule.client != c) continue;
    if (rule.server && *rule.server != s) continue;
    if (rule.server_port && *rule.server_port != port) continue;
    return truth_for(rule.direction);
  }
  return VerdictCase::NoPacketsDropped;
}

NetworkConfig SimWorld::network_for(Ipv4 c, Ipv4 s, std::uint64_t net_seed) const {
  const Client* cl = client(c);
  const Server* sv = server(s);
  if (!cl) throw Error(ErrorKind::ConfigError, "unknown client " + format_ipv4(c));
  if (!sv) throw Error(ErrorKind::ConfigError, "unknown server " + format_ipv4(s));
  NetworkConfig n;
  n.measurement_addrs = {SimAddresses::measurement_a, SimAddresses::measurement_b, SimAddresses::listener};
  n.clients.push_back({cl->addr, cl->model});
  n.servers.push_back({sv->addr, sv->model});
  for (const auto& rule : censors) {
    if (rule.client && *rule.client != c) continue;
    if (rule.server && *rule.server != s) continue;
    n.censors.push_back(rule);
  }
  n.loss_prob = loss_prob;
  n.delay_ms = delay_ms;
  n.delay_jitter_ms = delay_jitter_ms;
  n.egress_rewrite = egress_rewrite;
  n.record_trace = false;
  n.seed = net_seed;
  return n;
}

ExperimentRunner make_sim_runner(const SimWorld& world, const EngineConfig& engine_cfg, const TestConfig& config) {
  engine_cfg.validate();
  config.validate();
  return [world, engine_cfg, config](const ExperimentPlan& plan, std::size_t plan_index, int replication) {
    // splitmix64 over (world seed, plan, replication)
    std::uint64_t z = world.seed + 0x9E3779B97F4A7C15ULL * (plan_index * 1000003ULL + static_cast<std::uint64_t>(replication) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;

    NetworkConfig nc = world.network_for(plan.client, plan.server, z);
    nc.measurement_addrs = {engine_cfg.return_addr_a, engine_cfg.return_addr_b, SimAddresses::listener};
    SimBackend backend(nc, engine_cfg.capture_filter({SimAddresses::listener}));
    ProbeEngine engine(backend, engine_cfg, z ^ 0x5DEECE66DULL);
    engine.spoof_self_test(SimAddresses::listener, plan.client);
    const ScheduleMeasurement measured = engine.measure_retrans_schedule(plan.server, plan.server_port);
    ExperimentResult r = run_experiment(plan, engine, measured, config);
    r.truth = world.truth(plan.client, plan.server, plan.server_port);
    return r;
  };
}

double AggregateRow::percent(std::size_t column) const noexcept {
  const std::size_t n = total();
  if (n == 0 || column >= counts.size()) return 0.0;
  return std::round(10000.0 * static_cast<double>(counts[column]) / static_cast<double>(n)) / 100.0;
}

AggregateRow make_row(std::string client_group, std::string server_group, std::array<std::size_t, 4> counts) {
  AggregateRow r;
  r.client_group = std::move(client_group);
  r.server_group = std::move(server_group);
  r.counts = counts;
  return r;
}

namespace {

std::size_t column_of(VerdictCase c) {
  switch (c) {
    case VerdictCase::ServerToClientDropped: return 0;
    case VerdictCase::NoPacketsDropped: return 1;
    case VerdictCase::ClientToServerDropped: return 2;
    case VerdictCase::Error: break;
  }
  return 3;
}

}  // namespace

AggregateTable aggregate(const std::vector<ExperimentResult>& results) {
  std::map<std::pair<std::string, std::string>, AggregateRow> rows;
  std::map<std::string, AggregateRow> totals;
  for (const auto& r : results) {
    auto& row = rows[{r.client_group, r.server_group}];
    auto& tot = totals[r.server_group];
    row.client_group = r.client_group;
    row.server_group = r.server_group;
    tot.client_group = "All";
    tot.server_group = r.server_group;
    if (r.discarded) {
      ++row.discarded;
      ++tot.discarded;
      continue;
    }
    const std::size_t col = column_of(r.verdict.kase);
    ++row.counts[col];
    ++tot.counts[col];
  }
  AggregateTable t;
  for (auto& [key, row] : rows) t.rows.push_back(std::move(row));
  for (auto& [key, row] : totals) t.totals.push_back(std::move(row));
  return t;
}

std::string AggregateTable::format() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %18s %18s %18s %18s %9s\n", "Client,Server", "S->C (%)", "None (%)",
                "C->S (%)", "Error (%)", "Discarded");
  out += buf;
  auto line = [&](const AggregateRow& r) {
    char cell[4][40];
    for (std::size_t c = 0; c < 4; ++c) {
      std::snprintf(cell[c], sizeof cell[c], "%zu (%.2f)", r.counts[c], r.percent(c));
    }
    const std::string label = r.client_group + "," + r.server_group;
    std::snprintf(buf, sizeof buf, "%-28s %18s %18s %18s %18s %9zu\n", label.c_str(), cell[0], cell[1], cell[2],
                  cell[3], r.discarded);
    out += buf;
  };
  for (const auto& r : rows) line(r);
  for (const auto& r : totals) line(r);
  return out;
}

}  // namespace dropscan

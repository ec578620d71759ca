#include "dropscan/netsim.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "dropscan/error.hpp"

namespace dropscan {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorKind::InvalidArgument, what);
}

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

// ---------------------------------------------------------------------------
// Models

NoiseModel NoiseModel::compound_poisson(double rate, double size_mean, double spread_ms) {
  NoiseModel n;
  n.kind = Kind::CompoundPoisson;
  n.burst_rate = rate;
  n.burst_size_mean = size_mean;
  n.burst_spread_ms = spread_ms;
  return n;
}

NoiseModel NoiseModel::ar1(double phi, double mean, double sigma) {
  NoiseModel n;
  n.kind = Kind::Ar1;
  n.ar_phi = phi;
  n.ar_mean = mean;
  n.ar_sigma = sigma;
  return n;
}

void NoiseModel::validate() const {
  switch (kind) {
    case Kind::Idle:
      break;
    case Kind::CompoundPoisson:
      require(burst_rate >= 0.0 && std::isfinite(burst_rate), "burst_rate must be non-negative");
      require(burst_size_mean >= 1.0 && std::isfinite(burst_size_mean), "burst_size_mean must be at least 1");
      require(burst_spread_ms >= 0.0 && std::isfinite(burst_spread_ms), "burst_spread_ms must be non-negative");
      break;
    case Kind::Ar1:
      require(std::abs(ar_phi) < 1.0, "ar_phi must lie in (-1, 1)");
      require(ar_mean >= 0.0 && std::isfinite(ar_mean), "ar_mean must be non-negative");
      require(ar_sigma >= 0.0 && std::isfinite(ar_sigma), "ar_sigma must be non-negative");
      break;
  }
}

void ClientModel::validate() const {
  noise.validate();
  require(is_probability(rst_response), "rst_response must be a probability");
}

void ServerModel::validate() const {
  schedule.validate();
  require(backlog_timeout_s >= 30 && backlog_timeout_s <= 180, "backlog_timeout_s must lie in [30, 180]");
  require(backlog_capacity > 0, "backlog_capacity must be positive");
  require(open_port > 0, "open_port must be in [1, 65535]");
}

std::string_view to_string(CensorDirection d) noexcept {
  switch (d) {
    case CensorDirection::None: return "None";
    case CensorDirection::ServerToClient: return "ServerToClient";
    case CensorDirection::ClientToServer: return "ClientToServer";
  }
  return "None";
}

std::optional<CensorDirection> censor_direction_from_string(std::string_view s) noexcept {
  if (s == "None") return CensorDirection::None;
  if (s == "ServerToClient") return CensorDirection::ServerToClient;
  if (s == "ClientToServer") return CensorDirection::ClientToServer;
  return std::nullopt;
}

VerdictCase truth_for(CensorDirection d) noexcept {
  switch (d) {
    case CensorDirection::ServerToClient: return VerdictCase::ServerToClientDropped;
    case CensorDirection::ClientToServer: return VerdictCase::ClientToServerDropped;
    case CensorDirection::None: break;
  }
  return VerdictCase::NoPacketsDropped;
}

void CensorPolicy::validate() const { require(is_probability(drop_prob), "drop_prob must be a probability"); }

void NetworkConfig::validate() const {
  require(!measurement_addrs.empty(), "at least one measurement address is required");
  require(is_probability(loss_prob), "loss_prob must be a probability");
  require(delay_ms >= 0.0 && std::isfinite(delay_ms), "delay_ms must be non-negative");
  require(delay_jitter_ms >= 0.0 && std::isfinite(delay_jitter_ms), "delay_jitter_ms must be non-negative");
  std::vector<Ipv4> all = measurement_addrs;
  for (const auto& c : clients) {
    c.model.validate();
    all.push_back(c.addr);
  }
  for (const auto& s : servers) {
    s.model.validate();
    all.push_back(s.addr);
  }
  for (const auto& c : censors) c.validate();
  std::sort(all.begin(), all.end());
  require(std::adjacent_find(all.begin(), all.end()) == all.end(), "host addresses must be distinct");
}

// ---------------------------------------------------------------------------
// Trace

void EventTrace::add(Millis t, std::string actor, std::string event, std::string detail) {
  events.push_back({t, std::move(actor), std::move(event), std::move(detail)});
}

std::size_t EventTrace::count(std::string_view actor, std::string_view event) const {
  return static_cast<std::size_t>(std::count_if(events.begin(), events.end(), [&](const TraceEvent& e) {
    return e.actor == actor && e.event == event;
  }));
}

std::string EventTrace::to_jsonl() const {
  std::string out;
  for (const auto& e : events) {
    nlohmann::json j{{"time_ms", e.time_ms}, {"actor", e.actor}, {"event", e.event}, {"detail", e.detail}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network

struct Network::Impl {
  enum class Kind : std::uint8_t { Deliver, NoiseBurst, NoisePacket, NoiseSlot, Retransmit, Timeout };

  struct Event {
    Millis t = 0;
    std::uint64_t order = 0;
    Kind kind = Kind::Deliver;
    std::size_t host = 0;
    std::uint64_t entry = 0;
    int index = 0;
    Packet packet;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.t != b.t ? a.t > b.t : a.order > b.order;
    }
  };

  struct ClientState {
    Ipv4 addr = 0;
    ClientModel model;
    std::uint16_t counter = 0;
    std::uint64_t sent = 0;
    std::map<Ipv4, std::uint16_t> per_destination;
    double ar_state = 0.0;
  };

  struct Entry {
    std::uint64_t id = 0;
    std::uint32_t syn_seq = 0;
    std::uint32_t isn = 0;
    std::uint16_t local_port = 0;
    std::size_t record = 0;
  };
  using Key = std::pair<Ipv4, std::uint16_t>;

  struct ServerState {
    Ipv4 addr = 0;
    ServerModel model;
    std::uint16_t counter = 0;
    std::map<Key, Entry> backlog;
    std::map<std::uint64_t, Key> by_age;  // entry id -> key, oldest first
    std::vector<BacklogRecord> history;
  };

  enum class Origin : std::uint8_t { Measurement, Client, Server };

  NetworkConfig cfg;
  std::mt19937_64 rng;
  Millis now = 0;
  std::uint64_t order = 0;
  std::uint64_t next_entry = 1;
  std::priority_queue<Event, std::vector<Event>, Later> queue;
  std::vector<ClientState> clients;
  std::vector<ServerState> servers;
  std::unordered_map<Ipv4, std::size_t> client_index, server_index;
  std::vector<CapturedPacket> captured;
  EventTrace trace;

  explicit Impl(NetworkConfig c) : cfg(std::move(c)), rng(cfg.seed) {
    cfg.validate();
    for (const auto& c2 : cfg.clients) {
      ClientState s;
      s.addr = c2.addr;
      s.model = c2.model;
      s.counter = c2.model.initial_ipid;
      client_index[s.addr] = clients.size();
      clients.push_back(std::move(s));
    }
    for (const auto& s2 : cfg.servers) {
      ServerState s;
      s.addr = s2.addr;
      s.model = s2.model;
      s.counter = static_cast<std::uint16_t>(rng());
      server_index[s.addr] = servers.size();
      servers.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < clients.size(); ++i) start_noise(i);
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
  bool chance(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform() < p;
  }

  void log(const char* actor, const char* event, std::string detail = {}) {
    if (cfg.record_trace) trace.add(now, actor, event, std::move(detail));
  }

  void push(Event e) {
    e.order = order++;
    queue.push(std::move(e));
  }

  bool is_measurement(Ipv4 a) const {
    return std::find(cfg.measurement_addrs.begin(), cfg.measurement_addrs.end(), a) != cfg.measurement_addrs.end();
  }

  // -- noise ---------------------------------------------------------------

  void start_noise(std::size_t ci) {
    const auto& n = clients[ci].model.noise;
    if (n.kind == NoiseModel::Kind::CompoundPoisson && n.burst_rate > 0.0) {
      schedule_burst(ci, now);
    } else if (n.kind == NoiseModel::Kind::Ar1) {
      const double sd = n.ar_sigma / std::sqrt(1.0 - n.ar_phi * n.ar_phi);
      clients[ci].ar_state = sd * std::normal_distribution<double>(0.0, 1.0)(rng);
      Event e;
      e.t = now;
      e.kind = Kind::NoiseSlot;
      e.host = ci;
      push(e);
    }
  }

  void schedule_burst(std::size_t ci, Millis from) {
    const double rate_per_ms = clients[ci].model.noise.burst_rate / 1000.0;
    Event e;
    e.t = from + std::exponential_distribution<double>(rate_per_ms)(rng);
    e.kind = Kind::NoiseBurst;
    e.host = ci;
    push(e);
  }

  void noise_burst(std::size_t ci) {
    const auto& n = clients[ci].model.noise;
    const int k = 1 + std::geometric_distribution<int>(1.0 / n.burst_size_mean)(rng);
    log("client", "noise_burst", std::to_string(k));
    for (int i = 0; i < k; ++i) {
      Event e;
      e.t = now + (n.burst_spread_ms > 0.0 ? n.burst_spread_ms * uniform() : 0.0);
      e.kind = Kind::NoisePacket;
      e.host = ci;
      push(e);
    }
    schedule_burst(ci, now);
  }

  void noise_slot(std::size_t ci) {
    auto& c = clients[ci];
    const auto& n = c.model.noise;
    c.ar_state = n.ar_phi * c.ar_state + n.ar_sigma * std::normal_distribution<double>(0.0, 1.0)(rng);
    const long k = std::max(0L, std::lround(n.ar_mean + c.ar_state));
    for (long i = 0; i < k; ++i) {
      Event e;
      e.t = now + 1000.0 * uniform();
      e.kind = Kind::NoisePacket;
      e.host = ci;
      push(e);
    }
    Event next;
    next.t = now + 1000.0;
    next.kind = Kind::NoiseSlot;
    next.host = ci;
    push(next);
  }

  // -- transmission --------------------------------------------------------

  std::uint16_t next_client_ipid(ClientState& c, Ipv4 dst) {
    switch (c.model.ipid_mode) {
      case IpidMode::Global:
        return ++c.counter;
      case IpidMode::PerDestination: {
        auto it = c.per_destination.find(dst);
        if (it == c.per_destination.end()) {
          it = c.per_destination.emplace(dst, static_cast<std::uint16_t>(rng())).first;
        }
        return ++it->second;
      }
      case IpidMode::Constant:
        return 0;
      case IpidMode::Random:
        return static_cast<std::uint16_t>(rng());
    }
    return 0;
  }

  bool censored(Origin origin, const Packet& p) {
    Ipv4 client = 0, server = 0;
    CensorDirection dir = CensorDirection::None;
    std::uint16_t server_port = 0;
    if (origin == Origin::Client && server_index.count(p.dst)) {
      dir = CensorDirection::ClientToServer;
      client = p.src;
      server = p.dst;
      server_port = p.dst_port;
    } else if (origin == Origin::Server && client_index.count(p.dst)) {
      dir = CensorDirection::ServerToClient;
      client = p.dst;
      server = p.src;
      server_port = p.src_port;
    } else {
      return false;
    }
    for (const auto& rule : cfg.censors) {
      if (rule.direction != dir) continue;
      if (rule.client && *rule.client != client) continue;
      if (rule.server && *rule.server != server) continue;
      if (rule.server_port && p.is_tcp() && *rule.server_port != server_port) continue;
      if (chance(rule.drop_prob)) return true;
    }
    return false;
  }

  void transmit(Origin origin, const char* actor, Packet p) {
    if (cfg.record_trace) log(actor, "send", describe(p));
    if (censored(origin, p)) {
      if (cfg.record_trace) log("censor", "drop", describe(p));
      return;
    }
    if (chance(cfg.loss_prob)) {
      if (cfg.record_trace) log("net", "loss", describe(p));
      return;
    }
    Event e;
    e.t = now + cfg.delay_ms + (cfg.delay_jitter_ms > 0.0 ? cfg.delay_jitter_ms * uniform() : 0.0);
    e.kind = Kind::Deliver;
    e.packet = std::move(p);
    push(std::move(e));
  }

  void client_send(ClientState& c, Packet p) {
    p.src = c.addr;
    p.ipid = next_client_ipid(c, p.dst);
    ++c.sent;
    transmit(Origin::Client, "client", std::move(p));
  }

  void server_send(ServerState& s, Packet p) {
    p.src = s.addr;
    p.ipid = ++s.counter;
    transmit(Origin::Server, "server", std::move(p));
  }

  // -- hosts ---------------------------------------------------------------

  void client_receive(ClientState& c, const Packet& p) {
    if (!p.is_tcp()) return;
    if (p.is_synack()) {
      if (c.model.icmp_unreachable) {
        Packet r;
        r.protocol = Protocol::Icmp;
        r.dst = p.src;
        r.icmp_type = 3;
        r.icmp_code = 13;
        r.quoted = QuotedTcp{p.src, p.dst, p.src_port, p.dst_port, p.seq};
        client_send(c, r);
        return;
      }
      if (!chance(c.model.rst_response)) {
        log("client", "ignore", describe(p));
        return;
      }
      Packet r;
      r.dst = p.src;
      r.src_port = p.dst_port;
      r.dst_port = p.src_port;
      r.flags = tcp::kRst;
      r.seq = p.ack;
      r.window = 0;
      client_send(c, r);
    } else if (p.is_syn()) {
      Packet r;
      r.dst = p.src;
      r.src_port = p.dst_port;
      r.dst_port = p.src_port;
      r.flags = tcp::kRst | tcp::kAck;
      r.ack = p.seq + 1;
      r.window = 0;
      client_send(c, r);
    }
  }

  void remove_entry(ServerState& s, std::map<Key, Entry>::iterator it, const char* reason) {
    s.history[it->second.record].end_reason = reason;
    s.by_age.erase(it->second.id);
    s.backlog.erase(it);
  }

  void send_synack(ServerState& s, const Key& key, Entry& e) {
    Packet sa;
    sa.dst = key.first;
    sa.src_port = e.local_port;
    sa.dst_port = key.second;
    sa.flags = tcp::kSyn | tcp::kAck;
    sa.seq = e.isn;
    sa.ack = e.syn_seq + 1;
    ++s.history[e.record].transmissions;
    server_send(s, sa);
  }

  void server_receive(std::size_t si, const Packet& p) {
    ServerState& s = servers[si];
    if (!p.is_tcp()) return;
    const Key key{p.src, p.src_port};
    if (p.is_syn()) {
      if (p.dst_port != s.model.open_port) {
        Packet r;
        r.dst = p.src;
        r.src_port = p.dst_port;
        r.dst_port = p.src_port;
        r.flags = tcp::kRst | tcp::kAck;
        r.ack = p.seq + 1;
        r.window = 0;
        server_send(s, r);
        return;
      }
      if (s.backlog.count(key)) {
        log("server", "dup_syn", describe(p));
        return;
      }
      if (s.backlog.size() >= s.model.backlog_capacity) {
        const Key oldest = s.by_age.begin()->second;
        log("server", "backlog_evict", format_ipv4(oldest.first) + ":" + std::to_string(oldest.second));
        remove_entry(s, s.backlog.find(oldest), "evicted");
      }
      Entry e;
      e.id = next_entry++;
      e.syn_seq = p.seq;
      e.isn = static_cast<std::uint32_t>(rng());
      e.local_port = p.dst_port;
      e.record = s.history.size();
      s.history.push_back({p.src, p.src_port, now, 0, {}});
      auto [it, inserted] = s.backlog.emplace(key, e);
      s.by_age.emplace(e.id, key);
      log("server", "backlog_add", format_ipv4(p.src) + ":" + std::to_string(p.src_port));
      send_synack(s, key, it->second);

      const auto& sched = s.model.schedule;
      const double timeout_ms = 1000.0 * s.model.backlog_timeout_s;
      for (int i = 1; i < sched.r; ++i) {
        const auto off = static_cast<double>(sched.offsets_ms[static_cast<std::size_t>(i)]);
        if (off >= timeout_ms) break;
        Event ev;
        ev.t = now + off;
        ev.kind = Kind::Retransmit;
        ev.host = si;
        ev.entry = e.id;
        ev.index = i;
        push(ev);
      }
      Event to;
      to.t = now + timeout_ms;
      to.kind = Kind::Timeout;
      to.host = si;
      to.entry = e.id;
      push(to);
      return;
    }
    if (p.is_rst()) {
      auto it = s.backlog.find(key);
      if (it != s.backlog.end() && p.dst_port == it->second.local_port && p.seq == it->second.syn_seq + 1) {
        log("server", "backlog_clear", format_ipv4(p.src) + ":" + std::to_string(p.src_port));
        remove_entry(s, it, "rst");
      } else {
        log("server", "rst_ignored", describe(p));
      }
    }
  }

  std::map<Key, Entry>::iterator live_entry(ServerState& s, std::uint64_t id) {
    auto a = s.by_age.find(id);
    if (a == s.by_age.end()) return s.backlog.end();
    return s.backlog.find(a->second);
  }

  void deliver(Packet p) {
    if (is_measurement(p.dst)) {
      if (cfg.record_trace) log("measurement", "recv", describe(p));
      captured.push_back({now, std::move(p)});
      return;
    }
    if (auto it = client_index.find(p.dst); it != client_index.end()) {
      if (cfg.record_trace) log("client", "recv", describe(p));
      client_receive(clients[it->second], p);
      return;
    }
    if (auto it = server_index.find(p.dst); it != server_index.end()) {
      if (cfg.record_trace) log("server", "recv", describe(p));
      server_receive(it->second, p);
      return;
    }
    if (cfg.record_trace) log("net", "unroutable", describe(p));
  }

  void handle(Event& e) {
    switch (e.kind) {
      case Kind::Deliver:
        deliver(std::move(e.packet));
        break;
      case Kind::NoiseBurst:
        noise_burst(e.host);
        break;
      case Kind::NoisePacket: {
        // Background traffic leaves the simulated topology; only the IPID
        // it consumes matters.
        auto& c = clients[e.host];
        next_client_ipid(c, 0);
        ++c.sent;
        break;
      }
      case Kind::NoiseSlot:
        noise_slot(e.host);
        break;
      case Kind::Retransmit: {
        auto& s = servers[e.host];
        auto it = live_entry(s, e.entry);
        if (it != s.backlog.end()) send_synack(s, it->first, it->second);
        break;
      }
      case Kind::Timeout: {
        auto& s = servers[e.host];
        auto it = live_entry(s, e.entry);
        if (it != s.backlog.end()) {
          log("server", "backlog_timeout", format_ipv4(it->first.first) + ":" + std::to_string(it->first.second));
          remove_entry(s, it, "timeout");
        }
        break;
      }
    }
  }

  void run_until(Millis t) {
    while (!queue.empty() && queue.top().t <= t) {
      Event e = queue.top();
      queue.pop();
      now = e.t;
      handle(e);
    }
    now = std::max(now, t);
  }

  void inject(Packet p) {
    if (cfg.egress_rewrite && !is_measurement(p.src)) {
      log("measurement", "nat_rewrite", describe(p));
      p.src = cfg.measurement_addrs.front();
    }
    transmit(Origin::Measurement, "measurement", std::move(p));
  }
};

Network::Network(NetworkConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}
Network::~Network() = default;

Millis Network::now() const noexcept { return impl_->now; }
void Network::run_until(Millis t) { impl_->run_until(t); }
void Network::inject(const Packet& p) { impl_->inject(p); }

std::vector<CapturedPacket> Network::take_captured() {
  std::vector<CapturedPacket> out;
  out.swap(impl_->captured);
  return out;
}

const EventTrace& Network::trace() const noexcept { return impl_->trace; }
const NetworkConfig& Network::config() const noexcept { return impl_->cfg; }

std::uint16_t Network::client_ipid(Ipv4 client) const {
  auto it = impl_->client_index.find(client);
  if (it == impl_->client_index.end()) throw Error(ErrorKind::InvalidArgument, "unknown client " + format_ipv4(client));
  return impl_->clients[it->second].counter;
}

std::uint64_t Network::client_packets_sent(Ipv4 client) const {
  auto it = impl_->client_index.find(client);
  if (it == impl_->client_index.end()) throw Error(ErrorKind::InvalidArgument, "unknown client " + format_ipv4(client));
  return impl_->clients[it->second].sent;
}

std::size_t Network::backlog_size(Ipv4 server) const {
  auto it = impl_->server_index.find(server);
  if (it == impl_->server_index.end()) throw Error(ErrorKind::InvalidArgument, "unknown server " + format_ipv4(server));
  return impl_->servers[it->second].backlog.size();
}

const std::vector<BacklogRecord>& Network::backlog_history(Ipv4 server) const {
  auto it = impl_->server_index.find(server);
  if (it == impl_->server_index.end()) throw Error(ErrorKind::InvalidArgument, "unknown server " + format_ipv4(server));
  return impl_->servers[it->second].history;
}

// ---------------------------------------------------------------------------
// Single-pair experiments

PortPool::PortPool(std::uint16_t start) noexcept
    : cur_(static_cast<std::uint16_t>(kLow + (start % (kHigh - kLow + 1)))) {}

std::uint16_t PortPool::next() noexcept {
  const std::uint16_t out = cur_;
  cur_ = cur_ == kHigh ? kLow : static_cast<std::uint16_t>(cur_ + 1);
  return out;
}

void SimScenario::validate() const {
  client.validate();
  server.validate();
  censor.validate();
  require(probe_interval_ms > 0, "probe_interval_ms must be positive");
  require(forge_rate_per_s > 0, "forge_rate_per_s must be positive");
  require(base_duration_s > 0 && intervention_duration_s > 0, "durations must be positive");
  require(is_probability(loss_prob), "loss_prob must be a probability");
  require(delay_ms >= 0.0 && delay_jitter_ms >= 0.0, "delays must be non-negative");
}

NetworkConfig SimScenario::network_config() const {
  NetworkConfig n;
  n.measurement_addrs = {SimAddresses::measurement_a, SimAddresses::measurement_b, SimAddresses::listener};
  n.clients.push_back({SimAddresses::client, client});
  n.servers.push_back({SimAddresses::server, server});
  if (censor.direction != CensorDirection::None) n.censors.push_back(censor);
  n.loss_prob = loss_prob;
  n.delay_ms = delay_ms;
  n.delay_jitter_ms = delay_jitter_ms;
  n.seed = seed;
  return n;
}

DiffSeries SimOutcome::series() const { return build_diff_series(samples, interval_ms, first_forge_ms); }

SimOutcome run_sim(const SimScenario& sc) {
  sc.validate();
  Network net(sc.network_config());
  // Driver randomness is kept apart from the network's stream.
  std::mt19937_64 rng(sc.seed ^ 0xA5A5A5A55A5A5A5AULL);
  auto rand32 = [&] { return static_cast<std::uint32_t>(rng()); };

  const Ipv4 client = SimAddresses::client;
  const Ipv4 server = SimAddresses::server;
  const Ipv4 ret = SimAddresses::measurement_a;
  const double interval = sc.probe_interval_ms;
  const double base_ms = 1000.0 * sc.base_duration_s;
  const double end_ms = base_ms + 1000.0 * sc.intervention_duration_s;
  const auto n_probes = static_cast<std::size_t>(end_ms / interval);
  const auto n_forged = static_cast<std::size_t>(sc.forge_rate_per_s) * static_cast<std::size_t>(sc.intervention_duration_s);
  const double spacing = 1000.0 / sc.forge_rate_per_s;
  // Forged SYNs sit a tenth of an interval after the probe grid so their
  // SYN/ACKs land between two probes.
  const double forge_phase = interval / 10.0;

  struct Action {
    double t;
    int kind;  // 0 probe, 1 forge
    std::size_t index;
  };
  std::vector<Action> actions;
  actions.reserve(n_probes + n_forged);
  for (std::size_t k = 0; k < n_probes; ++k) actions.push_back({interval * static_cast<double>(k), 0, k});
  for (std::size_t j = 0; j < n_forged; ++j) {
    actions.push_back({base_ms + forge_phase + spacing * static_cast<double>(j), 1, j});
  }
  std::stable_sort(actions.begin(), actions.end(), [](const Action& a, const Action& b) {
    return a.t != b.t ? a.t < b.t : a.kind < b.kind;
  });

  SimOutcome out;
  out.truth = truth_for(sc.censor.direction);
  out.schedule = sc.server.schedule;
  out.interval_ms = sc.probe_interval_ms;
  out.samples.resize(n_probes);

  struct ProbeKey {
    std::uint16_t port;
    std::uint32_t seq;
  };
  std::unordered_map<std::uint32_t, std::size_t> probe_by_ack;
  std::vector<ProbeKey> probe_keys(n_probes);
  PortPool probe_ports(static_cast<std::uint16_t>(rng()));
  PortPool forge_ports(static_cast<std::uint16_t>(rng()));
  std::vector<std::pair<std::uint16_t, std::uint32_t>> forged;  // (source port, seq)
  forged.reserve(n_forged);

  for (const auto& a : actions) {
    net.run_until(a.t);
    if (a.kind == 0) {
      Packet p;
      p.src = ret;
      p.dst = client;
      p.src_port = sc.server.open_port;
      p.dst_port = probe_ports.next();
      p.flags = tcp::kSyn | tcp::kAck;
      p.seq = rand32();
      p.ack = rand32();
      p.ipid = static_cast<std::uint16_t>(rng());
      probe_keys[a.index] = {p.dst_port, p.seq};
      probe_by_ack[p.ack] = a.index;
      auto& s = out.samples[a.index];
      s.probe_seq = a.index;
      s.send_time = net.now();
      s.source_label = SourceLabel::A;
      net.inject(p);
    } else {
      if (a.index == 0) out.first_forge_ms = net.now();
      Packet p;
      p.src = client;
      p.dst = server;
      p.src_port = forge_ports.next();
      p.dst_port = sc.server.open_port;
      p.flags = tcp::kSyn;
      p.seq = rand32();
      p.ipid = static_cast<std::uint16_t>(rng());
      forged.emplace_back(p.src_port, p.seq);
      net.inject(p);
    }
  }

  net.run_until(end_ms);
  for (const auto& [port, seq] : forged) {
    Packet r;
    r.src = client;
    r.dst = server;
    r.src_port = port;
    r.dst_port = sc.server.open_port;
    r.flags = tcp::kRst;
    r.seq = seq + 1;
    r.window = 0;
    net.inject(r);
  }
  // Leave time for the last responses and resets to land.
  constexpr double kProbeTimeoutMs = 3000.0;
  net.run_until(end_ms + kProbeTimeoutMs);

  for (const auto& c : net.take_captured()) {
    const Packet& p = c.packet;
    std::optional<std::size_t> idx;
    ProbeOutcome outcome = ProbeOutcome::Response;
    if (p.is_rst() && p.src == client) {
      auto it = probe_by_ack.find(p.seq);
      if (it != probe_by_ack.end() && probe_keys[it->second].port == p.src_port) idx = it->second;
    } else if (p.is_icmp_unreachable() && p.quoted && p.quoted->dst == client) {
      for (std::size_t k = 0; k < n_probes && !idx; ++k) {
        if (probe_keys[k].port == p.quoted->dst_port && probe_keys[k].seq == p.quoted->seq) idx = k;
      }
      outcome = ProbeOutcome::IcmpUnreachable;
    }
    if (!idx) continue;
    auto& s = out.samples[*idx];
    if (s.recv_time || s.outcome == ProbeOutcome::IcmpUnreachable) continue;
    if (c.time - s.send_time > kProbeTimeoutMs) continue;
    s.outcome = outcome;
    if (outcome == ProbeOutcome::Response) {
      s.recv_time = c.time;
      s.ipid = p.ipid;
    }
  }

  out.final_client_ipid = net.client_ipid(client);
  out.client_packets_sent = net.client_packets_sent(client);
  out.backlog = net.backlog_history(server);
  out.trace = net.trace();
  return out;
}

std::vector<LabeledSeries> generate_corpus(const std::vector<SimScenario>& scenarios, std::size_t seeds_per_scenario,
                                           unsigned threads) {
  const std::size_t total = scenarios.size() * seeds_per_scenario;
  std::vector<LabeledSeries> out(total);
  if (total == 0) return out;

  auto work = [&](std::size_t i) {
    const std::size_t si = i / seeds_per_scenario;
    SimScenario sc = scenarios[si];
    sc.seed = scenarios[si].seed + (i % seeds_per_scenario);
    const SimOutcome o = run_sim(sc);
    LabeledSeries& rec = out[i];
    rec.scenario_index = si;
    rec.scenario_name = sc.name;
    rec.seed = sc.seed;
    rec.truth = o.truth;
    rec.schedule = o.schedule;
    rec.series = o.series();
  };

  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(total)));
  if (n == 1) {
    for (std::size_t i = 0; i < total; ++i) work(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < n; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < total; i += n) work(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace dropscan

#include "dropscan/probe_engine.hpp"

#include <algorithm>
#include <cmath>

#include "dropscan/error.hpp"

namespace dropscan {

void EngineConfig::validate() const {
  if (return_addr_a == return_addr_b) throw Error(ErrorKind::ConfigError, "return addresses must differ");
  if (forge_rate_per_s <= 0 || forge_rate_per_s > kMaxForgeRate) {
    throw Error(ErrorKind::ConfigError, "forge_rate_per_s must lie in [1, " + std::to_string(kMaxForgeRate) + "]");
  }
  if (probe_timeout_ms <= 0) throw Error(ErrorKind::ConfigError, "probe_timeout_ms must be positive");
  if (probe_interval_ms <= 0) throw Error(ErrorKind::ConfigError, "probe_interval_ms must be positive");
}

CaptureFilter EngineConfig::capture_filter(std::vector<Ipv4> extra) const {
  CaptureFilter f;
  f.local_addrs = {return_addr_a, return_addr_b};
  f.local_addrs.insert(f.local_addrs.end(), extra.begin(), extra.end());
  return f;
}

RateGuard::RateGuard(double rate_per_s, double window_ms, double tolerance)
    : window_ms_(window_ms),
      limit_(static_cast<std::size_t>(std::floor((1.0 + tolerance) * rate_per_s * window_ms / 1000.0 + 1e-9))) {
  if (limit_ == 0) throw Error(ErrorKind::InvalidArgument, "rate guard admits no sends");
}

Millis RateGuard::earliest(Millis t) const {
  const auto in_window = static_cast<std::size_t>(
      std::count_if(recent_.begin(), recent_.end(), [&](Millis s) { return s > t - window_ms_; }));
  if (in_window < limit_) return t;
  // The (in_window - limit + 1)-th oldest send in the window has to age out.
  const std::size_t first = recent_.size() - in_window;
  const Millis must_expire = recent_[first + in_window - limit_];
  return std::max(t, std::nextafter(must_expire + window_ms_, must_expire + 2.0 * window_ms_));
}

void RateGuard::record(Millis t) {
  recent_.push_back(t);
  while (!recent_.empty() && recent_.front() <= t - window_ms_) recent_.pop_front();
  max_seen_ = std::max(max_seen_, recent_.size());
}

double SessionResult::response_fraction() const noexcept {
  if (samples.empty()) return 0.0;
  const auto n = std::count_if(samples.begin(), samples.end(), [](const IpidSample& s) { return s.responded(); });
  return static_cast<double>(n) / static_cast<double>(samples.size());
}

ProbeEngine::ProbeEngine(PacketBackend& backend, EngineConfig config, std::uint64_t seed)
    : backend_(backend),
      cfg_(std::move(config)),
      rng_(seed),
      low_ports_(static_cast<std::uint16_t>(rng_())),
      forge_ports_(static_cast<std::uint16_t>(rng_())),
      guard_(cfg_.forge_rate_per_s) {
  cfg_.validate();
}

void ProbeEngine::transmit(const Packet& p) {
  backend_.send(p);
  if (archive_) archive_->write(backend_.now(), p);
}

std::vector<CapturedPacket> ProbeEngine::wait(Millis t) {
  auto got = backend_.wait_until(t);
  if (archive_)
    for (const auto& c : got) archive_->write(c.time, c.packet);
  return got;
}

void ProbeEngine::idle_until(Millis t) {
  if (t > backend_.now()) wait(t);
}

Packet ProbeEngine::make_probe(Ipv4 client, SourceLabel label, std::uint16_t server_port) {
  Packet p;
  p.src = label == SourceLabel::A ? cfg_.return_addr_a : cfg_.return_addr_b;
  p.dst = client;
  p.src_port = cfg_.probe_port_equals_server_port
                   ? server_port
                   : static_cast<std::uint16_t>(std::uniform_int_distribution<int>(1024, 65535)(rng_));
  p.dst_port = low_ports_.next();
  p.flags = tcp::kSyn | tcp::kAck;
  p.seq = static_cast<std::uint32_t>(rng_());
  p.ack = static_cast<std::uint32_t>(rng_());
  p.ipid = static_cast<std::uint16_t>(rng_());
  return p;
}

void ProbeEngine::dispatch(const std::vector<CapturedPacket>& packets, std::vector<IpidSample>& samples) {
  for (const auto& c : packets) {
    const Packet& p = c.packet;
    auto match = pending_.end();
    ProbeOutcome outcome = ProbeOutcome::Response;
    if (p.is_rst()) {
      match = std::find_if(pending_.begin(), pending_.end(), [&](const PendingProbe& q) {
        return q.client == p.src && q.port == p.src_port && q.ack == p.seq;
      });
    } else if (p.is_icmp_unreachable() && p.quoted) {
      match = std::find_if(pending_.begin(), pending_.end(), [&](const PendingProbe& q) {
        return q.client == p.quoted->dst && q.port == p.quoted->dst_port && q.seq == p.quoted->seq;
      });
      outcome = ProbeOutcome::IcmpUnreachable;
    }
    if (match == pending_.end()) continue;
    IpidSample& s = samples[match->slot];
    pending_.erase(match);
    if (c.time - s.send_time > cfg_.probe_timeout_ms) continue;
    s.outcome = outcome;
    if (outcome == ProbeOutcome::Response) {
      s.recv_time = c.time;
      s.ipid = p.ipid;
    }
  }
}

IpidSample ProbeEngine::probe_client(Ipv4 client, SourceLabel label) {
  std::vector<IpidSample> samples(1);
  const Packet p = make_probe(client, label, 0);
  samples[0].probe_seq = next_probe_seq_++;
  samples[0].source_label = label;
  samples[0].send_time = backend_.now();
  pending_.push_back({client, p.dst_port, p.seq, p.ack, 0});
  transmit(p);
  const Millis deadline = samples[0].send_time + cfg_.probe_timeout_ms;
  while (backend_.now() < deadline && !samples[0].responded() &&
         samples[0].outcome != ProbeOutcome::IcmpUnreachable) {
    dispatch(wait(std::min(deadline, backend_.now() + 50.0)), samples);
  }
  pending_.clear();
  return samples[0];
}

QualificationOutcome ProbeEngine::qualify(Ipv4 client, int duration_s) {
  if (duration_s < 2) throw Error(ErrorKind::InvalidArgument, "qualification needs at least two seconds");
  QualificationOutcome out;
  const auto n = static_cast<std::size_t>(duration_s) * 1000 / static_cast<std::size_t>(cfg_.probe_interval_ms);
  out.samples.resize(n);
  const Millis start = backend_.now();
  for (std::size_t k = 0; k < n; ++k) {
    const Millis t = start + static_cast<double>(k) * cfg_.probe_interval_ms;
    dispatch(wait(t), out.samples);
    const SourceLabel label = k % 2 == 0 ? SourceLabel::A : SourceLabel::B;
    const Packet p = make_probe(client, label, 0);
    auto& s = out.samples[k];
    s.probe_seq = k;
    s.source_label = label;
    s.send_time = backend_.now();
    pending_.push_back({client, p.dst_port, p.seq, p.ack, k});
    transmit(p);
  }
  dispatch(wait(backend_.now() + cfg_.probe_timeout_ms), out.samples);
  pending_.clear();
  out.diffs = adjacent_probe_diffs(out.samples);
  out.result = qualify_global_ipid(out.diffs);
  return out;
}

void ProbeEngine::forge(Ipv4 server, std::uint16_t server_port, Ipv4 spoofed_client) {
  Packet p;
  p.src = spoofed_client;
  p.dst = server;
  p.src_port = forge_ports_.next();
  p.dst_port = server_port;
  p.flags = tcp::kSyn;
  p.seq = static_cast<std::uint32_t>(rng_());
  p.ipid = static_cast<std::uint16_t>(rng_());
  transmit(p);
  guard_.record(backend_.now());
  forged_.push_back({server, server_port, spoofed_client, p.src_port, p.seq, false});
}

void ProbeEngine::send_forged_syn(Ipv4 server, std::uint16_t server_port, Ipv4 spoofed_client) {
  if (!spoof_verified_) throw Error(ErrorKind::SpoofSelfTestFailed, "spoofing self-test has not passed");
  const Millis allowed = guard_.earliest(backend_.now());
  if (allowed > backend_.now()) wait(allowed);
  forge(server, server_port, spoofed_client);
}

std::size_t ProbeEngine::cleanup_backlog(Ipv4 server, std::uint16_t server_port, Ipv4 client) {
  std::size_t sent = 0;
  for (auto& f : forged_) {
    if (f.cleared || f.server != server || f.server_port != server_port || f.client != client) continue;
    Packet r;
    r.src = client;
    r.dst = server;
    r.src_port = f.client_port;
    r.dst_port = server_port;
    r.flags = tcp::kRst;
    r.seq = f.seq + 1;
    r.window = 0;
    r.ipid = static_cast<std::uint16_t>(rng_());
    transmit(r);
    f.cleared = true;
    ++sent;
  }
  return sent;
}

ScheduleMeasurement ProbeEngine::measure_retrans_schedule(Ipv4 server, std::uint16_t server_port,
                                                          const MeasureOptions& options) {
  if (options.trials < 1 || options.listen_ms <= 0) throw Error(ErrorKind::InvalidArgument, "bad measure options");
  struct Trial {
    std::uint16_t port;
    std::uint32_t seq;
    std::vector<Millis> arrivals;
    bool reset = false;
  };
  std::vector<Trial> trials;
  for (int i = 0; i < options.trials; ++i) {
    Packet p;
    p.src = cfg_.return_addr_a;
    p.dst = server;
    p.src_port = forge_ports_.next();
    p.dst_port = server_port;
    p.flags = tcp::kSyn;
    p.seq = static_cast<std::uint32_t>(rng_());
    p.ipid = static_cast<std::uint16_t>(rng_());
    trials.push_back({p.src_port, p.seq, {}, false});
    transmit(p);
  }
  const auto got = wait(backend_.now() + options.listen_ms);
  for (const auto& c : got) {
    const Packet& p = c.packet;
    if (!p.is_tcp() || p.src != server || p.src_port != server_port || p.dst != cfg_.return_addr_a) continue;
    for (auto& t : trials) {
      if (p.dst_port != t.port) continue;
      if (p.is_synack() && p.ack == t.seq + 1) t.arrivals.push_back(c.time);
      if (p.is_rst()) t.reset = true;
    }
  }
  // Clear whatever is still half-open.
  for (const auto& t : trials) {
    if (t.arrivals.empty()) continue;
    Packet r;
    r.src = cfg_.return_addr_a;
    r.dst = server;
    r.src_port = t.port;
    r.dst_port = server_port;
    r.flags = tcp::kRst;
    r.seq = t.seq + 1;
    r.window = 0;
    transmit(r);
  }

  if (std::any_of(trials.begin(), trials.end(), [](const Trial& t) { return t.reset; })) {
    throw Error(ErrorKind::PortClosed, format_ipv4(server) + ":" + std::to_string(server_port) + " answered with RST");
  }
  ScheduleMeasurement out;
  double total = 0.0;
  for (auto& t : trials) {
    std::sort(t.arrivals.begin(), t.arrivals.end());
    out.counts.push_back(static_cast<int>(t.arrivals.size()));
    std::vector<Millis> rel;
    for (Millis a : t.arrivals) rel.push_back(a - t.arrivals.front());
    out.offsets.push_back(std::move(rel));
    total += static_cast<double>(t.arrivals.size());
  }
  out.avg_synacks = total / static_cast<double>(trials.size());

  std::vector<int> counts = out.counts;
  std::sort(counts.begin(), counts.end());
  const int r = counts[counts.size() / 2];
  if (r == 0) throw Error(ErrorKind::NoSynAck, "no SYN/ACK from " + format_ipv4(server));

  std::vector<std::int64_t> offsets;
  for (int i = 0; i < r; ++i) {
    std::vector<Millis> at;
    for (const auto& o : out.offsets)
      if (static_cast<int>(o.size()) > i) at.push_back(o[static_cast<std::size_t>(i)]);
    std::sort(at.begin(), at.end());
    std::int64_t v = std::llround(at[at.size() / 2]);
    if (i == 0) v = 0;
    if (!offsets.empty()) v = std::max(v, offsets.back() + 1);
    offsets.push_back(v);
  }
  out.schedule = RetransSchedule::from_offsets(std::move(offsets));
  return out;
}

void ProbeEngine::spoof_self_test(Ipv4 listener, Ipv4 spoof_as) {
  Packet p;
  p.src = spoof_as;
  p.dst = listener;
  p.src_port = forge_ports_.next();
  p.dst_port = 9;
  p.flags = tcp::kSyn;
  p.seq = static_cast<std::uint32_t>(rng_());
  p.ipid = static_cast<std::uint16_t>(rng_());
  transmit(p);
  const auto got = wait(backend_.now() + cfg_.probe_timeout_ms);
  for (const auto& c : got) {
    const Packet& q = c.packet;
    if (!q.is_syn() || q.dst != listener || q.dst_port != p.dst_port || q.seq != p.seq) continue;
    if (q.src != spoof_as) {
      spoof_verified_ = false;
      throw Error(ErrorKind::SpoofSelfTestFailed,
                  "egress rewrote source " + format_ipv4(spoof_as) + " to " + format_ipv4(q.src));
    }
    spoof_verified_ = true;
    return;
  }
  spoof_verified_ = false;
  throw Error(ErrorKind::SpoofSelfTestFailed, "forged SYN never reached listener " + format_ipv4(listener));
}

SessionResult ProbeEngine::run_session(const SessionPlan& plan) {
  if (!spoof_verified_) throw Error(ErrorKind::SpoofSelfTestFailed, "spoofing self-test has not passed");
  if (plan.base_duration_s <= 0 || plan.intervention_duration_s <= 0) {
    throw Error(ErrorKind::InvalidArgument, "session durations must be positive");
  }
  const double interval = cfg_.probe_interval_ms;
  const Millis start = backend_.now();
  const double base_ms = 1000.0 * plan.base_duration_s;
  const double end_ms = base_ms + 1000.0 * plan.intervention_duration_s;
  const auto n_probes = static_cast<std::size_t>(end_ms / interval);
  const auto n_forged =
      static_cast<std::size_t>(cfg_.forge_rate_per_s) * static_cast<std::size_t>(plan.intervention_duration_s);
  const double spacing = 1000.0 / cfg_.forge_rate_per_s;
  const double forge_phase = interval / 10.0;

  struct Action {
    double t;
    int kind;
    std::size_t index;
  };
  std::vector<Action> actions;
  actions.reserve(n_probes + n_forged);
  for (std::size_t k = 0; k < n_probes; ++k) actions.push_back({start + interval * static_cast<double>(k), 0, k});
  for (std::size_t j = 0; j < n_forged; ++j) {
    actions.push_back({start + base_ms + forge_phase + spacing * static_cast<double>(j), 1, j});
  }
  std::stable_sort(actions.begin(), actions.end(),
                   [](const Action& a, const Action& b) { return a.t != b.t ? a.t < b.t : a.kind < b.kind; });

  SessionResult out;
  out.samples.resize(n_probes);
  pending_.clear();
  for (const auto& a : actions) {
    Millis due = a.t;
    if (a.kind == 1) due = guard_.earliest(due);
    dispatch(wait(due), out.samples);
    out.max_lateness_ms = std::max(out.max_lateness_ms, backend_.now() - a.t);
    if (a.kind == 0) {
      const Packet p = make_probe(plan.client, SourceLabel::A, plan.server_port);
      auto& s = out.samples[a.index];
      s.probe_seq = a.index;
      s.source_label = SourceLabel::A;
      s.send_time = backend_.now();
      pending_.push_back({plan.client, p.dst_port, p.seq, p.ack, a.index});
      transmit(p);
    } else {
      if (a.index == 0) out.first_forge_ms = backend_.now();
      forge(plan.server, plan.server_port, plan.client);
      ++out.forged_syns;
    }
  }
  dispatch(wait(start + end_ms), out.samples);
  out.cleanup_rsts = cleanup_backlog(plan.server, plan.server_port, plan.client);
  dispatch(wait(backend_.now() + cfg_.probe_timeout_ms), out.samples);
  pending_.clear();
  return out;
}

}  // namespace dropscan

#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dropscan/backend.hpp"
#include "dropscan/intervention.hpp"
#include "dropscan/pcap.hpp"
#include "dropscan/ts_core.hpp"

namespace dropscan {

struct EngineConfig {
  /// Forged-SYN rates above this are refused outright.
  static constexpr int kMaxForgeRate = 10;

  Ipv4 return_addr_a = SimAddresses::measurement_a;
  Ipv4 return_addr_b = SimAddresses::measurement_b;
  int forge_rate_per_s = 5;
  int probe_timeout_ms = 2000;
  int probe_interval_ms = 1000;
  /// Use the server's open port as the source port of client probes.
  bool probe_port_equals_server_port = false;

  void validate() const;
  /// Captures on both return addresses plus any extra (e.g. a self-test
  /// listener).
  CaptureFilter capture_filter(std::vector<Ipv4> extra = {}) const;
};

/// Sliding-window limiter: never more than (1 + tolerance) * rate sends in
/// any window.
class RateGuard {
 public:
  RateGuard(double rate_per_s, double window_ms = 10000.0, double tolerance = 0.10);

  std::size_t limit() const noexcept { return limit_; }
  /// Earliest time >= t at which one more send stays within the limit.
  Millis earliest(Millis t) const;
  void record(Millis t);
  /// Largest count observed in any window ending at a recorded send.
  std::size_t max_in_window() const noexcept { return max_seen_; }

 private:
  double window_ms_;
  std::size_t limit_;
  std::deque<Millis> recent_;
  std::size_t max_seen_ = 0;
};

struct ForgedTuple {
  Ipv4 server = 0;
  std::uint16_t server_port = 0;
  Ipv4 client = 0;
  std::uint16_t client_port = 0;
  std::uint32_t seq = 0;
  bool cleared = false;
};

struct ScheduleMeasurement {
  RetransSchedule schedule;
  double avg_synacks = 0.0;
  std::vector<int> counts;                 // SYN/ACKs seen per trial
  std::vector<std::vector<Millis>> offsets;  // per trial, relative to the first
};

struct MeasureOptions {
  int trials = 5;
  int listen_ms = 70000;
};

struct QualificationOutcome {
  QualificationResult result;
  std::vector<IpidSample> samples;
  std::vector<int> diffs;
};

struct SessionPlan {
  Ipv4 client = 0;
  Ipv4 server = 0;
  std::uint16_t server_port = 80;
  int base_duration_s = 100;
  int intervention_duration_s = 100;
};

struct SessionResult {
  std::vector<IpidSample> samples;
  Millis first_forge_ms = 0;
  std::size_t forged_syns = 0;
  std::size_t cleanup_rsts = 0;
  /// Worst delay between a scheduled send and the actual send.
  double max_lateness_ms = 0.0;

  /// Unresponsive means some send ran more than five seconds late.
  bool sender_responsive() const noexcept { return max_lateness_ms <= 5000.0; }
  double response_fraction() const noexcept;
};

/// Drives one experiment's packets. Not shared across experiments.
class ProbeEngine {
 public:
  ProbeEngine(PacketBackend& backend, EngineConfig config, std::uint64_t seed);

  const EngineConfig& config() const noexcept { return cfg_; }
  Millis now() { return backend_.now(); }
  /// Lets time pass, discarding anything captured meanwhile.
  void idle_until(Millis t);
  /// Every sent and captured packet is also written here when set.
  void set_archive(PcapWriter* archive) noexcept { archive_ = archive; }

  /// One SYN/ACK to a port below 1024 on the client; waits up to
  /// probe_timeout_ms for the RST.
  IpidSample probe_client(Ipv4 client, SourceLabel label);

  /// Alternates probes from both return addresses once per interval for
  /// duration_s and applies the global-IPID test to consecutive diffs.
  QualificationOutcome qualify(Ipv4 client, int duration_s = 60);

  /// Forges a SYN from `spoofed_client` to the server, subject to the rate
  /// guard. Throws SpoofSelfTestFailed unless the self-test has passed.
  void send_forged_syn(Ipv4 server, std::uint16_t server_port, Ipv4 spoofed_client);

  /// One RST per forged four-tuple to this server/client that is still
  /// outstanding. Returns the number sent; repeating the call sends nothing.
  std::size_t cleanup_backlog(Ipv4 server, std::uint16_t server_port, Ipv4 client);

  /// SYNs from return address A with the ACK withheld; r is the median
  /// SYN/ACK count over the trials and offsets are per-index medians.
  /// Throws PortClosed or NoSynAck.
  ScheduleMeasurement measure_retrans_schedule(Ipv4 server, std::uint16_t server_port,
                                               const MeasureOptions& options = {});

  /// Forges a SYN claiming to come from `spoof_as` to a listener whose traffic
  /// is captured here and checks the source survived the egress path.
  /// Throws SpoofSelfTestFailed.
  void spoof_self_test(Ipv4 listener, Ipv4 spoof_as);
  bool spoof_verified() const noexcept { return spoof_verified_; }

  /// Base period of probing, then probing plus forged SYNs, then cleanup.
  SessionResult run_session(const SessionPlan& plan);

  const RateGuard& rate_guard() const noexcept { return guard_; }
  const std::vector<ForgedTuple>& forged() const noexcept { return forged_; }

 private:
  struct PendingProbe {
    Ipv4 client;
    std::uint16_t port;
    std::uint32_t seq;
    std::uint32_t ack;
    std::size_t slot;
  };

  Packet make_probe(Ipv4 client, SourceLabel label, std::uint16_t server_port);
  void transmit(const Packet& p);
  std::vector<CapturedPacket> wait(Millis t);
  void dispatch(const std::vector<CapturedPacket>& packets, std::vector<IpidSample>& samples);
  void forge(Ipv4 server, std::uint16_t server_port, Ipv4 spoofed_client);

  PacketBackend& backend_;
  EngineConfig cfg_;
  std::mt19937_64 rng_;
  PortPool low_ports_;
  PortPool forge_ports_;
  RateGuard guard_;
  PcapWriter* archive_ = nullptr;
  bool spoof_verified_ = false;
  std::vector<ForgedTuple> forged_;
  std::vector<PendingProbe> pending_;
  std::uint64_t next_probe_seq_ = 0;
};

}  // namespace dropscan

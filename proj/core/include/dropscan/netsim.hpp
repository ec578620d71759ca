#pragma once

// Discrete-event simulation of a measurement machine, global-IPID clients,
// SYN-backlog servers and an on-path censor. Virtual time in milliseconds.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dropscan/intervention.hpp"
#include "dropscan/packet.hpp"
#include "dropscan/ts_core.hpp"

namespace dropscan {

enum class IpidMode : std::uint8_t { Global, PerDestination, Constant, Random };

/// Background traffic of a client: every packet it sends consumes an IPID.
struct NoiseModel {
  enum class Kind : std::uint8_t { Idle, CompoundPoisson, Ar1 };
  Kind kind = Kind::Idle;

  // CompoundPoisson: bursts arrive at burst_rate per second; a burst holds a
  // geometric number of packets (support 1, 2, ...) with mean burst_size_mean,
  // spread uniformly over burst_spread_ms.
  double burst_rate = 0.0;
  double burst_size_mean = 1.0;
  double burst_spread_ms = 0.0;

  // Ar1: the packet count in each one-second slot is
  // max(0, round(ar_mean + x_t)) with x_t = ar_phi x_{t-1} + ar_sigma e_t.
  double ar_phi = 0.0;
  double ar_mean = 0.0;
  double ar_sigma = 0.0;

  static NoiseModel idle() { return {}; }
  static NoiseModel compound_poisson(double rate, double size_mean, double spread_ms = 0.0);
  static NoiseModel ar1(double phi, double mean, double sigma);
  void validate() const;
};

struct ClientModel {
  std::uint16_t initial_ipid = 0;
  IpidMode ipid_mode = IpidMode::Global;
  NoiseModel noise;
  double rst_response = 1.0;  // probability of answering a SYN/ACK with a RST
  bool icmp_unreachable = false;  // answer SYN/ACKs with ICMP admin-prohibited instead

  void validate() const;
};

struct ServerModel {
  RetransSchedule schedule = RetransSchedule::from_offsets({0, 1000, 3000});
  int backlog_timeout_s = 60;
  std::size_t backlog_capacity = 1024;
  std::uint16_t open_port = 80;

  void validate() const;
};

enum class CensorDirection : std::uint8_t { None, ServerToClient, ClientToServer };

std::string_view to_string(CensorDirection d) noexcept;
std::optional<CensorDirection> censor_direction_from_string(std::string_view s) noexcept;
VerdictCase truth_for(CensorDirection d) noexcept;

/// Drops traffic crossing between a client and a server in one direction.
/// Address fields left empty match any client or server; `server_port`, when
/// set, restricts the rule to that server port.
struct CensorPolicy {
  CensorDirection direction = CensorDirection::None;
  double drop_prob = 1.0;
  std::optional<Ipv4> client;
  std::optional<Ipv4> server;
  std::optional<std::uint16_t> server_port;

  void validate() const;
};

struct TraceEvent {
  Millis time_ms = 0;
  std::string actor;
  std::string event;
  std::string detail;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct EventTrace {
  std::vector<TraceEvent> events;

  void add(Millis t, std::string actor, std::string event, std::string detail = {});
  std::size_t count(std::string_view actor, std::string_view event) const;
  /// One JSON object per line: {time_ms, actor, event, detail}.
  std::string to_jsonl() const;
};

/// A packet seen by the measurement machine's capture.
struct CapturedPacket {
  Millis time = 0;
  Packet packet;
};

/// One half-open connection's life on a server.
struct BacklogRecord {
  Ipv4 peer = 0;
  std::uint16_t peer_port = 0;
  Millis created = 0;
  int transmissions = 0;
  std::string end_reason;  // "rst", "timeout", "evicted", or empty while open
};

struct NetworkConfig {
  struct Client {
    Ipv4 addr = 0;
    ClientModel model;
  };
  struct Server {
    Ipv4 addr = 0;
    ServerModel model;
  };

  std::vector<Ipv4> measurement_addrs;  // every address the measurement machine captures on
  std::vector<Client> clients;
  std::vector<Server> servers;
  std::vector<CensorPolicy> censors;
  double loss_prob = 0.0;     // ambient loss on every packet
  double delay_ms = 20.0;     // one-way propagation delay
  double delay_jitter_ms = 0.0;  // added uniform [0, jitter] per packet
  bool egress_rewrite = false;  // the measurement uplink rewrites spoofed sources (NAT)
  bool record_trace = true;
  std::uint64_t seed = 1;

  void validate() const;
};

/// The event-driven network. Only the measurement machine is driven from
/// outside: inject() sends from it at the current time and captured packets
/// addressed to it are queued for take_captured().
class Network {
 public:
  explicit Network(NetworkConfig config);
  ~Network();
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  Millis now() const noexcept;
  /// Processes every event up to and including time t, then sets now() = t.
  void run_until(Millis t);
  /// Sends a packet from the measurement machine at now().
  void inject(const Packet& p);
  std::vector<CapturedPacket> take_captured();

  const EventTrace& trace() const noexcept;
  const NetworkConfig& config() const noexcept;

  /// Current IPID counter and total packets sent by a client.
  std::uint16_t client_ipid(Ipv4 client) const;
  std::uint64_t client_packets_sent(Ipv4 client) const;
  std::size_t backlog_size(Ipv4 server) const;
  const std::vector<BacklogRecord>& backlog_history(Ipv4 server) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Addresses used by single-pair scenarios.
struct SimAddresses {
  static constexpr Ipv4 measurement_a = 0xC6336401;  // 198.51.100.1
  static constexpr Ipv4 measurement_b = 0xC6336402;  // 198.51.100.2
  static constexpr Ipv4 listener = 0xC6336403;       // 198.51.100.3, controlled spoof test target
  static constexpr Ipv4 client = 0xCB00710A;         // 203.0.113.10
  static constexpr Ipv4 server = 0xC0000250;         // 192.0.2.80
};

struct SimScenario {
  std::string name;
  ClientModel client;
  ServerModel server;
  CensorPolicy censor;
  int probe_interval_ms = 1000;
  int forge_rate_per_s = 5;
  int base_duration_s = 100;
  int intervention_duration_s = 100;
  double loss_prob = 0.0;
  double delay_ms = 20.0;
  double delay_jitter_ms = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
  NetworkConfig network_config() const;
};

struct SimOutcome {
  std::vector<IpidSample> samples;
  VerdictCase truth = VerdictCase::NoPacketsDropped;
  EventTrace trace;
  Millis first_forge_ms = 0;
  RetransSchedule schedule;
  int interval_ms = 1000;
  std::uint16_t final_client_ipid = 0;
  std::uint64_t client_packets_sent = 0;
  std::vector<BacklogRecord> backlog;

  DiffSeries series() const;
};

/// Probes the client once per interval for the base and intervention periods,
/// forges SYNs during the intervention, then resets every forged connection.
SimOutcome run_sim(const SimScenario& scenario);

struct LabeledSeries {
  std::size_t scenario_index = 0;
  std::string scenario_name;
  std::uint64_t seed = 0;
  VerdictCase truth = VerdictCase::NoPacketsDropped;
  RetransSchedule schedule;
  DiffSeries series;
};

/// Runs every scenario with seeds scenario.seed + [0, seeds_per_scenario).
/// Output order is scenario-major and independent of `threads`.
std::vector<LabeledSeries> generate_corpus(const std::vector<SimScenario>& scenarios,
                                           std::size_t seeds_per_scenario, unsigned threads = 1);

/// Sequential source ports below 1024 for forged SYNs and probe targets.
class PortPool {
 public:
  static constexpr std::uint16_t kLow = 1;
  static constexpr std::uint16_t kHigh = 1023;
  explicit PortPool(std::uint16_t start) noexcept;
  std::uint16_t next() noexcept;

 private:
  std::uint16_t cur_;
};

}  // namespace dropscan

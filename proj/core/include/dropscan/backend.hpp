#pragma once

// Packet I/O for the probe engine. The simulated backend drives a netsim
// Network in virtual time; the live backend uses raw sockets.

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include "dropscan/netsim.hpp"
#include "dropscan/packet.hpp"

namespace dropscan {

/// Declarative capture match: TCP RST or SYN/ACK segments and ICMP
/// unreachables addressed to one of the measurement addresses.
struct CaptureFilter {
  std::vector<Ipv4> local_addrs;
  bool rst = true;
  bool synack = true;
  bool syn = true;  // needed by the spoofing self-test
  bool icmp_unreachable = true;

  bool matches(const Packet& p) const;
  /// Equivalent pcap-filter expression, for operators and logs.
  std::string expression() const;
};

class PacketBackend {
 public:
  virtual ~PacketBackend() = default;

  /// Milliseconds on the backend's clock.
  virtual Millis now() = 0;
  /// Transmits a fully specified packet. Throws InjectionFailed.
  virtual void send(const Packet& p) = 0;
  /// Returns once now() >= t with every matching packet captured so far.
  virtual std::vector<CapturedPacket> wait_until(Millis t) = 0;
  virtual bool live() const noexcept = 0;
};

class SimBackend final : public PacketBackend {
 public:
  SimBackend(NetworkConfig config, CaptureFilter filter);

  Millis now() override;
  void send(const Packet& p) override;
  std::vector<CapturedPacket> wait_until(Millis t) override;
  bool live() const noexcept override { return false; }

  Network& network() noexcept { return net_; }
  const Network& network() const noexcept { return net_; }

 private:
  Network net_;
  CaptureFilter filter_;
};

/// Raw-socket backend (Linux). Requires CAP_NET_RAW; construction throws
/// CapturePermissionDenied otherwise. The host's own TCP stack answers
/// unsolicited SYN/ACKs with RSTs, which must be filtered on egress while
/// measuring retransmission schedules.
class LiveBackend final : public PacketBackend {
 public:
  explicit LiveBackend(CaptureFilter filter);
  ~LiveBackend() override;
  LiveBackend(const LiveBackend&) = delete;
  LiveBackend& operator=(const LiveBackend&) = delete;

  Millis now() override;
  void send(const Packet& p) override;
  std::vector<CapturedPacket> wait_until(Millis t) override;
  bool live() const noexcept override { return true; }

 private:
  void drain(std::vector<CapturedPacket>& out);

  CaptureFilter filter_;
  int send_fd_ = -1;
  int tcp_fd_ = -1;
  int icmp_fd_ = -1;
  std::chrono::steady_clock::time_point epoch_;
};

}  // namespace dropscan

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dropscan {

/// IPv4 address in host byte order.
using Ipv4 = std::uint32_t;

std::string format_ipv4(Ipv4 addr);
std::optional<Ipv4> parse_ipv4(std::string_view text);

namespace tcp {
inline constexpr std::uint8_t kFin = 0x01;
inline constexpr std::uint8_t kSyn = 0x02;
inline constexpr std::uint8_t kRst = 0x04;
inline constexpr std::uint8_t kPsh = 0x08;
inline constexpr std::uint8_t kAck = 0x10;
}  // namespace tcp

enum class Protocol : std::uint8_t { Tcp = 6, Icmp = 1 };

/// The TCP header fields quoted back inside an ICMP error.
struct QuotedTcp {
  Ipv4 src = 0;
  Ipv4 dst = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t seq = 0;

  friend bool operator==(const QuotedTcp&, const QuotedTcp&) = default;
};

/// A single IPv4 datagram carrying either a bare TCP header or an ICMP error.
struct Packet {
  Protocol protocol = Protocol::Tcp;
  Ipv4 src = 0;
  Ipv4 dst = 0;
  std::uint16_t ipid = 0;
  std::uint8_t ttl = 64;

  // TCP
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t flags = 0;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint16_t window = 65535;

  // ICMP
  std::uint8_t icmp_type = 0;
  std::uint8_t icmp_code = 0;
  std::optional<QuotedTcp> quoted;

  bool is_tcp() const noexcept { return protocol == Protocol::Tcp; }
  bool has(std::uint8_t flag) const noexcept { return is_tcp() && (flags & flag) == flag; }
  bool is_syn() const noexcept { return has(tcp::kSyn) && !has(tcp::kAck); }
  bool is_synack() const noexcept { return has(tcp::kSyn | tcp::kAck); }
  bool is_rst() const noexcept { return has(tcp::kRst); }
  bool is_icmp_unreachable() const noexcept { return protocol == Protocol::Icmp && icmp_type == 3; }

  friend bool operator==(const Packet&, const Packet&) = default;
};

std::string describe(const Packet& p);

/// RFC 1071 ones'-complement sum over `data`, folded and complemented.
std::uint16_t internet_checksum(std::span<const std::uint8_t> data, std::uint32_t initial = 0);

/// Wire encoding with valid IP and TCP/ICMP checksums; no options, no payload.
std::vector<std::uint8_t> encode(const Packet& p);

/// Parses an IPv4 datagram. Returns nullopt for anything that is not a
/// well-formed TCP segment or ICMP destination-unreachable carrying a TCP
/// header. Checksums are verified when `verify_checksums` is set.
std::optional<Packet> decode(std::span<const std::uint8_t> bytes, bool verify_checksums = true);

}  // namespace dropscan

#include "dropscan/packet.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace dropscan {

namespace {

constexpr std::size_t kIpHeader = 20;
constexpr std::size_t kTcpHeader = 20;
constexpr std::size_t kIcmpHeader = 8;

void put16(std::vector<std::uint8_t>& b, std::size_t at, std::uint16_t v) {
  b[at] = static_cast<std::uint8_t>(v >> 8);
  b[at + 1] = static_cast<std::uint8_t>(v & 0xFF);
}

void put32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  put16(b, at, static_cast<std::uint16_t>(v >> 16));
  put16(b, at + 2, static_cast<std::uint16_t>(v & 0xFFFF));
}

std::uint16_t get16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

std::uint32_t get32(std::span<const std::uint8_t> b, std::size_t at) {
  return (static_cast<std::uint32_t>(get16(b, at)) << 16) | get16(b, at + 2);
}

std::uint32_t partial_sum(std::span<const std::uint8_t> data, std::uint32_t sum) {
  std::size_t i = 0;
  for (; i + 1 < data.size(); i += 2) sum += static_cast<std::uint32_t>((data[i] << 8) | data[i + 1]);
  if (i < data.size()) sum += static_cast<std::uint32_t>(data[i] << 8);
  return sum;
}

void write_ip_header(std::vector<std::uint8_t>& b, std::size_t at, std::uint16_t total_len, std::uint16_t ipid,
                     std::uint8_t ttl, std::uint8_t proto, Ipv4 src, Ipv4 dst) {
  b[at] = 0x45;
  b[at + 1] = 0;
  put16(b, at + 2, total_len);
  put16(b, at + 4, ipid);
  put16(b, at + 6, 0x4000);  // DF
  b[at + 8] = ttl;
  b[at + 9] = proto;
  put16(b, at + 10, 0);
  put32(b, at + 12, src);
  put32(b, at + 16, dst);
  const std::span<const std::uint8_t> hdr(b.data() + at, kIpHeader);
  put16(b, at + 10, internet_checksum(hdr));
}

std::uint32_t tcp_pseudo_sum(Ipv4 src, Ipv4 dst, std::uint16_t tcp_len) {
  std::uint32_t sum = 0;
  sum += src >> 16;
  sum += src & 0xFFFF;
  sum += dst >> 16;
  sum += dst & 0xFFFF;
  sum += static_cast<std::uint32_t>(Protocol::Tcp);
  sum += tcp_len;
  return sum;
}

}  // namespace

std::string format_ipv4(Ipv4 addr) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", (addr >> 24) & 0xFF, (addr >> 16) & 0xFF, (addr >> 8) & 0xFF,
                addr & 0xFF);
  return buf;
}

std::optional<Ipv4> parse_ipv4(std::string_view text) {
  Ipv4 out = 0;
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 4; ++i) {
    unsigned octet = 0;
    auto [next, ec] = std::from_chars(p, end, octet);
    if (ec != std::errc{} || next == p || octet > 255 || next - p > 3) return std::nullopt;
    out = (out << 8) | octet;
    p = next;
    if (i < 3) {
      if (p == end || *p != '.') return std::nullopt;
      ++p;
    }
  }
  if (p != end) return std::nullopt;
  return out;
}

std::string describe(const Packet& p) {
  std::ostringstream os;
  if (p.is_tcp()) {
    os << format_ipv4(p.src) << ':' << p.src_port << " > " << format_ipv4(p.dst) << ':' << p.dst_port << " [";
    if (p.has(tcp::kSyn)) os << 'S';
    if (p.has(tcp::kRst)) os << 'R';
    if (p.has(tcp::kFin)) os << 'F';
    if (p.has(tcp::kPsh)) os << 'P';
    if (p.has(tcp::kAck)) os << '.';
    os << "] seq " << p.seq << " ack " << p.ack << " id " << p.ipid;
  } else {
    os << format_ipv4(p.src) << " > " << format_ipv4(p.dst) << " icmp " << int(p.icmp_type) << '/'
       << int(p.icmp_code) << " id " << p.ipid;
  }
  return os.str();
}

std::uint16_t internet_checksum(std::span<const std::uint8_t> data, std::uint32_t initial) {
  std::uint32_t sum = partial_sum(data, initial);
  while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum & 0xFFFF);
}

std::vector<std::uint8_t> encode(const Packet& p) {
  if (p.is_tcp()) {
    std::vector<std::uint8_t> b(kIpHeader + kTcpHeader, 0);
    write_ip_header(b, 0, static_cast<std::uint16_t>(b.size()), p.ipid, p.ttl, 6, p.src, p.dst);
    const std::size_t t = kIpHeader;
    put16(b, t, p.src_port);
    put16(b, t + 2, p.dst_port);
    put32(b, t + 4, p.seq);
    put32(b, t + 8, p.ack);
    b[t + 12] = static_cast<std::uint8_t>((kTcpHeader / 4) << 4);
    b[t + 13] = p.flags;
    put16(b, t + 14, p.window);
    const std::span<const std::uint8_t> seg(b.data() + t, kTcpHeader);
    put16(b, t + 16, internet_checksum(seg, tcp_pseudo_sum(p.src, p.dst, kTcpHeader)));
    return b;
  }

  // ICMP error quoting the offending IP header and the first 8 TCP octets.
  const QuotedTcp q = p.quoted.value_or(QuotedTcp{});
  std::vector<std::uint8_t> b(kIpHeader + kIcmpHeader + kIpHeader + 8, 0);
  write_ip_header(b, 0, static_cast<std::uint16_t>(b.size()), p.ipid, p.ttl, 1, p.src, p.dst);
  const std::size_t c = kIpHeader;
  b[c] = p.icmp_type;
  b[c + 1] = p.icmp_code;
  write_ip_header(b, c + kIcmpHeader, static_cast<std::uint16_t>(kIpHeader + kTcpHeader), 0, 64, 6, q.src, q.dst);
  const std::size_t qt = c + kIcmpHeader + kIpHeader;
  put16(b, qt, q.src_port);
  put16(b, qt + 2, q.dst_port);
  put32(b, qt + 4, q.seq);
  const std::span<const std::uint8_t> icmp(b.data() + c, b.size() - c);
  put16(b, c + 2, internet_checksum(icmp));
  return b;
}

std::optional<Packet> decode(std::span<const std::uint8_t> bytes, bool verify_checksums) {
  if (bytes.size() < kIpHeader || (bytes[0] >> 4) != 4) return std::nullopt;
  const std::size_t ihl = static_cast<std::size_t>(bytes[0] & 0x0F) * 4;
  if (ihl < kIpHeader || bytes.size() < ihl) return std::nullopt;
  const std::size_t total = get16(bytes, 2);
  if (total < ihl || total > bytes.size()) return std::nullopt;
  if (verify_checksums && internet_checksum(bytes.first(ihl)) != 0) return std::nullopt;
  if ((get16(bytes, 6) & 0x1FFF) != 0) return std::nullopt;  // non-initial fragment

  Packet p;
  p.ipid = get16(bytes, 4);
  p.ttl = bytes[8];
  p.src = get32(bytes, 12);
  p.dst = get32(bytes, 16);
  const auto body = bytes.subspan(ihl, total - ihl);

  if (bytes[9] == 6) {
    if (body.size() < kTcpHeader) return std::nullopt;
    const std::size_t doff = static_cast<std::size_t>(body[12] >> 4) * 4;
    if (doff < kTcpHeader || doff > body.size()) return std::nullopt;
    if (verify_checksums &&
        internet_checksum(body, tcp_pseudo_sum(p.src, p.dst, static_cast<std::uint16_t>(body.size()))) != 0) {
      return std::nullopt;
    }
    p.protocol = Protocol::Tcp;
    p.src_port = get16(body, 0);
    p.dst_port = get16(body, 2);
    p.seq = get32(body, 4);
    p.ack = get32(body, 8);
    p.flags = body[13];
    p.window = get16(body, 14);
    return p;
  }

  if (bytes[9] == 1) {
    if (body.size() < kIcmpHeader + kIpHeader + 8) return std::nullopt;
    if (verify_checksums && internet_checksum(body) != 0) return std::nullopt;
    if (body[0] != 3) return std::nullopt;
    const auto inner = body.subspan(kIcmpHeader);
    const std::size_t inner_ihl = static_cast<std::size_t>(inner[0] & 0x0F) * 4;
    if ((inner[0] >> 4) != 4 || inner_ihl < kIpHeader || inner.size() < inner_ihl + 8 || inner[9] != 6) {
      return std::nullopt;
    }
    p.protocol = Protocol::Icmp;
    p.icmp_type = body[0];
    p.icmp_code = body[1];
    QuotedTcp q;
    q.src = get32(inner, 12);
    q.dst = get32(inner, 16);
    q.src_port = get16(inner, inner_ihl);
    q.dst_port = get16(inner, inner_ihl + 2);
    q.seq = get32(inner, inner_ihl + 4);
    p.quoted = q;
    return p;
  }
  return std::nullopt;
}

}  // namespace dropscan

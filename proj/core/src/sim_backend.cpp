#include <algorithm>
#include <sstream>

#include "dropscan/backend.hpp"

namespace dropscan {

bool CaptureFilter::matches(const Packet& p) const {
  if (std::find(local_addrs.begin(), local_addrs.end(), p.dst) == local_addrs.end()) return false;
  if (p.is_icmp_unreachable()) return icmp_unreachable;
  if (!p.is_tcp()) return false;
  if (p.is_rst()) return rst;
  if (p.is_synack()) return synack;
  if (p.is_syn()) return syn;
  return false;
}

std::string CaptureFilter::expression() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < local_addrs.size(); ++i) {
    if (i) os << " or ";
    os << "dst host " << format_ipv4(local_addrs[i]);
  }
  os << ") and (";
  bool first = true;
  auto alt = [&](const char* e) {
    if (!first) os << " or ";
    os << e;
    first = false;
  };
  if (rst) alt("tcp[tcpflags] & tcp-rst != 0");
  if (synack) alt("tcp[tcpflags] & (tcp-syn|tcp-ack) == (tcp-syn|tcp-ack)");
  if (syn) alt("tcp[tcpflags] & (tcp-syn|tcp-ack) == tcp-syn");
  if (icmp_unreachable) alt("icmp[icmptype] == icmp-unreach");
  if (first) os << "false";
  os << ')';
  return os.str();
}

SimBackend::SimBackend(NetworkConfig config, CaptureFilter filter)
    : net_(std::move(config)), filter_(std::move(filter)) {}

Millis SimBackend::now() { return net_.now(); }

void SimBackend::send(const Packet& p) { net_.inject(p); }

std::vector<CapturedPacket> SimBackend::wait_until(Millis t) {
  net_.run_until(std::max(t, net_.now()));
  auto all = net_.take_captured();
  std::vector<CapturedPacket> out;
  out.reserve(all.size());
  for (auto& c : all)
    if (filter_.matches(c.packet)) out.push_back(std::move(c));
  return out;
}

}  // namespace dropscan

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "dropscan/backend.hpp"
#include "dropscan/error.hpp"

namespace dropscan {

namespace {

int open_raw(int proto, bool nonblocking) {
  const int fd = ::socket(AF_INET, SOCK_RAW | (nonblocking ? SOCK_NONBLOCK : 0), proto);
  if (fd < 0) {
    const int err = errno;
    if (err == EPERM || err == EACCES) {
      throw Error(ErrorKind::CapturePermissionDenied, "raw sockets need CAP_NET_RAW (" +
                                                          std::string(std::strerror(err)) + ")");
    }
    throw Error(ErrorKind::EngineFailure, "socket: " + std::string(std::strerror(err)));
  }
  return fd;
}

}  // namespace

LiveBackend::LiveBackend(CaptureFilter filter)
    : filter_(std::move(filter)), epoch_(std::chrono::steady_clock::now()) {
  try {
    send_fd_ = open_raw(IPPROTO_RAW, false);  // IPPROTO_RAW implies IP_HDRINCL
    tcp_fd_ = open_raw(IPPROTO_TCP, true);
    icmp_fd_ = open_raw(IPPROTO_ICMP, true);
  } catch (...) {
    if (send_fd_ >= 0) ::close(send_fd_);
    if (tcp_fd_ >= 0) ::close(tcp_fd_);
    throw;
  }
}

LiveBackend::~LiveBackend() {
  for (int fd : {send_fd_, tcp_fd_, icmp_fd_})
    if (fd >= 0) ::close(fd);
}

Millis LiveBackend::now() {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - epoch_).count();
}

void LiveBackend::send(const Packet& p) {
  const auto bytes = encode(p);
  sockaddr_in to{};
  to.sin_family = AF_INET;
  to.sin_addr.s_addr = htonl(p.dst);
  const ssize_t n = ::sendto(send_fd_, bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr*>(&to),
                             sizeof to);
  if (n != static_cast<ssize_t>(bytes.size())) {
    throw Error(ErrorKind::InjectionFailed, "sendto " + describe(p) + ": " + std::strerror(errno));
  }
}

void LiveBackend::drain(std::vector<CapturedPacket>& out) {
  std::uint8_t buf[65536];
  for (int fd : {tcp_fd_, icmp_fd_}) {
    for (;;) {
      const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
      if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) break;
        throw Error(ErrorKind::EngineFailure, std::string("recv: ") + std::strerror(errno));
      }
      auto p = decode(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
      if (p && filter_.matches(*p)) out.push_back({now(), std::move(*p)});
    }
  }
}

std::vector<CapturedPacket> LiveBackend::wait_until(Millis t) {
  std::vector<CapturedPacket> out;
  for (;;) {
    drain(out);
    const Millis left = t - now();
    if (left <= 0) break;
    pollfd fds[2] = {{tcp_fd_, POLLIN, 0}, {icmp_fd_, POLLIN, 0}};
    const int ms = static_cast<int>(std::min<Millis>(left, 50.0)) + 1;
    if (::poll(fds, 2, ms) < 0 && errno != EINTR) {
      throw Error(ErrorKind::EngineFailure, std::string("poll: ") + std::strerror(errno));
    }
  }
  return out;
}

}  // namespace dropscan

#pragma once

// Classic libpcap file format with LINKTYPE_RAW (bare IPv4 datagrams).

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dropscan/packet.hpp"
#include "dropscan/ts_core.hpp"

namespace dropscan {

class PcapWriter {
 public:
  static constexpr std::uint32_t kLinkTypeRaw = 101;

  /// Truncates `path` and writes the global header. Throws EngineFailure.
  explicit PcapWriter(const std::string& path);
  void write(Millis time, const Packet& p);
  void write_bytes(Millis time, const std::vector<std::uint8_t>& bytes);
  std::size_t count() const noexcept { return count_; }

 private:
  std::ofstream out_;
  std::size_t count_ = 0;
};

struct PcapRecord {
  Millis time = 0;
  std::vector<std::uint8_t> bytes;
};

/// Reads a file written by PcapWriter (little-endian, microsecond stamps).
std::vector<PcapRecord> read_pcap(const std::string& path);

}  // namespace dropscan

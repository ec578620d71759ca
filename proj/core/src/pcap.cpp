#include "dropscan/pcap.hpp"

#include <cmath>

#include "dropscan/error.hpp"

namespace dropscan {

namespace {

void put32le(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

void put16le(std::ofstream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

bool get32le(std::ifstream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

}  // namespace

PcapWriter::PcapWriter(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error(ErrorKind::EngineFailure, "cannot open " + path);
  put32le(out_, 0xA1B2C3D4);
  put16le(out_, 2);
  put16le(out_, 4);
  put32le(out_, 0);      // thiszone
  put32le(out_, 0);      // sigfigs
  put32le(out_, 65535);  // snaplen
  put32le(out_, kLinkTypeRaw);
}

void PcapWriter::write(Millis time, const Packet& p) { write_bytes(time, encode(p)); }

void PcapWriter::write_bytes(Millis time, const std::vector<std::uint8_t>& bytes) {
  const auto us = static_cast<std::uint64_t>(std::llround(std::max(0.0, time) * 1000.0));
  put32le(out_, static_cast<std::uint32_t>(us / 1000000));
  put32le(out_, static_cast<std::uint32_t>(us % 1000000));
  put32le(out_, static_cast<std::uint32_t>(bytes.size()));
  put32le(out_, static_cast<std::uint32_t>(bytes.size()));
  out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out_.flush();
  if (!out_) throw Error(ErrorKind::EngineFailure, "pcap write failed");
  ++count_;
}

std::vector<PcapRecord> read_pcap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::EngineFailure, "cannot open " + path);
  std::uint32_t magic = 0, skip = 0, linktype = 0;
  if (!get32le(in, magic) || magic != 0xA1B2C3D4) throw Error(ErrorKind::MalformedRecord, "not a pcap file: " + path);
  for (int i = 0; i < 4; ++i)
    if (!get32le(in, skip)) throw Error(ErrorKind::MalformedRecord, "truncated pcap header");
  if (!get32le(in, linktype) || linktype != PcapWriter::kLinkTypeRaw) {
    throw Error(ErrorKind::MalformedRecord, "unsupported pcap link type");
  }
  std::vector<PcapRecord> out;
  for (;;) {
    std::uint32_t sec = 0, usec = 0, incl = 0, orig = 0;
    if (!get32le(in, sec)) break;
    if (!get32le(in, usec) || !get32le(in, incl) || !get32le(in, orig)) {
      throw Error(ErrorKind::MalformedRecord, "truncated pcap record");
    }
    PcapRecord r;
    r.time = static_cast<double>(sec) * 1000.0 + static_cast<double>(usec) / 1000.0;
    r.bytes.resize(incl);
    if (!in.read(reinterpret_cast<char*>(r.bytes.data()), incl)) {
      throw Error(ErrorKind::MalformedRecord, "truncated pcap record");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dropscan

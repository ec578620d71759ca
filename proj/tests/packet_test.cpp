#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "dropscan/packet.hpp"
#include "dropscan/pcap.hpp"

using namespace dropscan;

namespace {

Packet sample_syn() {
  Packet p;
  p.src = 0xC6336401;
  p.dst = 0xC0000250;
  p.ipid = 4321;
  p.src_port = 700;
  p.dst_port = 80;
  p.flags = tcp::kSyn;
  p.seq = 0xDEADBEEF;
  return p;
}

}  // namespace

TEST(Ipv4Text, RoundTripAndRejects) {
  EXPECT_EQ(format_ipv4(0xC0000250), "192.0.2.80");
  EXPECT_EQ(parse_ipv4("192.0.2.80"), 0xC0000250u);
  EXPECT_EQ(parse_ipv4("0.0.0.0"), 0u);
  EXPECT_FALSE(parse_ipv4("256.0.0.1"));
  EXPECT_FALSE(parse_ipv4("1.2.3"));
  EXPECT_FALSE(parse_ipv4("1.2.3.4.5"));
  EXPECT_FALSE(parse_ipv4("a.b.c.d"));
  EXPECT_FALSE(parse_ipv4(""));
}

TEST(InternetChecksum, KnownVector) {
  // RFC 1071 worked example: the words 0001 f203 f4f5 f6f7 fold to ddf2,
  // whose complement is the checksum.
  const std::uint8_t data[] = {0x00, 0x01, 0xf2, 0x03, 0xf4, 0xf5, 0xf6, 0xf7};
  EXPECT_EQ(internet_checksum(data), 0x220d);
  const std::uint8_t odd[] = {0x01};
  EXPECT_EQ(internet_checksum(odd), static_cast<std::uint16_t>(~0x0100));
}

TEST(Encode, ChecksumsVerify) {
  const auto bytes = encode(sample_syn());
  ASSERT_EQ(bytes.size(), 40u);
  EXPECT_EQ(bytes[0], 0x45);
  EXPECT_EQ(internet_checksum(std::span(bytes).first(20)), 0);
}

TEST(Encode, TcpRoundTrip) {
  const Packet p = sample_syn();
  const auto back = decode(encode(p));
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(*back, p);
}

TEST(Encode, IcmpRoundTrip) {
  Packet p;
  p.protocol = Protocol::Icmp;
  p.src = 0xCB00710A;
  p.dst = 0xC6336401;
  p.ipid = 77;
  p.icmp_type = 3;
  p.icmp_code = 13;
  p.quoted = QuotedTcp{0xC6336401, 0xCB00710A, 80, 900, 123456};
  const auto back = decode(encode(p));
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(*back, p);
  EXPECT_TRUE(back->is_icmp_unreachable());
}

TEST(Decode, RejectsCorruptionAndTruncation) {
  auto bytes = encode(sample_syn());
  bytes[30] ^= 0x40;
  EXPECT_FALSE(decode(bytes).has_value());
  EXPECT_TRUE(decode(bytes, false).has_value());
  const auto good = encode(sample_syn());
  EXPECT_FALSE(decode(std::span(good).first(30)).has_value());
  EXPECT_FALSE(decode(std::vector<std::uint8_t>{}).has_value());
}

TEST(PacketFlags, Predicates) {
  Packet p = sample_syn();
  EXPECT_TRUE(p.is_syn());
  p.flags |= tcp::kAck;
  EXPECT_TRUE(p.is_synack());
  EXPECT_FALSE(p.is_syn());
  p.flags = tcp::kRst;
  EXPECT_TRUE(p.is_rst());
  EXPECT_NE(describe(p).find("192.0.2.80:80"), std::string::npos);
}

TEST(Pcap, WriteReadRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "dropscan_pcap_test.pcap").string();
  {
    PcapWriter w(path);
    w.write(1.5, sample_syn());
    Packet q = sample_syn();
    q.flags = tcp::kRst;
    w.write(2500.25, q);
    EXPECT_EQ(w.count(), 2u);
  }
  const auto recs = read_pcap(path);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_NEAR(recs[0].time, 1.5, 1e-3);
  EXPECT_NEAR(recs[1].time, 2500.25, 1e-3);
  const auto p = decode(recs[1].bytes);
  ASSERT_TRUE(p.has_value());
  EXPECT_TRUE(p->is_rst());
  std::filesystem::remove(path);
}

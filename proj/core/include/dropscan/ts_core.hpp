#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dropscan {

/// Milliseconds on a monotonic clock (virtual clock for the simulator).
using Millis = double;

enum class SourceLabel : std::uint8_t { A, B };

enum class ProbeOutcome : std::uint8_t { Response, Timeout, IcmpUnreachable };

/// One IPID observation elicited by a SYN/ACK probe to the client.
struct IpidSample {
  std::uint64_t probe_seq = 0;
  Millis send_time = 0;
  std::optional<Millis> recv_time;  // absent when the probe went unanswered
  std::uint16_t ipid = 0;           // meaningful only when recv_time is set
  SourceLabel source_label = SourceLabel::A;
  ProbeOutcome outcome = ProbeOutcome::Timeout;

  bool responded() const noexcept { return recv_time.has_value(); }
};

/// Per-interval IPID increments with a missing-observation mask.
///
/// values[i] is the IPID change between sampling interval i and interval
/// i + 1. When interval i + 1 saw no response it is flagged missing and the
/// accumulated change lands on the next observed interval. Values are held as
/// doubles so the same type carries synthetic (real-valued) series.
struct DiffSeries {
  std::vector<double> values;
  std::vector<bool> missing;
  int interval_ms = 1000;
  std::size_t t1_index = 0;

  std::size_t size() const noexcept { return values.size(); }
  std::size_t n_effective() const noexcept;
  /// The pre-intervention segment [0, t1_index).
  DiffSeries base_segment() const;
  /// Throws InvalidArgument when the structural invariants do not hold.
  void validate() const;

  friend bool operator==(const DiffSeries&, const DiffSeries&) = default;
};

/// Acceptable per-second IPID increments for a global-IPID client:
/// [neg_low, 0) U (0, pos_high].
struct QualificationRange {
  static constexpr int neg_low = -40;
  static constexpr int neg_high_exclusive = 0;
  static constexpr int pos_low_exclusive = 0;
  static constexpr int pos_high = 1000;

  static constexpr bool accepts(long d) noexcept {
    return (d >= neg_low && d < neg_high_exclusive) ||
           (d > pos_low_exclusive && d <= pos_high);
  }
};

struct QualificationResult {
  bool global = false;
  std::string reason;

  friend bool operator==(const QualificationResult&, const QualificationResult&) = default;
};

/// Smallest-magnitude representative of (cur - prev) mod 2^16, in
/// [-32768, 32767].
constexpr int wrap_diff(std::uint16_t prev, std::uint16_t cur) noexcept {
  const int d = (static_cast<int>(cur) - static_cast<int>(prev)) & 0xFFFF;
  return d >= 0x8000 ? d - 0x10000 : d;
}

/// Buckets responses by probe send time into fixed intervals and differences
/// the last IPID of each observed interval against the previous observed one.
///
/// The bucket origin is the first sample's send time. When
/// `first_synack_ms` is given, t1_index is the index of the first value whose
/// interval contains that instant.
DiffSeries build_diff_series(std::span<const IpidSample> samples, int interval_ms,
                             std::optional<Millis> first_synack_ms = std::nullopt);

/// Global-IPID test over per-second diffs gathered while alternating the
/// probe source between two return addresses.
QualificationResult qualify_global_ipid(std::span<const int> diffs,
                                        std::size_t min_diffs = 2);

/// Diffs between consecutively sent probes that both drew a response, taken
/// in arrival order.
std::vector<int> adjacent_probe_diffs(std::span<const IpidSample> samples);

}  // namespace dropscan

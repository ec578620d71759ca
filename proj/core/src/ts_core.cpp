#include "dropscan/ts_core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dropscan/error.hpp"

namespace dropscan {

std::size_t DiffSeries::n_effective() const noexcept {
  return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), false));
}

DiffSeries DiffSeries::base_segment() const {
  DiffSeries base;
  const auto end = std::min(t1_index, values.size());
  base.values.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(end));
  base.missing.assign(missing.begin(), missing.begin() + static_cast<std::ptrdiff_t>(end));
  base.interval_ms = interval_ms;
  base.t1_index = end;
  return base;
}

void DiffSeries::validate() const {
  if (values.size() != missing.size()) {
    throw Error(ErrorKind::InvalidArgument, "values and missing mask differ in length");
  }
  if (interval_ms <= 0) {
    throw Error(ErrorKind::InvalidArgument, "interval_ms must be positive");
  }
  if (t1_index == 0 || t1_index >= values.size()) {
    throw Error(ErrorKind::InvalidArgument,
                "t1_index " + std::to_string(t1_index) + " outside (0, " +
                    std::to_string(values.size()) + ")");
  }
}

DiffSeries build_diff_series(std::span<const IpidSample> samples, int interval_ms,
                             std::optional<Millis> first_synack_ms) {
  if (interval_ms <= 0) {
    throw Error(ErrorKind::InvalidArgument, "interval_ms must be positive");
  }
  std::size_t responses = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i > 0 && samples[i].send_time < samples[i - 1].send_time) {
      throw Error(ErrorKind::NonMonotonicTimestamps,
                  "sample " + std::to_string(i) + " sent before its predecessor");
    }
    if (samples[i].recv_time) {
      if (*samples[i].recv_time < samples[i].send_time) {
        throw Error(ErrorKind::NonMonotonicTimestamps,
                    "sample " + std::to_string(i) + " received before it was sent");
      }
      ++responses;
    }
  }
  if (responses < 2) {
    throw Error(ErrorKind::TooFewResponses,
                std::to_string(responses) + " responses, need at least 2");
  }

  const Millis origin = samples.front().send_time;
  const double width = static_cast<double>(interval_ms);
  auto bucket_of = [&](Millis t) {
    return static_cast<std::size_t>(std::floor((t - origin) / width));
  };
  const std::size_t n_buckets = bucket_of(samples.back().send_time) + 1;

  // Last IPID per bucket in arrival order.
  struct Last {
    bool seen = false;
    Millis recv = 0;
    std::uint16_t ipid = 0;
  };
  std::vector<Last> last(n_buckets);
  for (const auto& s : samples) {
    if (!s.recv_time) continue;
    auto& slot = last[bucket_of(s.send_time)];
    if (!slot.seen || *s.recv_time >= slot.recv) {
      slot = {true, *s.recv_time, s.ipid};
    }
  }

  DiffSeries out;
  out.interval_ms = interval_ms;
  out.values.assign(n_buckets - 1, 0.0);
  out.missing.assign(n_buckets - 1, true);
  std::optional<std::uint16_t> prev;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    if (!last[b].seen) continue;
    if (prev && b > 0) {
      out.values[b - 1] = wrap_diff(*prev, last[b].ipid);
      out.missing[b - 1] = false;
    }
    prev = last[b].ipid;
  }

  if (first_synack_ms) {
    const double rel = (*first_synack_ms - origin) / width;
    out.t1_index = rel <= 0 ? 0 : static_cast<std::size_t>(std::floor(rel));
  }
  return out;
}

QualificationResult qualify_global_ipid(std::span<const int> diffs, std::size_t min_diffs) {
  if (diffs.size() < std::max<std::size_t>(min_diffs, 1)) {
    return {false, "insufficient data: " + std::to_string(diffs.size()) + " diffs"};
  }
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    if (diffs[i] == 0) {
      return {false, "zero increment at diff " + std::to_string(i) + " (IPID not global)"};
    }
    if (!QualificationRange::accepts(diffs[i])) {
      return {false, "increment " + std::to_string(diffs[i]) + " at diff " +
                         std::to_string(i) + " outside [-40,0) U (0,1000]"};
    }
  }
  return {true, "global"};
}

std::vector<int> adjacent_probe_diffs(std::span<const IpidSample> samples) {
  std::vector<const IpidSample*> answered;
  for (const auto& s : samples) {
    if (s.recv_time) answered.push_back(&s);
  }
  std::stable_sort(answered.begin(), answered.end(),
                   [](const IpidSample* a, const IpidSample* b) { return *a->recv_time < *b->recv_time; });
  std::vector<int> diffs;
  for (std::size_t i = 1; i < answered.size(); ++i) {
    const auto gap = static_cast<long long>(answered[i]->probe_seq) -
                     static_cast<long long>(answered[i - 1]->probe_seq);
    if (gap == 1 || gap == -1) {
      diffs.push_back(wrap_diff(answered[i - 1]->ipid, answered[i]->ipid));
    }
  }
  return diffs;
}

}  // namespace dropscan

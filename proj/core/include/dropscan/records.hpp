#pragma once

// Line-delimited JSON records. Every line carries "schema_version" and a
// "type" tag:
//
//   series         {series_id, interval_ms, t1_index, values[], missing[],
//                   schedule?: {r, offsets_ms[]}, label?, seed?}
//   verdict        {series_id, case, reason, beta_r_hat, beta_r_se, k1,
//                   k2prime, order?: {p, q}, outliers[], label?}
//   qualification  {addr, global, reason, diffs[]}
//   result         {plan_index, replication, client, server, server_port,
//                   client_group, server_group, verdict, liveness, series,
//                   schedule, discarded, requalified, started_ms,
//                   finished_ms, truth?}
//   aggregate_row  {client_group, server_group, counts: {S->C, None, C->S,
//                   Error}, percent: {...}, discarded}
//
// Addresses are dotted quads. Missing series entries hold 0.

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dropscan/intervention.hpp"
#include "dropscan/orchestrator.hpp"
#include "dropscan/ts_core.hpp"

namespace dropscan {

inline constexpr int kSchemaVersion = 1;

struct SeriesRecord {
  std::string series_id;
  DiffSeries series;
  std::optional<RetransSchedule> schedule;
  std::optional<VerdictCase> label;
  std::optional<std::uint64_t> seed;

  friend bool operator==(const SeriesRecord&, const SeriesRecord&) = default;
};

struct VerdictRecord {
  std::string series_id;
  Verdict verdict;
  std::optional<VerdictCase> label;

  friend bool operator==(const VerdictRecord&, const VerdictRecord&) = default;
};

struct QualificationRecord {
  Ipv4 addr = 0;
  QualificationResult result;
  std::vector<int> diffs;

  friend bool operator==(const QualificationRecord&, const QualificationRecord&) = default;
};

enum class RecordType : std::uint8_t { Series, Verdict, Qualification, Result, AggregateRow };

std::string_view to_string(RecordType t) noexcept;

nlohmann::json to_json(const SeriesRecord& r);
nlohmann::json to_json(const VerdictRecord& r);
nlohmann::json to_json(const QualificationRecord& r);
nlohmann::json to_json(const ExperimentResult& r);
nlohmann::json to_json(const AggregateRow& r);

// The parsers throw MalformedRecord on a wrong type tag, an unknown
// schema_version or a missing/ill-typed field.
SeriesRecord series_from_json(const nlohmann::json& j);
VerdictRecord verdict_from_json(const nlohmann::json& j);
QualificationRecord qualification_from_json(const nlohmann::json& j);
ExperimentResult result_from_json(const nlohmann::json& j);
AggregateRow aggregate_row_from_json(const nlohmann::json& j);

/// Parses one line and checks schema_version; throws MalformedRecord.
nlohmann::json parse_record_line(std::string_view line);
RecordType record_type(const nlohmann::json& j);

/// One compact JSON object per line.
template <typename T>
std::string to_line(const T& record) {
  return to_json(record).dump();
}

SeriesRecord to_series_record(const LabeledSeries& labeled);

/// Calls fn on every non-blank line of a file, parsed. MalformedRecord
/// errors, including those thrown by fn, name the file and line.
void for_each_record(const std::string& path, const std::function<void(const nlohmann::json&)>& fn);
std::vector<nlohmann::json> read_records(const std::string& path);

/// Appends records to a file, or to stdout when the path is empty or "-".
class RecordWriter {
 public:
  explicit RecordWriter(const std::string& path, bool append = false);
  template <typename T>
  void write(const T& record) {
    write_line(to_line(record));
  }
  void write_line(const std::string& line);
  std::size_t count() const noexcept { return count_; }

 private:
  std::ofstream file_;
  std::ostream* out_;
  std::size_t count_ = 0;
};

}  // namespace dropscan

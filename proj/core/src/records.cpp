#include "dropscan/records.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "dropscan/error.hpp"

namespace dropscan {

using nlohmann::json;

namespace {

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorKind::MalformedRecord, what); }

json header(RecordType t) { return json{{"schema_version", kSchemaVersion}, {"type", to_string(t)}}; }

void expect_type(const json& j, RecordType t) {
  if (!j.is_object()) malformed("record is not an object");
  if (record_type(j) != t) malformed("expected a " + std::string(to_string(t)) + " record");
}

const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) malformed(std::string("missing field '") + name + "'");
  return *it;
}

template <typename T>
T get(const json& j, const char* name) {
  try {
    return field(j, name).get<T>();
  } catch (const json::exception& e) {
    malformed(std::string("field '") + name + "': " + e.what());
  }
}

// NaN travels as null.
json number(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double get_number(const json& j, const char* name) {
  const json& v = field(j, name);
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!v.is_number()) malformed(std::string("field '") + name + "' is not a number");
  return v.get<double>();
}

Ipv4 get_addr(const json& j, const char* name) {
  const auto s = get<std::string>(j, name);
  const auto a = parse_ipv4(s);
  if (!a) malformed(std::string("field '") + name + "' is not an IPv4 address: " + s);
  return *a;
}

VerdictCase get_case(const json& j, const char* name) {
  const auto s = get<std::string>(j, name);
  const auto c = verdict_case_from_string(s);
  if (!c) malformed(std::string("field '") + name + "' is not a verdict case: " + s);
  return *c;
}

std::optional<VerdictCase> get_optional_case(const json& j, const char* name) {
  if (!j.contains(name) || j[name].is_null()) return std::nullopt;
  return get_case(j, name);
}

json series_body(const DiffSeries& s) {
  json values = json::array();
  for (std::size_t i = 0; i < s.values.size(); ++i) values.push_back(s.missing[i] ? 0.0 : s.values[i]);
  return json{{"interval_ms", s.interval_ms},
              {"t1_index", s.t1_index},
              {"values", std::move(values)},
              {"missing", std::vector<bool>(s.missing.begin(), s.missing.end())}};
}

DiffSeries series_from_body(const json& j) {
  DiffSeries s;
  s.interval_ms = get<int>(j, "interval_ms");
  s.t1_index = get<std::size_t>(j, "t1_index");
  s.values = get<std::vector<double>>(j, "values");
  const auto missing = get<std::vector<bool>>(j, "missing");
  s.missing.assign(missing.begin(), missing.end());
  // t1_index is not checked here: a failed analysis may have been stored with
  // an unusable one.
  if (s.values.size() != s.missing.size()) malformed("values and missing differ in length");
  if (s.interval_ms <= 0) malformed("interval_ms must be positive");
  return s;
}

json schedule_json(const RetransSchedule& s) { return json{{"r", s.r}, {"offsets_ms", s.offsets_ms}}; }

RetransSchedule schedule_from_json(const json& j) {
  RetransSchedule s;
  s.r = get<int>(j, "r");
  s.offsets_ms = get<std::vector<std::int64_t>>(j, "offsets_ms");
  try {
    s.validate();
  } catch (const Error& e) {
    malformed(e.what());
  }
  return s;
}

json verdict_body(const Verdict& v) {
  json j{{"case", to_string(v.kase)},   {"reason", v.reason},  {"beta_r_hat", number(v.beta_r_hat)},
         {"beta_r_se", number(v.beta_r_se)}, {"k1", number(v.k1)}, {"k2prime", number(v.k2prime)},
         {"outliers", v.outlier_indices}};
  if (v.order) j["order"] = json{{"p", v.order->p}, {"q", v.order->q}};
  return j;
}

Verdict verdict_from_body(const json& j) {
  Verdict v;
  v.kase = get_case(j, "case");
  v.reason = get<std::string>(j, "reason");
  v.beta_r_hat = get_number(j, "beta_r_hat");
  v.beta_r_se = get_number(j, "beta_r_se");
  v.k1 = get_number(j, "k1");
  v.k2prime = get_number(j, "k2prime");
  v.outlier_indices = get<std::vector<std::size_t>>(j, "outliers");
  if (j.contains("order")) v.order = ArmaOrder{get<int>(j["order"], "p"), get<int>(j["order"], "q")};
  return v;
}

const char* const kColumns[4] = {"S->C", "None", "C->S", "Error"};

}  // namespace

std::string_view to_string(RecordType t) noexcept {
  switch (t) {
    case RecordType::Series: return "series";
    case RecordType::Verdict: return "verdict";
    case RecordType::Qualification: return "qualification";
    case RecordType::Result: return "result";
    case RecordType::AggregateRow: return "aggregate_row";
  }
  return "series";
}

RecordType record_type(const json& j) {
  const auto s = get<std::string>(j, "type");
  for (auto t : {RecordType::Series, RecordType::Verdict, RecordType::Qualification, RecordType::Result,
                 RecordType::AggregateRow}) {
    if (to_string(t) == s) return t;
  }
  malformed("unknown record type '" + s + "'");
}

json parse_record_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    malformed(e.what());
  }
  if (!j.is_object()) malformed("record is not an object");
  const int version = get<int>(j, "schema_version");
  if (version != kSchemaVersion) malformed("unsupported schema_version " + std::to_string(version));
  record_type(j);
  return j;
}

json to_json(const SeriesRecord& r) {
  json j = header(RecordType::Series);
  j["series_id"] = r.series_id;
  j.update(series_body(r.series));
  if (r.schedule) j["schedule"] = schedule_json(*r.schedule);
  if (r.label) j["label"] = to_string(*r.label);
  if (r.seed) j["seed"] = *r.seed;
  return j;
}

SeriesRecord series_from_json(const json& j) {
  expect_type(j, RecordType::Series);
  SeriesRecord r;
  r.series_id = get<std::string>(j, "series_id");
  r.series = series_from_body(j);
  if (j.contains("schedule")) r.schedule = schedule_from_json(j["schedule"]);
  r.label = get_optional_case(j, "label");
  if (j.contains("seed")) r.seed = get<std::uint64_t>(j, "seed");
  return r;
}

json to_json(const VerdictRecord& r) {
  json j = header(RecordType::Verdict);
  j["series_id"] = r.series_id;
  j.update(verdict_body(r.verdict));
  if (r.label) j["label"] = to_string(*r.label);
  return j;
}

VerdictRecord verdict_from_json(const json& j) {
  expect_type(j, RecordType::Verdict);
  VerdictRecord r;
  r.series_id = get<std::string>(j, "series_id");
  r.verdict = verdict_from_body(j);
  r.label = get_optional_case(j, "label");
  return r;
}

json to_json(const QualificationRecord& r) {
  json j = header(RecordType::Qualification);
  j["addr"] = format_ipv4(r.addr);
  j["global"] = r.result.global;
  j["reason"] = r.result.reason;
  j["diffs"] = r.diffs;
  return j;
}

QualificationRecord qualification_from_json(const json& j) {
  expect_type(j, RecordType::Qualification);
  QualificationRecord r;
  r.addr = get_addr(j, "addr");
  r.result.global = get<bool>(j, "global");
  r.result.reason = get<std::string>(j, "reason");
  r.diffs = get<std::vector<int>>(j, "diffs");
  return r;
}

json to_json(const ExperimentResult& r) {
  json j = header(RecordType::Result);
  j["plan_index"] = r.plan_index;
  j["replication"] = r.replication;
  j["client"] = format_ipv4(r.client);
  j["server"] = format_ipv4(r.server);
  j["server_port"] = r.server_port;
  j["client_group"] = r.client_group;
  j["server_group"] = r.server_group;
  j["verdict"] = verdict_body(r.verdict);
  j["liveness"] = json{{"server_avg_synacks", r.liveness.server_avg_synacks},
                       {"client_response_fraction", r.liveness.client_response_fraction},
                       {"sender_responsive", r.liveness.sender_responsive},
                       {"passed", r.liveness.passed}};
  j["series"] = series_body(r.series);
  j["schedule"] = schedule_json(r.schedule);
  j["discarded"] = r.discarded;
  j["requalified"] = r.requalified;
  j["started_ms"] = r.started_ms;
  j["finished_ms"] = r.finished_ms;
  if (r.truth) j["truth"] = to_string(*r.truth);
  return j;
}

ExperimentResult result_from_json(const json& j) {
  expect_type(j, RecordType::Result);
  ExperimentResult r;
  r.plan_index = get<std::size_t>(j, "plan_index");
  r.replication = get<int>(j, "replication");
  r.client = get_addr(j, "client");
  r.server = get_addr(j, "server");
  r.server_port = get<std::uint16_t>(j, "server_port");
  r.client_group = get<std::string>(j, "client_group");
  r.server_group = get<std::string>(j, "server_group");
  r.verdict = verdict_from_body(field(j, "verdict"));
  const json& l = field(j, "liveness");
  r.liveness.server_avg_synacks = get<double>(l, "server_avg_synacks");
  r.liveness.client_response_fraction = get<double>(l, "client_response_fraction");
  r.liveness.sender_responsive = get<bool>(l, "sender_responsive");
  r.liveness.passed = get<bool>(l, "passed");
  const json& s = field(j, "series");
  r.series = series_from_body(s);
  r.schedule = schedule_from_json(field(j, "schedule"));
  r.discarded = get<bool>(j, "discarded");
  r.requalified = get<bool>(j, "requalified");
  r.started_ms = get<double>(j, "started_ms");
  r.finished_ms = get<double>(j, "finished_ms");
  r.truth = get_optional_case(j, "truth");
  return r;
}

json to_json(const AggregateRow& r) {
  json j = header(RecordType::AggregateRow);
  j["client_group"] = r.client_group;
  j["server_group"] = r.server_group;
  json counts, percent;
  for (std::size_t c = 0; c < 4; ++c) {
    counts[kColumns[c]] = r.counts[c];
    percent[kColumns[c]] = r.percent(c);
  }
  j["counts"] = std::move(counts);
  j["percent"] = std::move(percent);
  j["discarded"] = r.discarded;
  return j;
}

AggregateRow aggregate_row_from_json(const json& j) {
  expect_type(j, RecordType::AggregateRow);
  std::array<std::size_t, 4> counts{};
  const json& c = field(j, "counts");
  for (std::size_t i = 0; i < 4; ++i) counts[i] = get<std::size_t>(c, kColumns[i]);
  AggregateRow r = make_row(get<std::string>(j, "client_group"), get<std::string>(j, "server_group"), counts);
  r.discarded = get<std::size_t>(j, "discarded");
  return r;
}

SeriesRecord to_series_record(const LabeledSeries& labeled) {
  SeriesRecord r;
  r.series_id = labeled.scenario_name + "/" + std::to_string(labeled.seed);
  r.series = labeled.series;
  r.schedule = labeled.schedule;
  r.label = labeled.truth;
  r.seed = labeled.seed;
  return r;
}

void for_each_record(const std::string& path, const std::function<void(const json&)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MalformedRecord, "cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(parse_record_line(line));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MalformedRecord) throw;
      throw Error(ErrorKind::MalformedRecord, path + ":" + std::to_string(lineno) + ": " + e.message());
    }
  }
}

std::vector<json> read_records(const std::string& path) {
  std::vector<json> out;
  for_each_record(path, [&](const json& j) { out.push_back(j); });
  return out;
}

RecordWriter::RecordWriter(const std::string& path, bool append) : out_(&std::cout) {
  if (path.empty() || path == "-") return;
  file_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!file_) throw Error(ErrorKind::ConfigError, "cannot open output " + path);
  out_ = &file_;
}

void RecordWriter::write_line(const std::string& line) {
  *out_ << line << '\n';
  out_->flush();
  if (!*out_) throw Error(ErrorKind::EngineFailure, "record write failed");
  ++count_;
}

}  // namespace dropscan

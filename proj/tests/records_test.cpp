#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dropscan/error.hpp"
#include "dropscan/records.hpp"

using namespace dropscan;
using nlohmann::json;

namespace {

DiffSeries small_series() {
  DiffSeries d;
  d.values = {1, 2, 0, 4, 6};
  d.missing = {false, false, true, false, false};
  d.t1_index = 3;
  d.interval_ms = 1000;
  return d;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidArgument;
}

std::string temp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST(Records, SeriesRoundTrip) {
  SeriesRecord r;
  r.series_id = "none/7";
  r.series = small_series();
  r.schedule = RetransSchedule::from_offsets({0, 1000, 3000});
  r.label = VerdictCase::NoPacketsDropped;
  r.seed = 7;
  const json j = parse_record_line(to_line(r));
  EXPECT_EQ(record_type(j), RecordType::Series);
  EXPECT_EQ(series_from_json(j), r);

  SeriesRecord bare;
  bare.series_id = "x";
  bare.series = small_series();
  EXPECT_EQ(series_from_json(to_json(bare)), bare);
}

TEST(Records, VerdictRoundTripKeepsNaN) {
  VerdictRecord r;
  r.series_id = "a";
  r.verdict = Verdict::error("indeterminate");
  const std::string line = to_line(r);
  EXPECT_NE(line.find("null"), std::string::npos);
  EXPECT_EQ(verdict_from_json(parse_record_line(line)), r);

  r.verdict.kase = VerdictCase::ClientToServerDropped;
  r.verdict.reason.clear();
  r.verdict.beta_r_hat = 14.9;
  r.verdict.beta_r_se = 0.3;
  r.verdict.k1 = 2.5;
  r.verdict.k2prime = 10;
  r.verdict.order = ArmaOrder{1, 2};
  r.verdict.outlier_indices = {4, 9};
  r.label = VerdictCase::ClientToServerDropped;
  EXPECT_EQ(verdict_from_json(parse_record_line(to_line(r))), r);
}

TEST(Records, QualificationRoundTrip) {
  QualificationRecord r;
  r.addr = 0xCB00710A;
  r.result = qualify_global_ipid(std::vector<int>{1, 0});
  r.diffs = {1, 0};
  const json j = to_json(r);
  EXPECT_EQ(j["addr"], "203.0.113.10");
  EXPECT_EQ(qualification_from_json(j), r);
}

TEST(Records, ResultRoundTrip) {
  ExperimentResult r;
  r.plan_index = 2;
  r.replication = 5;
  r.client = 0xCB00710A;
  r.server = 0xC0000250;
  r.server_port = 443;
  r.client_group = "CN";
  r.server_group = "Web";
  r.verdict = Verdict::error("liveness");
  r.liveness = LivenessReport::evaluate(2.0, 0.9, true);
  r.series = small_series();
  r.schedule = RetransSchedule::from_offsets({0, 1000});
  r.discarded = true;
  r.requalified = false;
  r.started_ms = 10;
  r.finished_ms = 20;
  r.truth = VerdictCase::ServerToClientDropped;
  EXPECT_EQ(result_from_json(parse_record_line(to_line(r))), r);
}

TEST(Records, AggregateRowRoundTrip) {
  AggregateRow r = make_row("CN", "Tor-dir", {2200, 19, 504, 289});
  r.discarded = 3;
  const json j = to_json(r);
  EXPECT_DOUBLE_EQ(j["percent"]["S->C"].get<double>(), 73.04);
  EXPECT_EQ(aggregate_row_from_json(j), r);
}

TEST(Records, RejectsBadLines) {
  EXPECT_EQ(kind_of([] { parse_record_line("{not json"); }), ErrorKind::MalformedRecord);
  EXPECT_EQ(kind_of([] { parse_record_line(R"({"schema_version":2,"type":"series"})"); }),
            ErrorKind::MalformedRecord);
  EXPECT_EQ(kind_of([] { parse_record_line(R"({"schema_version":1,"type":"bogus"})"); }),
            ErrorKind::MalformedRecord);
  SeriesRecord r;
  r.series_id = "x";
  r.series = small_series();
  json j = to_json(r);
  EXPECT_EQ(kind_of([&] { verdict_from_json(j); }), ErrorKind::MalformedRecord);
  j.erase("values");
  EXPECT_EQ(kind_of([&] { series_from_json(j); }), ErrorKind::MalformedRecord);
  j = to_json(r);
  j["missing"] = json::array({false});
  EXPECT_EQ(kind_of([&] { series_from_json(j); }), ErrorKind::MalformedRecord);
}

TEST(Records, FileRoundTripAndLineNumbers) {
  const auto path = temp_path("dropscan_records_test.jsonl");
  {
    RecordWriter w(path);
    SeriesRecord r;
    r.series_id = "x";
    r.series = small_series();
    w.write(r);
    w.write(make_row("a", "b", {1, 2, 3, 4}));
    EXPECT_EQ(w.count(), 2u);
  }
  const auto lines = read_records(path);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(record_type(lines[1]), RecordType::AggregateRow);
  {
    std::ofstream f(path, std::ios::app);
    f << "\n{\"broken\n";
  }
  try {
    read_records(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
  EXPECT_THROW(read_records(path), Error);
}

TEST(Records, SeriesRecordFromCorpus) {
  SimScenario sc;
  sc.name = "none";
  sc.base_duration_s = 20;
  sc.intervention_duration_s = 20;
  sc.seed = 4;
  const auto corpus = generate_corpus({sc}, 1);
  const SeriesRecord r = to_series_record(corpus[0]);
  EXPECT_EQ(r.series_id, "none/4");
  EXPECT_EQ(r.label, VerdictCase::NoPacketsDropped);
  ASSERT_TRUE(r.schedule.has_value());
  EXPECT_EQ(r.schedule->r, 3);
}

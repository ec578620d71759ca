#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dropscan/records.hpp"

#ifdef DROPSCAN_CLI

using namespace dropscan;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("dropscan_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Runs the tool with stdout and stderr captured to files; returns the exit code.
  int run(const std::string& args) {
    const std::string cmd =
        std::string(DROPSCAN_CLI) + " " + args + " > " + path("stdout") + " 2> " + path("stderr");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const std::string& file) const {
    std::ifstream in(file, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string out() const { return read(path("stdout")); }
  std::string err() const { return read(path("stderr")); }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  fs::path dir_;
};

const std::string kScenarios = std::string(DROPSCAN_TOOL_CONFIGS) + "/scenarios.json";

}  // namespace

TEST_F(Cli, SimulateIsByteStable) {
  ASSERT_EQ(run("simulate " + kScenarios + " --seeds 2 -o " + path("a.jsonl")), 0) << err();
  ASSERT_EQ(run("simulate " + kScenarios + " --seeds 2 --threads 3 -o " + path("b.jsonl")), 0) << err();
  const std::string a = read(path("a.jsonl"));
  EXPECT_EQ(a, read(path("b.jsonl")));
  EXPECT_EQ(read_records(path("a.jsonl")).size(), 6u);
}

TEST_F(Cli, AnalyzeMatchesLibrary) {
  ASSERT_EQ(run("simulate " + kScenarios + " -o " + path("s.jsonl")), 0) << err();
  ASSERT_EQ(run("analyze " + path("s.jsonl") + " -o " + path("v.jsonl")), 0) << err();
  const auto series = read_records(path("s.jsonl"));
  const auto verdicts = read_records(path("v.jsonl"));
  ASSERT_EQ(series.size(), verdicts.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const SeriesRecord s = series_from_json(series[i]);
    const VerdictRecord v = verdict_from_json(verdicts[i]);
    EXPECT_EQ(v.series_id, s.series_id);
    EXPECT_EQ(v.label, s.label);
    EXPECT_EQ(v.verdict, analyze(s.series, *s.schedule, TestConfig{}));
    EXPECT_EQ(v.verdict.kase, *s.label) << s.series_id;
  }
  // Same input twice gives the same bytes.
  ASSERT_EQ(run("analyze " + path("s.jsonl") + " -o " + path("v2.jsonl")), 0);
  EXPECT_EQ(read(path("v.jsonl")), read(path("v2.jsonl")));
}

TEST_F(Cli, ReportOnReferenceCounts) {
  ASSERT_EQ(run("report " + std::string(DROPSCAN_TEST_DATA) + "/reference_counts.jsonl"), 0) << err();
  const std::string text = out();
  EXPECT_NE(text.find("2200 (73.04)"), std::string::npos) << text;
  EXPECT_NE(text.find("All,Tor-dir"), std::string::npos);
  EXPECT_NE(text.find("2203 (35.09)"), std::string::npos);
  ASSERT_EQ(run("report --format jsonl " + std::string(DROPSCAN_TEST_DATA) + "/reference_counts.jsonl"), 0);
  std::istringstream lines(out());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    EXPECT_EQ(record_type(parse_record_line(line)), RecordType::AggregateRow);
    ++n;
  }
  EXPECT_EQ(n, 15u);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("frobnicate"), 2);
  write("bad.json", "{\"backend\": \"sim\", \"nope\": 1}");
  EXPECT_EQ(run("measure -c " + path("bad.json")), 2);
  EXPECT_NE(err().find("nope"), std::string::npos) << err();
  write("live.json", R"({"backend": "live", "targets": [{"client": "203.0.113.10", "server": "192.0.2.80"}]})");
  EXPECT_EQ(run("measure -c " + path("live.json")), 2);
  EXPECT_NE(err().find("--i-understand-ethics"), std::string::npos) << err();
  write("garbage.jsonl", "{\"schema_version\": 1, \"type\": \"series\"}\n");
  EXPECT_EQ(run("analyze " + path("garbage.jsonl")), 2);
  EXPECT_NE(err().find("garbage.jsonl:1"), std::string::npos) << err();

  // A series without a stored schedule needs --schedule; one too short to
  // analyze yields only Error verdicts.
  SeriesRecord r;
  r.series_id = "short";
  r.series.values = {1, 1, 1, 1};
  r.series.missing.assign(4, false);
  r.series.t1_index = 2;
  write("short.jsonl", to_line(r) + "\n");
  EXPECT_EQ(run("analyze " + path("short.jsonl")), 2);
  EXPECT_NE(err().find("--schedule"), std::string::npos) << err();
  EXPECT_EQ(run("analyze --schedule 0,1000,3000 " + path("short.jsonl")), 1);
}

#endif

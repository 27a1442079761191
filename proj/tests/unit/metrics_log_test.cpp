#include <gtest/gtest.h>

#include <fstream>

#include <json.hpp>

#include "dropbp/metrics_log.hpp"
#include "dropbp/run_config.hpp"
#include "helpers.hpp"

using namespace dropbp;

TEST(MetricsLog, OneSelfDescribingRecordPerLine) {
  dropbp::testing::TempDir dir;
  {
    MetricsLog log(dir.file("a.jsonl"));
    log.config(RunConfig{});
    IterRecord r;
    r.iter = 3;
    r.loss = 1.25;
    r.dropped = {true, false};
    r.rates = {0.5, 0.5};
    log.iter(r);
    log.val({3, 1.0, 2.718, {}});
    log.summary(4, 1.0, std::nullopt, {}, {});
  }
  std::ifstream in(dir.file("a.jsonl"));
  std::vector<std::string> types;
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("schema"), kLogSchemaVersion);
    EXPECT_TRUE(j.contains("ts"));
    types.push_back(j.at("type"));
  }
  EXPECT_EQ(types, (std::vector<std::string>{"config", "iter", "val", "summary"}));
  EXPECT_EQ(count_records(dir.file("a.jsonl"), "iter"), 1u);
}

TEST(MetricsLog, CompareIgnoresTimestamps) {
  dropbp::testing::TempDir dir;
  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    MetricsLog log(dir.file(name));
    log.abort(2, "loss is NaN");
  }
  {
    std::ofstream(dir.file("c.jsonl")) << R"({"iter":2,"reason":"other","schema":1,"ts":"1","type":"abort"})" << '\n';
  }
  EXPECT_TRUE(compare_logs(dir.file("a.jsonl"), dir.file("b.jsonl")).equal);
  const auto diff = compare_logs(dir.file("a.jsonl"), dir.file("c.jsonl"));
  EXPECT_FALSE(diff.equal);
  EXPECT_EQ(diff.first_difference, 1u);
}

TEST(MetricsLog, DisabledLogWritesNothing) {
  MetricsLog log;
  EXPECT_FALSE(log.enabled());
  log.abort(0, "x");
}

#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "dropbp/metrics_log.hpp"
#include "helpers.hpp"

namespace dropbp {
namespace {

using testing::TempDir;

struct Result {
  int code = -1;
  std::string out, err;
};

Result invoke(std::vector<std::string> args, const std::map<std::string, std::string>& env = {},
              const std::string& stdin_text = {}) {
  args.insert(args.begin(), "dropbp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::istringstream in(stdin_text);
  std::ostringstream out, err;
  auto getenv = [&env](const char* name) -> const char* {
    auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), in, out, err, getenv);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> tiny_run(std::vector<std::string> extra) {
  std::vector<std::string> args = {"train"};
  for (const char* o : {"model.n_units=1", "model.d_model=8", "model.d_ff=16", "model.n_heads=2",
                        "model.vocab_size=9", "model.seq_len=8", "dataset.seq_len=8",
                        "dataset.copy_examples=200", "iters=6", "batch_size=4", "val_every=3",
                        "val_examples=16"}) {
    args.push_back("--override");
    args.push_back(o);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(invoke({}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"no-such-command"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"train", "--no-such-flag"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"train", "--method", "bogus", "--print-config"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"train", "--override", "model.nope=1", "--print-config"}).code,
            cli::kExitUsage);
  EXPECT_EQ(invoke({"train", "--p-avg", "1.5", "--print-config"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"count-submodules", "--layers", "4"}).code, cli::kExitUsage);
}

TEST(Cli, HelpExitsZero) {
  const Result r = invoke({"--help"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("cost-report"), std::string::npos);
}

TEST(Cli, ConfigEnvOverrideFlagPrecedence) {
  TempDir dir;
  const std::string path = dir.file("run.json");
  std::ofstream(path) << R"({"seed": 1, "lr": 0.01, "iters": 7})";

  auto seed_of = [](const Result& r) {
    const auto pos = r.out.find("\n  \"seed\": ");
    return r.out.substr(pos + 11, r.out.find(',', pos) - pos - 11);
  };
  Result r = invoke({"train", "--config", path, "--print-config"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(seed_of(r), "1");
  EXPECT_NE(r.out.find("\"iters\": 7"), std::string::npos);

  const std::map<std::string, std::string> env{{"DROPBP_SEED", "2"}};
  r = invoke({"train", "--config", path, "--print-config"}, env);
  EXPECT_EQ(seed_of(r), "2");
  r = invoke({"train", "--config", path, "--override", "seed=3", "--print-config"}, env);
  EXPECT_EQ(seed_of(r), "3");
  r = invoke({"train", "--config", path, "--override", "seed=3", "--seed", "4", "--print-config"},
             env);
  EXPECT_EQ(seed_of(r), "4");
  EXPECT_NE(r.out.find("\"lr\": 0.01"), std::string::npos);
}

TEST(Cli, TrainWritesComparableLogs) {
  TempDir dir;
  const std::string a = dir.file("a.jsonl"), b = dir.file("b.jsonl"), c = dir.file("c.jsonl");
  for (const auto& [log, seed] : {std::pair{a, "5"}, std::pair{b, "5"}, std::pair{c, "6"}}) {
    const Result r = invoke(tiny_run({"--method", "dropbp", "--p-avg", "0.5", "--seed", seed,
                                      "--log", log}));
    ASSERT_EQ(r.code, cli::kExitOk) << r.err;
    EXPECT_NE(r.out.find("final_val_loss"), std::string::npos);
  }
  EXPECT_EQ(count_records(a, "iter"), 6u);
  EXPECT_EQ(count_records(a, "allocator"), 1u);
  const Result same = invoke({"compare-logs", a, b});
  EXPECT_EQ(same.code, cli::kExitOk);
  EXPECT_EQ(same.out, "identical\n");
  EXPECT_EQ(invoke({"compare-logs", a, c}).code, cli::kExitLogsDiffer);
}

TEST(Cli, DivergenceExitsTwo) {
  const Result r = invoke(tiny_run({"--override", "lr=1e300", "--override", "lr_min=0"}));
  EXPECT_EQ(r.code, cli::kExitNumeric) << r.out << r.err;
  EXPECT_NE(r.out.find("aborted"), std::string::npos);
}

TEST(Cli, CountSubmodulesPrintsExactIntegers) {
  const Result r = invoke({"count-submodules", "--layers", "64", "--p", "0.875"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find(" 256\n"), std::string::npos);
  EXPECT_NE(r.out.find(" 5130659561\n"), std::string::npos);
  const Result zero = invoke({"count-submodules", "--layers", "70", "--p", "0", "--method", "dropbp"});
  EXPECT_NE(zero.out.find(" 1180591620717411303424\n"), std::string::npos);  // 2^70
}

TEST(Cli, AllocateReadsTableFromStdin) {
  const Result r = invoke({"allocate", "--p-avg", "0.5"}, {}, "# S F\n1 10\n2,10\n0.1 10\n5 40\n");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("within_budget yes"), std::string::npos);
  EXPECT_EQ(invoke({"allocate"}, {}, "1 2 3\n").code, cli::kExitUsage);
  EXPECT_EQ(invoke({"allocate"}, {}, "x 2\n").code, cli::kExitUsage);
  EXPECT_EQ(invoke({"allocate"}, {}, "").code, cli::kExitUsage);
}

TEST(Cli, AnalyzePathsLinearTable) {
  const Result r = invoke({"analyze-paths", "--blocks", "3", "--reps", "10", "--check-sum"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("k  mean_norm"), std::string::npos);
  EXPECT_NE(r.out.find("\n3  "), std::string::npos);
  EXPECT_NE(r.out.find("max abs diff"), std::string::npos);
  EXPECT_EQ(invoke({"analyze-paths", "--blocks", "3", "--k", "4"}).code, cli::kExitUsage);
}

TEST(Cli, CostReportShowsMeasuredColumns) {
  const Result r = invoke({"cost-report", "--override", "model.n_units=1", "--override",
                           "model.d_model=8", "--override", "model.d_ff=16", "--override",
                           "model.n_heads=2", "--batch", "2", "--seq", "4", "--p", "0.5",
                           "--measure", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("measured_block"), std::string::npos);
  EXPECT_NE(r.out.find("0.500  0.3333"), std::string::npos);
}

}  // namespace
}  // namespace dropbp

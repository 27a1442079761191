#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dropbp/flops_meter.hpp"
#include "dropbp/sensitivity.hpp"

namespace dropbp {

struct RunConfig;

inline constexpr int kLogSchemaVersion = 1;

struct IterRecord {
  std::uint64_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
  FlopsCount flops;                // this iteration, all micro-batches
  std::size_t cached_bytes = 0;    // block plus off-block, last micro-batch
  std::size_t block_bytes = 0;
  std::vector<bool> dropped;       // per layer, this iteration's plan
  std::vector<double> rates;       // per-layer drop probabilities in force

  friend bool operator==(const IterRecord&, const IterRecord&) = default;
};

struct ValRecord {
  std::uint64_t iter = 0;  // evaluated after this many optimizer steps
  double loss = 0.0;
  double perplexity = 0.0;
  FlopsCount cumulative_flops;  // training FLOPs spent so far

  friend bool operator==(const ValRecord&, const ValRecord&) = default;
};

struct WarmupRecord {
  double p_avg = 0.0;
  double rate = 0.0;       // uniform rate used before the boundary
  bool rounded = false;    // rate differs from p_avg
  bool overridden = false;
  std::uint64_t boundary = 0;
};

// Structured log: one JSON object per line. Every record carries
// "schema" and "type"; "ts" is wall-clock time and is ignored by
// compare_logs.
class MetricsLog {
 public:
  MetricsLog() = default;  // discards everything
  explicit MetricsLog(const std::string& path, bool timestamps = true);

  bool enabled() const { return out_.is_open(); }

  void config(const RunConfig& cfg);
  void warmup(const WarmupRecord& rec);
  void allocator(const AllocatorEvent& ev);
  void iter(const IterRecord& rec);
  void val(const ValRecord& rec);
  void abort(std::uint64_t iter, const std::string& reason);
  void summary(std::uint64_t iters, double final_train_loss, std::optional<double> final_val_loss,
               const FlopsCount& total_flops, const FlopsCount& overhead_flops);

 private:
  void write(const std::string& type, const std::string& body_json);

  std::ofstream out_;
  bool timestamps_ = true;
};

struct LogComparison {
  bool equal = false;
  std::size_t first_difference = 0;  // 1-based line number, 0 if equal
  std::string detail;
};

// Line-by-line comparison of two logs with the "ts" field removed.
LogComparison compare_logs(const std::string& path_a, const std::string& path_b);

// Counts records of a given type in a log file.
std::size_t count_records(const std::string& path, const std::string& type);

}  // namespace dropbp

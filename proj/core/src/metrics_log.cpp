#include "dropbp/metrics_log.hpp"

#include <chrono>

#include <json.hpp>

#include "dropbp/error.hpp"
#include "dropbp/run_config.hpp"

namespace dropbp {

using nlohmann::json;

namespace {

json flops_json(const FlopsCount& f) {
  return {{"forward", f.forward}, {"backward_grad", f.backward_grad},
          {"backward_param", f.backward_param}};
}

std::string epoch_millis() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch());
  return std::to_string(secs.count());
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open log '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::string without_ts(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return line;
  j.erase("ts");
  return j.dump();
}

}  // namespace

MetricsLog::MetricsLog(const std::string& path, bool timestamps)
    : out_(path, std::ios::trunc), timestamps_(timestamps) {
  if (!out_) throw InputError("cannot open log '" + path + "' for writing");
}

void MetricsLog::write(const std::string& type, const std::string& body_json) {
  if (!enabled()) return;
  json j = json::parse(body_json);
  j["schema"] = kLogSchemaVersion;
  j["type"] = type;
  if (timestamps_) j["ts"] = epoch_millis();
  out_ << j.dump() << '\n';
  out_.flush();
}

void MetricsLog::config(const RunConfig& cfg) {
  if (!enabled()) return;
  // The log's own path says nothing about the run and would make logs of
  // identical runs differ.
  json tree = json::parse(cfg.to_json());
  tree.erase("log_path");
  write("config", json{{"config", tree}}.dump());
}

void MetricsLog::warmup(const WarmupRecord& r) {
  write("warmup", json{{"p_avg", r.p_avg},
                       {"rate", r.rate},
                       {"rounded", r.rounded},
                       {"overridden", r.overridden},
                       {"boundary", r.boundary}}
                      .dump());
}

void MetricsLog::allocator(const AllocatorEvent& ev) {
  write("allocator", json{{"iter", ev.iteration},
                          {"batch_id", ev.sensitivity.batch_id},
                          {"sensitivity", ev.sensitivity.values},
                          {"flops", ev.flops.per_layer},
                          {"p_avg", ev.p_avg},
                          {"rates", ev.rates.rates()},
                          {"added_sensitivity", ev.added_sensitivity}}
                         .dump());
}

void MetricsLog::iter(const IterRecord& r) {
  if (!enabled()) return;
  write("iter", json{{"iter", r.iter},
                     {"loss", r.loss},
                     {"lr", r.lr},
                     {"flops", flops_json(r.flops)},
                     {"cached_bytes", r.cached_bytes},
                     {"block_bytes", r.block_bytes},
                     {"dropped", r.dropped},
                     {"rates", r.rates}}
                    .dump());
}

void MetricsLog::val(const ValRecord& r) {
  write("val", json{{"iter", r.iter},
                    {"loss", r.loss},
                    {"perplexity", r.perplexity},
                    {"cumulative_flops", flops_json(r.cumulative_flops)}}
                   .dump());
}

void MetricsLog::abort(std::uint64_t iter, const std::string& reason) {
  write("abort", json{{"iter", iter}, {"reason", reason}}.dump());
}

void MetricsLog::summary(std::uint64_t iters, double final_train_loss,
                         std::optional<double> final_val_loss, const FlopsCount& total_flops,
                         const FlopsCount& overhead_flops) {
  write("summary", json{{"iters", iters},
                        {"final_train_loss", final_train_loss},
                        {"final_val_loss", final_val_loss ? json(*final_val_loss) : json(nullptr)},
                        {"total_flops", flops_json(total_flops)},
                        {"overhead_flops", flops_json(overhead_flops)}}
                       .dump());
}

LogComparison compare_logs(const std::string& path_a, const std::string& path_b) {
  const auto a = read_lines(path_a);
  const auto b = read_lines(path_b);
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (without_ts(a[i]) != without_ts(b[i])) {
      return {false, i + 1, "line " + std::to_string(i + 1) + " differs"};
    }
  }
  if (a.size() != b.size()) {
    return {false, n + 1,
            "line counts differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size())};
  }
  return {true, 0, "identical ignoring timestamps"};
}

std::size_t count_records(const std::string& path, const std::string& type) {
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    const json j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.value("type", "") == type) ++n;
  }
  return n;
}

}  // namespace dropbp

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dropbp/baselines.hpp"
#include "dropbp/checkpoint.hpp"
#include "dropbp/cost_model.hpp"
#include "dropbp/dataset.hpp"
#include "dropbp/error.hpp"
#include "dropbp/metrics_log.hpp"
#include "dropbp/paths.hpp"
#include "dropbp/run_config.hpp"
#include "dropbp/sensitivity.hpp"
#include "dropbp/submodules.hpp"
#include "dropbp/trainer.hpp"

namespace dropbp::cli {

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(6) << v;
  return s.str();
}

// Whitespace-aligned table with a header row.
class Table {
 public:
  explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  void print(std::ostream& out) const {
    std::vector<std::size_t> width(rows_.front().size(), 0);
    for (const auto& row : rows_) {
      for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    for (const auto& row : rows_) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        out << (c ? "  " : "");
        if (c + 1 < row.size()) out << std::left << std::setw(static_cast<int>(width[c]));
        out << row[c];
      }
      out << '\n';
    }
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

// Settings shared by the subcommands that build a RunConfig:
// defaults < config file < environment < --override < dedicated flags.
struct ConfigSource {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App& app) {
    app.add_option("--config", path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--override", overrides, "Setting as dotted.key=value (repeatable)");
  }

  RunConfig resolve(const Getenv& getenv) const {
    RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
    apply_env_overrides(cfg, getenv);
    for (const auto& o : overrides) apply_override(cfg, o);
    return cfg;
  }
};

Batch random_batch(std::size_t batch, std::size_t seq, std::size_t vocab, Rng& rng) {
  Batch b;
  b.batch_size = batch;
  b.seq = seq;
  b.tokens.resize(batch * seq);
  b.targets.resize(batch * seq);
  for (auto& t : b.tokens) t = static_cast<int>(rng.uniform_index(vocab));
  for (auto& t : b.targets) t = static_cast<int>(rng.uniform_index(vocab));
  return b;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  ConfigSource source;
  std::optional<std::string> method;
  std::optional<double> p_avg;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> log;
  bool print_config = false;
};

int run_train(const TrainArgs& a, std::ostream& out, const Getenv& getenv) {
  RunConfig cfg = a.source.resolve(getenv);
  if (a.method) cfg.method = parse_method(*a.method);
  if (a.p_avg) cfg.p_avg = *a.p_avg;
  if (a.seed) cfg.seed = *a.seed;
  if (a.log) cfg.log_path = *a.log;
  cfg.validate();
  if (a.print_config) {
    out << cfg.to_json() << '\n';
    return kExitOk;
  }

  const RunMetrics m = train(cfg);
  Table t({"field", "value"});
  t.add({"method", to_string(cfg.method)});
  t.add({"iters", std::to_string(m.iters.size())});
  if (!m.iters.empty()) t.add({"final_train_loss", fixed(m.iters.back().loss, 6)});
  if (auto v = m.final_val_loss()) t.add({"final_val_loss", fixed(*v, 6)});
  t.add({"total_flops", std::to_string(m.total_flops.total())});
  t.add({"overhead_flops", std::to_string(m.overhead_flops.total())});
  if (!m.allocator_events.empty()) {
    std::string rates;
    for (double r : m.allocator_events.back().rates.rates()) {
      rates += (rates.empty() ? "" : ",") + fixed(r, 1);
    }
    t.add({"rates", rates});
  }
  t.print(out);
  if (m.aborted) {
    out << "aborted: " << m.abort_reason << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}

// ---- cost-report -------------------------------------------------------------

struct CostArgs {
  ConfigSource source;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> seq;
  std::vector<double> p_values{0.5, 0.75, 0.875};
  std::uint64_t measure = 0;
  std::uint64_t seed = 0;
};

int run_cost_report(const CostArgs& a, std::ostream& out, const Getenv& getenv) {
  const RunConfig cfg = a.source.resolve(getenv);
  cfg.model.validate();
  const CostShape shape{a.batch.value_or(cfg.batch_size), a.seq.value_or(cfg.dataset.seq_len)};
  if (shape.batch == 0 || shape.seq == 0 || shape.seq > cfg.model.seq_len) {
    throw ArgumentError("cost-report: batch and seq must be positive and seq within the model");
  }
  const std::size_t n = cfg.model.n_layers();

  std::optional<Model> model;
  Batch batch;
  if (a.measure) {
    Rng init = model_rng(a.seed);
    model.emplace(cfg.model, init);
    Rng data = data_rng(a.seed);
    batch = random_batch(shape.batch, shape.seq, cfg.model.vocab_size, data);
  }

  out << "# mode " << to_string(cfg.model.mode) << ", layers " << n << ", batch " << shape.batch
      << ", seq " << shape.seq << ", measured iters " << a.measure << '\n';
  Table t({"p_avg", "theory", "block", "model", "measured_block", "measured_model",
           "baseline_flops", "dropbp_flops", "bytes_ratio"});
  for (double p : a.p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("cost-report: p must lie in [0, 1]");
    const DropRates rates = DropRates::constant(n, p);
    CostReport r = cost_report(cfg.model, shape, rates);
    if (model) attach_measurement(r, measure_reduction(*model, batch, rates, a.measure,
                                                       drop_rng(a.seed)));
    auto opt = [](const std::optional<double>& v) { return v ? fixed(*v, 4) : std::string("-"); };
    t.add({fixed(p, 3), fixed(r.theoretical_ratio, 4), fixed(r.block_ratio, 4),
           fixed(r.model_ratio, 4), opt(r.measured_block_ratio), opt(r.measured_model_ratio),
           sci(r.baseline_total), sci(r.dropbp_total),
           fixed(r.baseline_bytes > 0 ? r.dropbp_bytes / r.baseline_bytes : 0.0, 4)});
  }
  t.print(out);
  return kExitOk;
}

// ---- allocate ----------------------------------------------------------------

struct AllocateArgs {
  std::string table = "-";
  double p_avg = 0.5;
};

// One layer per line: "S F" separated by spaces, tabs or a comma. Blank lines
// and lines starting with '#' are skipped.
void read_sf_table(std::istream& in, std::vector<double>& s, std::vector<double>& f) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    std::string first;
    if (!(row >> first) || first.front() == '#') continue;
    double sv = 0.0, fv = 0.0;
    std::string extra;
    try {
      sv = std::stod(first);
    } catch (const std::exception&) {
      throw InputError("allocate: line " + std::to_string(lineno) + ": expected a number");
    }
    if (!(row >> fv) || (row >> extra)) {
      throw InputError("allocate: line " + std::to_string(lineno) + ": expected two columns S F");
    }
    if (!(sv >= 0.0) || !(fv > 0.0)) {
      throw InputError("allocate: line " + std::to_string(lineno) + ": need S >= 0 and F > 0");
    }
    s.push_back(sv);
    f.push_back(fv);
  }
  if (s.empty()) throw InputError("allocate: empty table");
}

int run_allocate(const AllocateArgs& a, std::istream& in, std::ostream& out) {
  std::vector<double> s;
  FlopsProfile flops;
  if (a.table == "-") {
    read_sf_table(in, s, flops.per_layer);
  } else {
    std::ifstream file(a.table);
    if (!file) throw InputError("allocate: cannot open " + a.table);
    read_sf_table(file, s, flops.per_layer);
  }
  const DropRates rates = allocate(s, flops, a.p_avg);
  const DropRates uniform = grid_uniform_allocation(s.size(), a.p_avg);

  Table t({"layer", "S", "F", "rate"});
  double kept = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    t.add({std::to_string(i), sci(s[i]), sci(flops.per_layer[i]), fixed(rates[i], 1)});
    kept += (1.0 - rates[i]) * flops.per_layer[i];
  }
  t.print(out);
  out << "# p_avg " << fixed(a.p_avg, 3) << ", budget " << sci(flops.target(a.p_avg))
      << ", kept " << sci(kept) << ", within_budget "
      << (within_budget(rates, flops, a.p_avg) ? "yes" : "no") << '\n';
  out << "# added_sensitivity " << sci(added_sensitivity(s, rates)) << ", grid_uniform "
      << sci(added_sensitivity(s, uniform)) << '\n';
  return kExitOk;
}

// ---- analyze-paths -----------------------------------------------------------

struct PathArgs {
  std::string net = "linear";
  std::size_t blocks = 8;
  std::size_t width = 16;
  std::size_t rows = 4;
  double scale = 0.5;
  ConfigSource source;
  std::string checkpoint;
  std::size_t batch = 4;
  std::vector<std::size_t> k_values;
  std::size_t reps = 100;
  std::uint64_t seed = 0;
  bool check_sum = false;
};

void print_paths(ResidualNetwork& net, const PathArgs& a, std::ostream& out) {
  std::vector<std::size_t> ks = a.k_values;
  if (ks.empty()) {
    for (std::size_t k = 0; k <= net.n_blocks(); ++k) ks.push_back(k);
  }
  Rng rng(a.seed, 4);
  const PathReport report = path_gradient_analysis(net, ks, a.reps, rng);
  out << "# blocks " << report.n_blocks << ", reps " << a.reps << '\n';
  Table t({"k", "mean_norm", "weight", "weighted_total"});
  for (const auto& row : report.rows) {
    t.add({std::to_string(row.k), sci(row.mean_norm), sci(row.weight), sci(row.weighted_total)});
  }
  t.print(out);
  if (a.check_sum) {
    const Tensor full = net.input_gradient(std::vector<Route>(net.n_blocks(), Route::both));
    const Tensor sum = sum_over_paths(net);
    double worst = 0.0;
    for (std::size_t i = 0; i < full.size(); ++i) {
      worst = std::max(worst, std::abs(full.data()[i] - sum.data()[i]));
    }
    out << "# sum over paths vs full gradient: max abs diff " << sci(worst) << '\n';
  }
}

int run_analyze_paths(const PathArgs& a, std::ostream& out, const Getenv& getenv) {
  if (a.net == "linear") {
    Rng rng(a.seed, 5);
    auto net = LinearResidualNet::scaled_orthogonal(a.blocks, a.width, a.rows, a.scale, rng);
    print_paths(net, a, out);
    return kExitOk;
  }
  const RunConfig cfg = a.source.resolve(getenv);
  cfg.model.validate();
  Rng init = model_rng(cfg.seed);
  Model model(cfg.model, init);
  if (!a.checkpoint.empty()) load_checkpoint(a.checkpoint, model);
  const Dataset data = make_dataset(cfg.dataset);
  if (data.vocab_size() > cfg.model.vocab_size) {
    throw ArgumentError("analyze-paths: dataset vocabulary exceeds the model's");
  }
  Rng pick = data_rng(cfg.seed);
  ModelPathProbe probe(model, data.sample_train(a.batch, pick));
  out << "# model loss " << fixed(probe.loss(), 6) << '\n';
  print_paths(probe, a, out);
  return kExitOk;
}

// ---- count-submodules --------------------------------------------------------

struct CountArgs {
  std::size_t layers = 0;
  double p = 0.0;
  std::string method = "both";
};

int run_count(const CountArgs& a, std::ostream& out) {
  std::vector<SubmoduleMethod> methods;
  if (a.method == "both") {
    methods = {SubmoduleMethod::freeze, SubmoduleMethod::dropbp};
  } else {
    methods = {parse_submodule_method(a.method)};
  }
  Table t({"method", "layers", "p", "trained_layers", "floored", "count"});
  for (auto m : methods) {
    const SubmoduleCount c = submodule_count(a.layers, a.p, m);
    t.add({to_string(m), std::to_string(a.layers), fixed(a.p, 4), std::to_string(c.trained_layers),
           c.floored ? "yes" : "no", c.count.str()});
  }
  t.print(out);
  return kExitOk;
}

// ---- compare-logs ------------------------------------------------------------

int run_compare(const std::string& a, const std::string& b, std::ostream& out) {
  const LogComparison c = compare_logs(a, b);
  if (c.equal) {
    out << "identical\n";
    return kExitOk;
  }
  out << "differ at line " << c.first_difference << ": " << c.detail << '\n';
  return kExitLogsDiffer;
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err,
        const Getenv& getenv) {
  CLI::App app{"DropBP training and analysis tool", "dropbp"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a metrics log");
  train_args.source.attach(*train_cmd);
  train_cmd->add_option("--method", train_args.method, "baseline|dropbp|freeze|layerdrop|pld");
  train_cmd->add_option("--p-avg", train_args.p_avg, "DropBP target average drop rate");
  train_cmd->add_option("--seed", train_args.seed, "Run seed");
  train_cmd->add_option("--log", train_args.log, "Metrics log path (JSON lines)");
  train_cmd->add_flag("--print-config", train_args.print_config,
                      "Print the effective configuration and exit");

  CostArgs cost_args;
  auto* cost_cmd = app.add_subcommand("cost-report", "Theoretical and metered FLOPs ratios");
  cost_args.source.attach(*cost_cmd);
  cost_cmd->add_option("--batch", cost_args.batch, "Batch size (default: config batch_size)");
  cost_cmd->add_option("--seq", cost_args.seq, "Sequence length (default: config dataset seq)");
  cost_cmd->add_option("--p", cost_args.p_values, "Uniform drop rates to report")
      ->capture_default_str();
  cost_cmd->add_option("--measure", cost_args.measure,
                       "Metered iterations per rate (0: closed form only)");
  cost_cmd->add_option("--seed", cost_args.seed, "Seed for the metered model and decisions");

  AllocateArgs alloc_args;
  auto* alloc_cmd = app.add_subcommand("allocate", "Allocate drop rates from an S/F table");
  alloc_cmd->add_option("--table", alloc_args.table, "Table file, one 'S F' per layer; - = stdin")
      ->capture_default_str();
  alloc_cmd->add_option("--p-avg", alloc_args.p_avg, "Target average drop rate")
      ->capture_default_str();

  PathArgs path_args;
  auto* path_cmd = app.add_subcommand("analyze-paths", "Gradient norm by path length");
  path_cmd->add_option("--net", path_args.net, "linear|model")
      ->check(CLI::IsMember({"linear", "model"}))
      ->capture_default_str();
  path_cmd->add_option("--blocks", path_args.blocks, "Linear net: residual blocks")
      ->capture_default_str();
  path_cmd->add_option("--width", path_args.width, "Linear net: width")->capture_default_str();
  path_cmd->add_option("--rows", path_args.rows, "Linear net: input rows")->capture_default_str();
  path_cmd->add_option("--scale", path_args.scale, "Linear net: branch scale")
      ->capture_default_str();
  path_args.source.attach(*path_cmd);
  path_cmd->add_option("--checkpoint", path_args.checkpoint, "Model: parameters to load");
  path_cmd->add_option("--batch", path_args.batch, "Model: probe batch size")
      ->capture_default_str();
  path_cmd->add_option("--k", path_args.k_values, "Path lengths (default: all)");
  path_cmd->add_option("--reps", path_args.reps, "Random subsets per k")->capture_default_str();
  path_cmd->add_option("--seed", path_args.seed, "Sampling seed")->capture_default_str();
  path_cmd->add_flag("--check-sum", path_args.check_sum,
                     "Also compare the sum over all paths with the full gradient");

  CountArgs count_args;
  auto* count_cmd = app.add_subcommand("count-submodules", "Exact count of trained submodules");
  count_cmd->add_option("--layers", count_args.layers, "Number of residual layers")->required();
  count_cmd->add_option("--p", count_args.p, "Drop rate or frozen fraction")->required();
  count_cmd->add_option("--method", count_args.method, "freeze|dropbp|both")
      ->capture_default_str();

  std::string log_a, log_b;
  auto* cmp_cmd = app.add_subcommand("compare-logs", "Compare two logs ignoring timestamps");
  cmp_cmd->add_option("a", log_a, "First log")->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("b", log_b, "Second log")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(train_args, out, getenv);
    if (*cost_cmd) return run_cost_report(cost_args, out, getenv);
    if (*alloc_cmd) return run_allocate(alloc_args, in, out);
    if (*path_cmd) return run_analyze_paths(path_args, out, getenv);
    if (*count_cmd) return run_count(count_args, out);
    if (*cmp_cmd) return run_compare(log_a, log_b, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {  // InputError, ArgumentError, DimensionError
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace dropbp::cli

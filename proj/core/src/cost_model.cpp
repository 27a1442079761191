#include "dropbp/cost_model.hpp"

#include "dropbp/error.hpp"

namespace dropbp {

namespace {

constexpr std::uint64_t kF64 = sizeof(double);

struct LinearShape {
  std::uint64_t in, out;
};

// Adds the cost of x[N x in] * W[in x out] (+ adapter) to `c`.
void add_linear(LayerCost& c, const ModelConfig& cfg, std::uint64_t rows, LinearShape s) {
  const std::uint64_t mm = 2 * rows * s.in * s.out;
  c.base_out += mm;
  c.base_grad += mm;
  if (cfg.mode == TrainingMode::full) c.base_param += mm;
  if (cfg.mode == TrainingMode::peft) {
    const std::uint64_t r = cfg.adapter_rank;
    const std::uint64_t down = 2 * rows * s.in * r, up = 2 * rows * r * s.out;
    c.adapter_out += down + up;
    c.adapter_grad += up + down;   // d(mid) and d(x) through the adapter
    c.adapter_param += up + down;  // dB and dA
    c.elementwise_out += 2 * rows * s.out;           // scale + add
    c.elementwise_grad += rows * s.out + rows * s.in;  // scale dy, accumulate dx
    c.activation_bytes += rows * r * kF64;            // cached x A
  }
}

}  // namespace

std::vector<LayerCost> layer_costs(const ModelConfig& cfg, CostShape shape) {
  cfg.validate();
  const std::uint64_t B = shape.batch, T = shape.seq, N = B * T;
  const std::uint64_t d = cfg.d_model, dff = cfg.d_ff, H = cfg.n_heads, dh = cfg.head_dim();
  std::vector<LayerCost> costs;
  for (std::size_t u = 0; u < cfg.n_units; ++u) {
    LayerCost a;
    a.index = {u, Branch::attn};
    for (int i = 0; i < 4; ++i) add_linear(a, cfg, N, {d, d});
    a.attention_out = B * H * 4 * T * T * dh;
    a.attention_grad = B * H * 8 * T * T * dh;
    a.elementwise_out += N * d        // layer norm
                         + B * H * T * T  // softmax
                         + N * d;     // residual add
    a.elementwise_grad += B * H * T * T  // softmax backward
                          + 2 * N * d    // q/k/v input-gradient accumulation
                          + N * d        // layer norm input gradient
                          + N * d;       // residual accumulation
    a.elementwise_param += N * d;        // layer norm gamma/beta
    a.activation_bytes += (N * d       // xhat
                           + N         // rstd
                           + N * d     // LN output
                           + 3 * N * d // q, k, v
                           + B * H * T * T
                           + N * d)    // context
                          * kF64;
    costs.push_back(a);

    LayerCost f;
    f.index = {u, Branch::ffn};
    add_linear(f, cfg, N, {d, dff});
    add_linear(f, cfg, N, {dff, d});
    f.elementwise_out += N * d + N * dff + N * d;   // LN, GELU, residual add
    f.elementwise_grad += N * dff + N * d + N * d;  // GELU, LN, residual accumulation
    f.elementwise_param += N * d;
    f.activation_bytes += (N * d + N + N * d + N * dff + N * dff) * kF64;
    costs.push_back(f);
  }
  return costs;
}

OffBlockCost off_block_cost(const ModelConfig& cfg, CostShape shape, bool embedding_grads) {
  const std::uint64_t N = static_cast<std::uint64_t>(shape.batch) * shape.seq;
  const std::uint64_t d = cfg.d_model, V = cfg.vocab_size;
  const bool full = cfg.mode == TrainingMode::full;
  OffBlockCost c;
  c.F_out = 3 * N * d       // token lookup, position lookup, add
            + N * d         // final layer norm
            + 2 * N * d * V // head
            + N * V;        // cross-entropy
  c.F_grad = N * V          // cross-entropy backward
             + 2 * N * d * V  // head input gradient
             + N * d;       // final layer norm input gradient
  c.F_param = N * d;        // final layer norm gamma/beta
  if (full) c.F_param += 2 * N * d * V;
  if (embedding_grads) c.F_param += 2 * N * d;
  c.activation_bytes = (N * d + N + N * d) * kF64;
  return c;
}

OffBlockCost off_block_cost(const ModelConfig& cfg, CostShape shape) {
  return off_block_cost(cfg, shape, cfg.mode == TrainingMode::full);
}

FlopsProfile flops_profile(const std::vector<LayerCost>& costs) {
  FlopsProfile p;
  for (const auto& c : costs) p.per_layer.push_back(static_cast<double>(c.F_backward()));
  return p;
}

static void require_same_length(const std::vector<LayerCost>& costs, const DropRates& rates) {
  if (costs.size() != rates.size()) {
    throw ArgumentError("cost table has " + std::to_string(costs.size()) + " layers, rates have " +
                        std::to_string(rates.size()));
  }
}

double expected_block_flops(const std::vector<LayerCost>& costs, const DropRates& rates) {
  require_same_length(costs, rates);
  double total = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    total += static_cast<double>(costs[i].F_out()) +
             (1.0 - rates[i]) * static_cast<double>(costs[i].F_backward());
  }
  return total;
}

double expected_flops(const std::vector<LayerCost>& costs, const OffBlockCost& off,
                      const DropRates& rates) {
  return expected_block_flops(costs, rates) + static_cast<double>(off.F_out + off.F_backward());
}

double baseline_flops(const std::vector<LayerCost>& costs, const OffBlockCost& off) {
  return expected_flops(costs, off, DropRates::constant(costs.size(), 0.0));
}

double reduction_ratio(double p_avg, TrainingMode mode) {
  // 2p is exact, so a single division rounds (2/3)p correctly.
  return mode == TrainingMode::full ? 2.0 * p_avg / 3.0 : 0.5 * p_avg;
}

double block_reduction_ratio(const std::vector<LayerCost>& costs, const DropRates& rates) {
  require_same_length(costs, rates);
  double saved = 0.0, total = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    saved += rates[i] * static_cast<double>(costs[i].F_backward());
    total += static_cast<double>(costs[i].F_out() + costs[i].F_backward());
  }
  return total > 0.0 ? saved / total : 0.0;
}

double model_reduction_ratio(const std::vector<LayerCost>& costs, const OffBlockCost& off,
                             const DropRates& rates) {
  const double base = baseline_flops(costs, off);
  return base > 0.0 ? 1.0 - expected_flops(costs, off, rates) / base : 0.0;
}

ActivationBudget activation_budget(const ModelConfig& cfg, CostShape shape,
                                   const DropRates& rates) {
  const auto costs = layer_costs(cfg, shape);
  require_same_length(costs, rates);
  ActivationBudget b;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    b.block_bytes += (1.0 - rates[i]) * static_cast<double>(costs[i].activation_bytes);
  }
  b.non_block_bytes = off_block_cost(cfg, shape).activation_bytes;
  return b;
}

std::optional<std::size_t> max_seq_len(const ModelConfig& cfg, std::size_t batch,
                                       const DropRates& rates, double budget_bytes) {
  auto fits = [&](std::size_t len) {
    return activation_budget(cfg, {batch, len}, rates).total() <= budget_bytes;
  };
  if (!fits(1)) return std::nullopt;
  std::size_t lo = 1, hi = 2;
  constexpr std::size_t kCap = std::size_t{1} << 30;
  while (hi < kCap && fits(hi)) {
    lo = hi;
    hi *= 2;
  }
  if (hi >= kCap && fits(kCap)) return kCap;
  while (hi - lo > 1) {  // fits(lo) && !fits(hi)
    const std::size_t mid = lo + (hi - lo) / 2;
    (fits(mid) ? lo : hi) = mid;
  }
  return lo;
}

CostReport cost_report(const ModelConfig& cfg, CostShape shape, const DropRates& rates) {
  const auto costs = layer_costs(cfg, shape);
  const auto off = off_block_cost(cfg, shape);
  CostReport r;
  r.p_avg = rates.target_avg();
  r.mode = cfg.mode;
  r.baseline_total = baseline_flops(costs, off);
  r.dropbp_total = expected_flops(costs, off, rates);
  r.theoretical_ratio = reduction_ratio(rates.mean(), cfg.mode);
  r.block_ratio = block_reduction_ratio(costs, rates);
  r.model_ratio = model_reduction_ratio(costs, off, rates);
  r.baseline_bytes = activation_budget(cfg, shape, DropRates::constant(costs.size(), 0.0)).total();
  r.dropbp_bytes = activation_budget(cfg, shape, rates).total();
  return r;
}

MeasuredReduction measure_reduction(const Model& model, const Batch& batch,
                                    const DropRates& rates, std::uint64_t iters, const Rng& rng) {
  const std::size_t n = model.config().n_layers();
  if (rates.size() != n) throw ArgumentError("measure_reduction: rates do not match the model");
  if (iters == 0) throw ArgumentError("measure_reduction: iters must be positive");
  auto step = [&](const ExecutionPlan& plan) {
    FlopsMeter meter;
    ActivationCache cache;
    const Tensor logits = forward(model, batch, plan, cache, meter);
    const auto out = loss_and_grad(logits, batch.targets, meter);
    (void)backward(model, cache, plan, out.grad, meter);
    return meter.snapshot();
  };
  MeasuredReduction m;
  m.iters = iters;
  m.baseline = step(ExecutionPlan::keep_all(n));
  // Skipping every branch in forward and backward leaves the off-block work.
  ExecutionPlan skip_all = ExecutionPlan::from_drops(std::vector<bool>(n, true));
  skip_all.drop_in_forward = true;
  m.off_block = step(skip_all);
  std::size_t dropped = 0;
  for (std::uint64_t t = 0; t < iters; ++t) {
    const auto d = sample_decisions(rates, t, rng);
    dropped += d.count_dropped();
    m.dropped_total = m.dropped_total + step(ExecutionPlan::from_drops(d.dropped));
  }
  m.mean_dropped = static_cast<double>(dropped) / static_cast<double>(iters * n);
  const double reps = static_cast<double>(iters);
  const double base = static_cast<double>(m.baseline.total()) * reps;
  const double block = base - static_cast<double>(m.off_block.total()) * reps;
  const double saved = base - static_cast<double>(m.dropped_total.total());
  m.block_ratio = block > 0.0 ? saved / block : 0.0;
  m.model_ratio = base > 0.0 ? saved / base : 0.0;
  return m;
}

void attach_measurement(CostReport& report, const MeasuredReduction& m) {
  report.measured_block_ratio = m.block_ratio;
  report.measured_model_ratio = m.model_ratio;
}

}  // namespace dropbp

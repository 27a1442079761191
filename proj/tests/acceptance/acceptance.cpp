// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails. Pass criterion numbers as arguments to run a
// subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dropbp/baselines.hpp"
#include "dropbp/cost_model.hpp"
#include "dropbp/paths.hpp"
#include "dropbp/sensitivity.hpp"
#include "dropbp/submodules.hpp"
#include "dropbp/trainer.hpp"
#include "helpers.hpp"
#include "reference.hpp"

using namespace dropbp;
using dropbp::testing::random_batch;
using dropbp::testing::randomize;
using dropbp::testing::tiny_config;

namespace {

using Clock = std::chrono::steady_clock;
using Q = BigRational;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

struct Step {
  Tensor logits;
  Gradients grads;
  ActivationCache cache;
  FlopsCount flops;
};

Step run_step(const Model& m, const Batch& b, const ExecutionPlan& plan) {
  Step s;
  FlopsMeter meter;
  s.logits = forward(m, b, plan, s.cache, meter);
  const auto out = loss_and_grad(s.logits, b.targets, meter);
  s.grads = backward(m, s.cache, plan, out.grad, meter);
  s.flops = meter.snapshot();
  return s;
}

RunConfig copy_run(Method method, std::size_t units, std::size_t d_model, std::uint64_t iters) {
  RunConfig c;
  c.model.n_units = units;
  c.model.d_model = d_model;
  c.model.d_ff = 4 * d_model;
  c.model.n_heads = 4;
  c.model.vocab_size = 9;
  c.model.seq_len = 16;
  c.dataset.kind = DatasetKind::copy_task;
  c.dataset.seq_len = 16;
  c.dataset.copy_symbols = 8;
  c.method = method;
  c.iters = iters;
  c.batch_size = 16;
  c.lr = 3e-3;
  c.lr_min = 0.0;
  c.val_every = 50;
  c.val_examples = 256;
  return c;
}

RunMetrics train_in_memory(const RunConfig& cfg, const Dataset& data, std::vector<Tensor>* params) {
  Rng init = model_rng(cfg.seed);
  Model model(cfg.model, init);
  prepare_model(cfg, model);
  MetricsLog log;
  RunMetrics m = train(cfg, model, data, log);
  if (params) {
    for (const auto& p : model.parameters()) params->push_back(p.value);
  }
  return m;
}

// 1. Analytic gradients against central differences, every trainable tensor,
// full and adapter modes. Error is ||fd - g|| / ||g|| per tensor.
Outcome gradient_correctness() {
  const auto start = Clock::now();
  constexpr double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  std::size_t tensors = 0, elements = 0;
  for (TrainingMode mode : {TrainingMode::full, TrainingMode::peft}) {
    Rng rng(101);
    Model m(tiny_config(mode), rng);
    randomize(m, 0.3, 102);
    const Batch b = random_batch(2, 5, 11, 103);
    const Step s = run_step(m, b, ExecutionPlan::keep_all(m.config().n_layers()));
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
      if (!m.parameters()[i].trainable) continue;
      const Tensor& g = *s.grads.by_param[i];
      double diff2 = 0.0, norm2 = 0.0;
      double* w = m.parameters()[i].value.ptr();
      for (std::size_t e = 0; e < g.size(); ++e) {
        const double orig = w[e];
        w[e] = orig + h;
        const double up = dropbp::testing::eval_loss(m, b);
        w[e] = orig - h;
        const double down = dropbp::testing::eval_loss(m, b);
        w[e] = orig;
        const double fd = (up - down) / (2.0 * h);
        diff2 += (fd - g.data()[e]) * (fd - g.data()[e]);
        norm2 += g.data()[e] * g.data()[e];
      }
      const double err = norm2 > 0.0 ? std::sqrt(diff2 / norm2) : std::sqrt(diff2);
      if (err > worst) {
        worst = err;
        worst_name = std::string(to_string(mode)) + ":" + m.parameters()[i].name;
      }
      ++tensors;
      elements += g.size();
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-6 && secs < 30.0,
          std::to_string(tensors) + " tensors, " + std::to_string(elements) +
              " elements, worst relative error " + num(worst, 3) + " (" + worst_name + "), " +
              num(secs, 3) + " s"};
}

// 2. Forward invariance, zero gradients and caches of dropped layers, and
// p_avg = 0 bit-identical to baseline.
Outcome dropbp_semantics() {
  Rng rng(201);
  ModelConfig cfg = tiny_config();
  cfg.n_units = 3;
  Model m(cfg, rng);
  randomize(m, 0.3, 202);
  const std::size_t n = cfg.n_layers();
  const Batch b = random_batch(3, 5, 11, 203);
  const Step base = run_step(m, b, ExecutionPlan::keep_all(n));

  bool invariant = true, zero_grads = true, zero_cache = true;
  std::size_t dropped_seen = 0;
  Rng draws(204, 3);
  for (std::uint64_t t = 0; t < 100; ++t) {
    std::vector<double> p(n);
    for (double& v : p) v = draws.uniform();
    const auto d = sample_decisions(DropRates(p, 0.5), t, draws);
    const Step s = run_step(m, b, ExecutionPlan::from_drops(d.dropped));
    invariant = invariant && s.logits == base.logits;
    for (std::size_t l = 0; l < n; ++l) {
      if (!d.dropped[l]) continue;
      ++dropped_seen;
      zero_cache = zero_cache && !s.cache.present(l) && s.cache.layer_bytes(l) == 0;
      for (std::size_t id : m.layer_parameters(l)) {
        for (double v : s.grads.by_param[id]->data()) zero_grads = zero_grads && v == 0.0;
      }
    }
  }

  RunConfig c = copy_run(Method::baseline, 2, 16, 100);
  c.dataset.copy_examples = 2000;
  c.batch_size = 8;
  c.val_every = 25;
  RunConfig zero = c;
  zero.method = Method::dropbp;
  zero.p_avg = 0.0;
  const Dataset data = make_dataset(c.dataset);
  std::vector<Tensor> pa, pb;
  const RunMetrics ra = train_in_memory(c, data, &pa);
  const RunMetrics rb = train_in_memory(zero, data, &pb);
  bool identical = pa == pb && ra.iters.size() == rb.iters.size() && ra.vals.size() == rb.vals.size();
  for (std::size_t i = 0; identical && i < ra.iters.size(); ++i) {
    identical = ra.iters[i].loss == rb.iters[i].loss && ra.iters[i].flops == rb.iters[i].flops;
  }
  for (std::size_t i = 0; identical && i < ra.vals.size(); ++i) {
    identical = ra.vals[i].loss == rb.vals[i].loss;
  }
  return {invariant && zero_grads && zero_cache && dropped_seen > 0 && identical,
          std::string("(a) logits bit-exact over 100 masks: ") + (invariant ? "yes" : "no") +
              "; (b) " + std::to_string(dropped_seen) + " dropped layers, zero grads: " +
              (zero_grads ? "yes" : "no") + ", zero cache: " + (zero_cache ? "yes" : "no") +
              "; (c) p_avg=0 vs baseline over 100 iterations bit-identical: " +
              (identical ? "yes" : "no")};
}

// True when v is the double nearest to the exact value.
bool correctly_rounded(double v, const Q& exact) {
  const Q err = abs(Q(v) - exact);
  return err <= abs(Q(std::nextafter(v, 2.0)) - Q(v)) / 2 &&
         err <= abs(Q(v) - Q(std::nextafter(v, -2.0))) / 2;
}

// 3. Closed-form ratios and metered 1000-iteration runs.
Outcome flops_ratios() {
  const auto start = Clock::now();
  bool closed = true;
  const std::vector<double> ps{0.5, 0.75, 0.875};
  const std::vector<long> full_pct{33, 50, 58}, peft_pct{25, 38, 44};
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double full = reduction_ratio(ps[i], TrainingMode::full);
    const double peft = reduction_ratio(ps[i], TrainingMode::peft);
    closed = closed && correctly_rounded(full, Q(2, 3) * Q(ps[i])) &&
             correctly_rounded(peft, Q(1, 2) * Q(ps[i]));
    closed = closed && std::lround(100.0 * full) == full_pct[i] &&
             std::lround(100.0 * peft) == peft_pct[i];
  }

  ModelConfig full;
  full.n_units = 4;
  full.d_model = 32;
  full.d_ff = 128;
  full.n_heads = 4;
  full.vocab_size = 16;
  full.seq_len = 16;
  ModelConfig peft = full;
  peft.d_model = 96;
  peft.d_ff = 384;
  peft.seq_len = 8;
  peft.mode = TrainingMode::peft;
  peft.adapter_rank = 1;

  double worst = 0.0;
  std::string rows;
  for (const auto& [cfg, batch] : {std::pair{full, std::size_t{2}}, std::pair{peft, std::size_t{1}}}) {
    Rng init(301);
    const Model m(cfg, init);
    Rng data(302);
    Batch b = random_batch(batch, cfg.seq_len, cfg.vocab_size, 303);
    for (double p : ps) {
      const auto r = measure_reduction(m, b, DropRates::constant(cfg.n_layers(), p), 1000,
                                       Rng(304, 3));
      const double theory = reduction_ratio(p, cfg.mode);
      worst = std::max(worst, std::abs(r.block_ratio - theory));
      rows += std::string(rows.empty() ? "" : ", ") + to_string(cfg.mode) + " p=" + num(p) +
              " measured " + num(r.block_ratio) + " vs " + num(theory);
    }
  }
  return {closed && worst <= 0.02,
          std::string("closed forms exact: ") + (closed ? "yes" : "no") + "; " + rows +
              "; worst gap " + num(100.0 * worst, 3) + " points (limit 2), " +
              num(seconds_since(start), 3) + " s"};
}

// Exact budget test with rationals: sum (1 - k_i/10) F_i <= (1 - p_avg) sum F_i.
bool exact_budget(const DropRates& r, const std::vector<double>& f, double p_avg) {
  Q kept = 0, total = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const long k = std::lround(r[i] * 10.0);
    if (r[i] != static_cast<double>(k) / 10.0 || k < 0 || k > 10) return false;
    kept += (1 - Q(k, 10)) * Q(f[i]);
    total += Q(f[i]);
  }
  return kept <= (1 - Q(p_avg)) * total;
}

Q exact_added(const std::vector<double>& s, const DropRates& r) {
  Q sum = 0;
  for (std::size_t i = 0; i < s.size(); ++i) sum += Q(std::lround(r[i] * 10.0), 10) * Q(s[i]);
  return sum;
}

// Smallest k/10 >= p_avg, computed exactly.
long uniform_steps(double p_avg) {
  long k = 0;
  while (k < 10 && Q(k, 10) < Q(p_avg)) ++k;
  return k;
}

struct Instance {
  std::vector<double> s;
  FlopsProfile f;
  double p_avg = 0.0;
};

Instance random_instance(Rng& rng, std::size_t max_layers, bool equal_flops) {
  Instance in;
  const std::size_t n = 1 + rng.uniform_index(max_layers);
  in.s.resize(n);
  for (double& v : in.s) {
    const double u = rng.uniform();
    v = u < 0.1 ? 0.0 : (u < 0.2 && &v != &in.s.front() ? *(&v - 1) : rng.uniform(0.0, 5.0));
  }
  const bool same = equal_flops || rng.uniform() < 0.3;
  const double f0 = rng.uniform(0.1, 10.0);
  in.f.per_layer.resize(n);
  for (double& v : in.f.per_layer) v = same ? f0 : rng.uniform(0.1, 10.0);
  const double u = rng.uniform();
  in.p_avg = u < 0.4 ? static_cast<double>(rng.uniform_index(11)) / 10.0 : rng.uniform();
  return in;
}

// 4. Allocator budget, optimality on small equal-FLOPs instances, and
// dominance over the grid-uniform allocation.
Outcome allocator() {
  Rng rng(401);
  std::size_t budget_ok = 0, optimal = 0, dominant = 0;
  for (int t = 0; t < 1000; ++t) {
    const Instance in = random_instance(rng, 16, false);
    if (exact_budget(allocate(in.s, in.f, in.p_avg), in.f.per_layer, in.p_avg)) ++budget_ok;
  }
  for (int t = 0; t < 1000; ++t) {
    const Instance in = random_instance(rng, 4, true);
    const std::size_t n = in.s.size();
    // Equal F: the budget is sum k_i >= ceil(10 n p_avg), found exactly.
    long need = 0;
    while (Q(need) < Q(10 * static_cast<long>(n)) * Q(in.p_avg)) ++need;
    std::vector<long> k(n, 0), best_k;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<long>> near;
    std::function<void(std::size_t, long)> walk = [&](std::size_t i, long sum) {
      if (i == n) {
        if (sum < need) return;
        double v = 0.0;
        for (std::size_t j = 0; j < n; ++j) v += static_cast<double>(k[j]) * in.s[j];
        if (v < best - 1e-9) near.clear();
        if (v <= best + 1e-9) near.push_back(k);
        best = std::min(best, v);
        return;
      }
      for (long x = 0; x <= 10; ++x) {
        k[i] = x;
        walk(i + 1, sum + x);
      }
    };
    walk(0, 0);
    Q optimum = -1;
    for (const auto& cand : near) {
      Q v = 0;
      for (std::size_t j = 0; j < n; ++j) v += Q(cand[j], 10) * Q(in.s[j]);
      if (optimum < 0 || v < optimum) optimum = v;
    }
    const DropRates got = allocate(in.s, in.f, in.p_avg);
    if (exact_budget(got, in.f.per_layer, in.p_avg) && exact_added(in.s, got) == optimum) {
      ++optimal;
    }
  }
  for (int t = 0; t < 1000; ++t) {
    const Instance in = random_instance(rng, 16, false);
    const DropRates got = allocate(in.s, in.f, in.p_avg);
    const DropRates uni(std::vector<double>(in.s.size(),
                                            static_cast<double>(uniform_steps(in.p_avg)) / 10.0),
                        in.p_avg);
    if (exact_added(in.s, got) <= exact_added(in.s, uni)) ++dominant;
  }
  return {budget_ok == 1000 && optimal == 1000 && dominant == 1000,
          "(a) budget exact " + std::to_string(budget_ok) + "/1000; (b) exhaustive optimum " +
              std::to_string(optimal) + "/1000; (c) not worse than grid-uniform " +
              std::to_string(dominant) + "/1000"};
}

// 5. Sensitivities against the independent tape implementation, and the
// single-layer identity.
Outcome sensitivity() {
  double worst = 0.0;
  for (TrainingMode mode : {TrainingMode::full, TrainingMode::peft}) {
    for (std::uint64_t seed : {501, 502, 503}) {
      Rng rng(seed);
      Model m(tiny_config(mode), rng);
      randomize(m, 0.3, seed + 10);
      const Batch b = random_batch(2, 5, 11, seed + 20);
      FlopsMeter meter;
      const auto got = compute_sensitivities(m, b, meter);
      const auto ref = dropbp::testing::reference_sensitivities(m, b);
      for (std::size_t l = 0; l < ref.size(); ++l) {
        worst = std::max(worst, std::abs(got.values[l] - ref[l]) / std::abs(ref[l]));
      }
    }
  }

  bool exact = true;
  for (std::size_t layer = 0; layer < 4; ++layer) {
    Rng rng(510 + layer);
    Model m(tiny_config(), rng);
    randomize(m, 0.3, 520 + layer);
    for (auto& p : m.parameters()) p.trainable = p.layer && *p.layer == layer;
    const Batch b = random_batch(2, 5, 11, 530 + layer);
    FlopsMeter meter;
    const auto s = compute_sensitivities(m, b, meter);
    const Step full = run_step(m, b, ExecutionPlan::keep_all(4));
    double expect = 0.0;
    for (const auto& g : full.grads.by_param) {
      if (g) expect += g->l2_norm() * g->l2_norm();
    }
    exact = exact && s.values[layer] == expect;
  }
  return {worst <= 1e-9 && exact, "worst relative deviation from reference " + num(worst, 3) +
                                      " (limit 1e-9); single-layer S == sum ||g||^2 exactly: " +
                                      (exact ? "yes" : "no")};
}

// 6. Submodule counts against Pascal's triangle.
Outcome submodule_counts() {
  std::vector<std::vector<BigInt>> pascal(129);
  for (std::size_t n = 0; n < pascal.size(); ++n) {
    pascal[n].assign(n + 1, 1);
    for (std::size_t k = 1; k < n; ++k) pascal[n][k] = pascal[n - 1][k - 1] + pascal[n - 1][k];
  }
  BigInt direct = 0;
  for (std::size_t i = 0; i <= 8; ++i) direct += pascal[64][i];
  const auto drop = submodule_count(64, 0.875, SubmoduleMethod::dropbp);
  const auto frz = submodule_count(64, 0.875, SubmoduleMethod::freeze);
  bool ok = drop.count == direct && frz.count == 256 && drop.trained_layers == 8;
  for (std::size_t units = 1; units <= 64; ++units) {
    const BigInt all = BigInt(1) << (2 * units);
    ok = ok && submodule_count(2 * units, 0.0, SubmoduleMethod::dropbp).count == all &&
         submodule_count(2 * units, 0.0, SubmoduleMethod::freeze).count == all;
  }
  return {ok, "(64, 0.875): dropbp " + drop.count.str() + " vs direct " + direct.str() +
                  ", freeze " + frz.count.str() + "; p=0 equals 2^(2n) for n = 1..64"};
}

// 7. Path decomposition on a 3-block linear net, checked against
// hand-rolled products, and exact binomial weights.
Outcome path_decomposition() {
  constexpr std::size_t n = 3, width = 5, rows = 4;
  Rng rng(701);
  std::vector<Tensor> w;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(width * width);
    for (double& x : v) x = rng.normal(0.0, 0.6);
    w.emplace_back(Shape{width, width}, v);
  }
  std::vector<double> xv(rows * width), rv(rows * width);
  for (double& x : xv) x = rng.normal();
  for (double& x : rv) x = rng.normal();
  const Tensor input(Shape{rows, width}, xv), readout(Shape{rows, width}, rv);
  LinearResidualNet net(w, input, readout);

  // g <- g * M^T for each block from the top, with M = W_i (branch), I
  // (identity) or I + W_i (both).
  auto backprop = [&](const std::vector<int>& which) {
    std::vector<double> g = rv;
    for (std::size_t i = n; i-- > 0;) {
      std::vector<double> next(rows * width, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t a = 0; a < width; ++a) {
          double acc = which[i] != 1 ? g[r * width + a] : 0.0;
          if (which[i] != 0) {
            for (std::size_t b = 0; b < width; ++b) acc += g[r * width + b] * w[i].at(a, b);
          }
          next[r * width + a] = acc;
        }
      }
      g = next;
    }
    return g;
  };
  const auto full_hand = backprop(std::vector<int>(n, 2));
  std::vector<double> sum_hand(rows * width, 0.0);
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    std::vector<int> which(n);
    for (std::size_t i = 0; i < n; ++i) which[i] = (mask >> i) & 1u ? 1 : 0;
    const auto g = backprop(which);
    for (std::size_t e = 0; e < g.size(); ++e) sum_hand[e] += g[e];
  }
  const Tensor full = net.input_gradient(std::vector<Route>(n, Route::both));
  const Tensor sum = sum_over_paths(net);
  double worst = 0.0;
  for (std::size_t e = 0; e < full.size(); ++e) {
    worst = std::max({worst, std::abs(sum.data()[e] - full.data()[e]),
                      std::abs(full.data()[e] - full_hand[e]),
                      std::abs(sum_hand[e] - full_hand[e])});
  }

  bool weights_exact = true;
  for (unsigned m = 0; m <= 64; ++m) {
    Q total = 0;
    for (const auto& q : binomial_weights(m)) total += q;
    weights_exact = weights_exact && total == 1;
  }
  return {worst <= 1e-10 && weights_exact,
          "max |sum over 8 paths - full gradient| " + num(worst, 3) +
              " (limit 1e-10, includes hand-rolled oracle); binomial weights sum to 1 exactly "
              "for n = 0..64: " + (weights_exact ? "yes" : "no")};
}

// 8. Expected cached bytes over every decision mask, and max sequence length
// monotone in p.
Outcome memory_model() {
  ModelConfig cfg = tiny_config();
  cfg.n_units = 4;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.seq_len = 8;
  Rng rng(801);
  const Model m(cfg, rng);
  const std::size_t n = cfg.n_layers();
  const Batch b = random_batch(2, 8, 11, 802);

  std::vector<std::size_t> mask_bytes(std::size_t{1} << n);
  for (std::size_t mask = 0; mask < mask_bytes.size(); ++mask) {
    std::vector<bool> d(n);
    for (std::size_t l = 0; l < n; ++l) d[l] = (mask >> l) & 1u;
    FlopsMeter meter;
    ActivationCache cache;
    (void)forward(m, b, ExecutionPlan::from_drops(d), cache, meter);
    mask_bytes[mask] = cache.block_bytes();
  }
  const double baseline = static_cast<double>(mask_bytes[0]);
  double worst = 0.0;
  for (double p : {0.1, 0.25, 0.5, 0.75, 0.875}) {
    double expected = 0.0;
    for (std::size_t mask = 0; mask < mask_bytes.size(); ++mask) {
      const auto dropped = static_cast<int>(__builtin_popcountll(mask));
      expected += std::pow(p, dropped) * std::pow(1.0 - p, static_cast<int>(n) - dropped) *
                  static_cast<double>(mask_bytes[mask]);
    }
    const double model = activation_budget(cfg, {2, 8}, DropRates::constant(n, p)).block_bytes;
    worst = std::max({worst, std::abs(expected - (1.0 - p) * baseline) / baseline,
                      std::abs(model - (1.0 - p) * baseline) / baseline});
  }

  ModelConfig big;
  big.n_units = 8;
  big.d_model = 64;
  big.d_ff = 256;
  big.seq_len = 4096;
  const double budget = 256.0 * 1024 * 1024;
  std::vector<std::size_t> lens;
  bool increasing = true;
  for (int k = 0; k <= 9; ++k) {
    const auto len = max_seq_len(big, 4, DropRates::constant(big.n_layers(), k / 10.0), budget);
    increasing = increasing && len && (lens.empty() || *len > lens.back());
    if (len) lens.push_back(*len);
  }
  std::string seqs;
  for (auto l : lens) seqs += (seqs.empty() ? "" : ",") + std::to_string(l);
  return {worst <= 1e-12 && increasing,
          "expected block bytes vs (1-p) baseline over all " + std::to_string(mask_bytes.size()) +
              " masks: worst relative gap " + num(worst, 3) +
              "; max seq len at p = 0..0.9 under 256 MiB: " + seqs};
}

// 9. Copy-task convergence: seed-averaged validation curves.
Outcome convergence() {
  const auto start = Clock::now();
  constexpr std::uint64_t iters = 1000;
  constexpr int seeds = 3;
  std::vector<RunMetrics> base, drop;
  for (int s = 0; s < seeds; ++s) {
    RunConfig c = copy_run(Method::baseline, 2, 32, iters);
    c.lr = 1e-3;
    c.seed = static_cast<std::uint64_t>(s);
    c.dataset.seed = c.seed;
    const Dataset data = make_dataset(c.dataset);
    base.push_back(train_in_memory(c, data, nullptr));
    c.method = Method::dropbp;
    c.p_avg = 0.5;
    drop.push_back(train_in_memory(c, data, nullptr));
  }
  const std::size_t points = base.front().vals.size();
  auto mean_loss = [&](const std::vector<RunMetrics>& runs, std::size_t i) {
    double sum = 0.0;
    for (const auto& r : runs) sum += r.vals.at(i).loss;
    return sum / static_cast<double>(runs.size());
  };
  auto mean_flops = [&](const std::vector<RunMetrics>& runs, std::size_t i) {
    double sum = 0.0;
    for (const auto& r : runs) sum += static_cast<double>(r.vals.at(i).cumulative_flops.total());
    return sum / static_cast<double>(runs.size());
  };
  bool complete = true;
  for (const auto& r : base) complete = complete && !r.aborted && r.vals.size() == points;
  for (const auto& r : drop) complete = complete && !r.aborted && r.vals.size() == points;
  if (!complete) return {false, "a run aborted or logged a different number of val points"};

  const double base_final = mean_loss(base, points - 1);
  const double drop_final = mean_loss(drop, points - 1);
  const double base_total = mean_flops(base, points - 1);

  std::ofstream csv("convergence_curves.csv");
  csv << "iter,baseline_loss,dropbp_loss,baseline_flops,dropbp_flops\n";
  std::optional<std::size_t> reached;
  for (std::size_t i = 0; i < points; ++i) {
    const double d = mean_loss(drop, i);
    if (!reached && d <= base_final) reached = i;
    csv << base.front().vals[i].iter << ',' << mean_loss(base, i) << ',' << d << ','
        << mean_flops(base, i) << ',' << mean_flops(drop, i) << '\n';
  }
  const double loss_ratio = drop_final / base_final;
  const double flops_fraction =
      reached ? mean_flops(drop, *reached) / base_total : std::numeric_limits<double>::infinity();
  const bool pass = loss_ratio <= 1.25 && flops_fraction <= 0.70;
  std::string detail = "final val loss dropbp/baseline " + num(loss_ratio) + " (limit 1.25); ";
  detail += reached ? "baseline's final loss " + num(base_final) + " reached at iter " +
                          std::to_string(drop.front().vals[*reached].iter) + " with " +
                          num(100.0 * flops_fraction, 3) + "% of baseline FLOPs (limit 70%)"
                    : "baseline's final loss " + num(base_final) + " never reached (dropbp final " +
                          num(drop_final) + ", " +
                          num(100.0 * mean_flops(drop, points - 1) / base_total, 3) +
                          "% of baseline FLOPs)";
  detail += "; curves in convergence_curves.csv, " + num(seconds_since(start), 3) + " s";
  return {pass && seconds_since(start) < 600.0, detail};
}

// 10. LayerDrop and PLD change the forward pass, DropBP does not; loss curves
// at matched relative block FLOPs 0.75.
Outcome baseline_contrast() {
  RunConfig base = copy_run(Method::baseline, 2, 32, 300);
  base.dataset.copy_examples = 5000;
  const std::size_t n = base.model.n_layers();
  Rng init = model_rng(0);
  const Model m(base.model, init);
  const Dataset data = make_dataset(base.dataset);
  Rng pick(1001);
  const Batch b = data.sample_train(8, pick);
  const Step ref = run_step(m, b, ExecutionPlan::keep_all(n));

  // Full mode: a DropBP rate p saves (2/3) p of block work, so 0.375 matches
  // LayerDrop at 0.25 and PLD at relative FLOPs 0.75.
  const double dropbp_p = 0.375, layerdrop_p = 0.25;
  const auto pld = PldSchedule::for_relative_flops(0.75, n);
  std::size_t ld_drops = 0, ld_differ = 0, pld_drops = 0, pld_differ = 0, dbp_same = 0;
  const Rng stream(1002, 3);
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto ld = layerdrop_plan(DropRates::constant(n, layerdrop_p), t, stream);
    if (std::count(ld.routes.begin(), ld.routes.end(), Route::residual_only) > 0) {
      ++ld_drops;
      ld_differ += run_step(m, b, ld).logits != ref.logits;
    }
    const auto pp = pld_plan(pld, n, static_cast<double>(t) / 100.0, t, stream);
    if (std::count(pp.routes.begin(), pp.routes.end(), Route::residual_only) > 0) {
      ++pld_drops;
      pld_differ += run_step(m, b, pp).logits != ref.logits;
    }
    const auto d = sample_decisions(DropRates::constant(n, dropbp_p), t, stream);
    dbp_same += run_step(m, b, ExecutionPlan::from_drops(d.dropped)).logits == ref.logits;
  }
  const bool exact = ld_drops > 0 && ld_differ == ld_drops && pld_drops > 0 &&
                     pld_differ == pld_drops && dbp_same == 100;

  std::vector<std::pair<std::string, RunMetrics>> runs;
  for (Method method : {Method::baseline, Method::dropbp, Method::layerdrop, Method::pld}) {
    RunConfig c = base;
    c.method = method;
    c.p_avg = dropbp_p;
    c.skip_rate = layerdrop_p;
    c.relative_flops = 0.75;
    runs.emplace_back(to_string(method), train_in_memory(c, data, nullptr));
  }
  std::ofstream csv("baseline_contrast_curves.csv");
  csv << "method,iter,val_loss,cumulative_flops\n";
  std::string summary;
  const double base_flops = static_cast<double>(runs.front().second.total_flops.total());
  for (const auto& [name, r] : runs) {
    for (const auto& v : r.vals) {
      csv << name << ',' << v.iter << ',' << v.loss << ',' << v.cumulative_flops.total() << '\n';
    }
    summary += (summary.empty() ? "" : ", ") + name + " val " +
               num(r.final_val_loss().value_or(NAN)) + " at " +
               num(static_cast<double>(r.total_flops.total()) / base_flops, 3) + "x FLOPs";
  }
  return {exact, "layerdrop differs on " + std::to_string(ld_differ) + "/" +
                     std::to_string(ld_drops) + " masks with drops, pld on " +
                     std::to_string(pld_differ) + "/" + std::to_string(pld_drops) +
                     ", dropbp identical on " + std::to_string(dbp_same) +
                     "/100; curves in baseline_contrast_curves.csv (" + summary + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"dropbp semantics", dropbp_semantics},
      {"flops ratios", flops_ratios},
      {"allocator", allocator},
      {"sensitivity", sensitivity},
      {"submodule counts", submodule_counts},
      {"path decomposition", path_decomposition},
      {"memory model", memory_model},
      {"convergence", convergence},
      {"baseline contrast", baseline_contrast},
  };
  std::vector<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    const long k = std::strtol(argv[i], nullptr, 10);
    if (k < 1 || k > static_cast<long>(criteria.size())) {
      std::cerr << "usage: dropbp_acceptance [criterion 1-10 ...]\n";
      return 2;
    }
    selected.push_back(static_cast<std::size_t>(k));
  }
  if (selected.empty()) {
    for (std::size_t k = 1; k <= criteria.size(); ++k) selected.push_back(k);
  }

  int failures = 0;
  for (std::size_t k : selected) {
    const auto& [name, run] = criteria[k - 1];
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << ": " << name << ": "
              << o.detail << std::endl;
  }
  return failures ? 1 : 0;
}

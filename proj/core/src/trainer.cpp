#include "dropbp/trainer.hpp"

#include <cmath>

#include "dropbp/baselines.hpp"
#include "dropbp/checkpoint.hpp"
#include "dropbp/cost_model.hpp"
#include "dropbp/error.hpp"
#include "dropbp/ops.hpp"
#include "dropbp/optim.hpp"

namespace dropbp {

namespace {

std::size_t scored(const Batch& b) {
  std::size_t n = 0;
  for (int t : b.targets) n += t != ops::kIgnoreIndex;
  return n;
}

Batch slice(const Batch& b, std::size_t first, std::size_t count) {
  Batch out;
  out.batch_size = count;
  out.seq = b.seq;
  const auto lo = static_cast<long>(first * b.seq);
  const auto hi = static_cast<long>((first + count) * b.seq);
  out.tokens.assign(b.tokens.begin() + lo, b.tokens.begin() + hi);
  out.targets.assign(b.targets.begin() + lo, b.targets.begin() + hi);
  return out;
}

void require_finite(const Gradients& g, const Model& model) {
  for (std::size_t i = 0; i < g.by_param.size(); ++i) {
    if (g.by_param[i] && !g.by_param[i]->all_finite()) {
      throw NumericError("non-finite gradient for " + model.parameters()[i].name);
    }
  }
}

// Parameters whose layer skipped backward under this plan.
std::vector<bool> idle_mask(const Model& model, const ExecutionPlan& plan) {
  const auto& params = model.parameters();
  std::vector<bool> idle(params.size(), false);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].layer && !plan.needs_cache(*params[i].layer)) idle[i] = true;
  }
  return idle;
}

struct Step {
  double loss = 0.0;
  Gradients grads;
  std::size_t cached_bytes = 0;
  std::size_t block_bytes = 0;
};

// Forward and backward over the micro-batches of one batch, gradients
// weighted by scored tokens so the sum equals the full-batch gradient.
Step run_step(const Model& model, const Batch& batch, const ExecutionPlan& plan,
              std::size_t micro, FlopsMeter& meter) {
  const std::size_t total = scored(batch);
  if (total == 0) throw InputError("batch has no scored targets");
  Step step;
  ActivationCache cache;
  for (std::size_t first = 0; first < batch.batch_size; first += micro) {
    const std::size_t count = std::min(micro, batch.batch_size - first);
    const Batch mb = count == batch.batch_size ? batch : slice(batch, first, count);
    const double w = static_cast<double>(scored(mb)) / static_cast<double>(total);
    if (w == 0.0) continue;
    const Tensor logits = forward(model, mb, plan, cache, meter);
    auto out = loss_and_grad(logits, mb.targets, meter);
    if (w != 1.0) {
      for (double& v : out.grad.values()) v *= w;
    }
    Gradients g = backward(model, cache, plan, out.grad, meter);
    require_finite(g, model);
    step.loss += w * out.value;
    if (step.grads.by_param.empty()) {
      step.grads = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.by_param.size(); ++i) {
        if (!g.by_param[i]) continue;
        auto dst = step.grads.by_param[i]->values();
        const auto src = g.by_param[i]->data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
    step.cached_bytes = cache.total_bytes();
    step.block_bytes = cache.block_bytes();
  }
  return step;
}

}  // namespace

Rng model_rng(std::uint64_t seed) { return Rng(seed, 1); }
Rng data_rng(std::uint64_t seed) { return Rng(seed, 2); }
Rng drop_rng(std::uint64_t seed) { return Rng(seed, 3); }

double evaluate(const Model& model, const Dataset& data, std::size_t batch_size,
                std::size_t val_examples) {
  FlopsMeter meter;
  ActivationCache cache;
  const auto plan = ExecutionPlan::keep_all(model.config().n_layers());
  double sum = 0.0;
  std::size_t count = 0;
  for (const Batch& b : data.val_batches(batch_size, val_examples)) {
    const std::size_t n = scored(b);
    if (n == 0) continue;
    const Tensor logits = forward(model, b, plan, cache, meter);
    sum += loss(logits, b.targets) * static_cast<double>(n);
    count += n;
  }
  if (count == 0) throw InputError("validation split has no scored targets");
  return sum / static_cast<double>(count);
}

void prepare_model(const RunConfig& cfg, Model& model) {
  if (cfg.method != Method::freeze) return;
  const std::size_t n = model.config().n_layers();
  const auto trainable = freeze_mask(n, cfg.skip_rate);
  for (auto& p : model.parameters()) {
    if (p.layer && !trainable[*p.layer]) p.trainable = false;
  }
  // Backward stops below the lowest trainable layer, so embeddings get no
  // gradient either.
  if (frozen_count(n, cfg.skip_rate) > 0) {
    const auto& ids = model.ids();
    model.parameters()[ids.tok_emb].trainable = false;
    model.parameters()[ids.pos_emb].trainable = false;
  }
}

RunMetrics train(const RunConfig& cfg, Model& model, const Dataset& data, MetricsLog& log,
                 const StepObserver& observer) {
  cfg.validate();
  if (model.config() != cfg.model) throw ArgumentError("model does not match the run config");
  if (data.vocab_size() > cfg.model.vocab_size) {
    throw ArgumentError("dataset vocabulary (" + std::to_string(data.vocab_size()) +
                        ") exceeds the model's (" + std::to_string(cfg.model.vocab_size) + ")");
  }
  const std::size_t n_layers = cfg.model.n_layers();
  const std::size_t micro = cfg.micro_batch_size ? cfg.micro_batch_size : cfg.batch_size;
  Rng data_stream = data_rng(cfg.seed);
  const Rng drops = drop_rng(cfg.seed);
  AdamWState opt = AdamWState::for_model(model);
  RunMetrics metrics;
  log.config(cfg);

  // Per-method rate state.
  const WarmupSchedule schedule{cfg.iters, cfg.warmup_fraction};
  DropRates rates = DropRates::constant(n_layers, 0.0);
  FlopsProfile profile;
  std::optional<PldSchedule> pld;
  const bool fixed = cfg.method == Method::dropbp && !cfg.fixed_rates.empty();
  if (fixed) {
    rates = DropRates(cfg.fixed_rates, cfg.p_avg);
  } else if (cfg.method == Method::dropbp) {
    const double rate = cfg.warmup_rate ? *cfg.warmup_rate : round_to_grid(cfg.p_avg);
    rates = DropRates::constant(n_layers, rate);
    WarmupRecord w{cfg.p_avg, rate, rate != cfg.p_avg, cfg.warmup_rate.has_value(),
                   schedule.boundary()};
    metrics.warmup = w;
    log.warmup(w);
    profile = flops_profile(layer_costs(cfg.model, {micro, data.seq_len()}));
  } else if (cfg.method == Method::layerdrop) {
    rates = DropRates::constant(n_layers, cfg.skip_rate);
  } else if (cfg.method == Method::pld) {
    pld = PldSchedule::for_relative_flops(cfg.relative_flops, n_layers, cfg.pld_decay);
  }

  FlopsMeter meter;
  FlopsMeter overhead;
  double last_loss = 0.0;
  for (std::uint64_t t = 0; t < cfg.iters; ++t) {
    const Batch batch = data.sample_train(cfg.batch_size, data_stream);
    const double lr = cosine_lr(t, cfg.iters, cfg.lr, cfg.lr_min);
    try {
      if (cfg.method == Method::dropbp && !fixed) {
        if (auto ev = maybe_reallocate(schedule, t, model, batch, "train@" + std::to_string(t),
                                       profile, cfg.p_avg, overhead)) {
          rates = ev->rates;
          log.allocator(*ev);
          metrics.allocator_events.push_back(std::move(*ev));
        }
      }

      ExecutionPlan plan;
      switch (cfg.method) {
        case Method::baseline:
          plan = ExecutionPlan::keep_all(n_layers);
          break;
        case Method::dropbp:
          plan = ExecutionPlan::from_drops(sample_decisions(rates, t, drops).dropped);
          break;
        case Method::freeze:
          plan = freeze_plan(n_layers, cfg.skip_rate);
          break;
        case Method::layerdrop:
          plan = layerdrop_plan(rates, t, drops);
          break;
        case Method::pld: {
          const double frac = static_cast<double>(t) / static_cast<double>(cfg.iters);
          plan = pld_plan(*pld, n_layers, frac, t, drops);
          std::vector<double> r(n_layers);
          for (std::size_t l = 0; l < n_layers; ++l) {
            r[l] = 1.0 - pld_keep_prob(static_cast<double>(l + 1) / static_cast<double>(n_layers),
                                       frac, *pld);
          }
          rates = DropRates(std::move(r), 1.0 - cfg.relative_flops);
          break;
        }
      }

      const FlopsCount before = meter.snapshot();
      Step step = run_step(model, batch, plan, micro, meter);
      adamw_step(model.parameters(), step.grads.by_param, opt, lr, cfg.adamw,
                 idle_mask(model, plan));
      last_loss = step.loss;

      IterRecord rec;
      rec.iter = t;
      rec.loss = step.loss;
      rec.lr = lr;
      rec.flops = meter.snapshot() - before;
      rec.cached_bytes = step.cached_bytes;
      rec.block_bytes = step.block_bytes;
      rec.dropped.resize(n_layers);
      for (std::size_t l = 0; l < n_layers; ++l) rec.dropped[l] = plan.dropped(l);
      rec.rates = rates.rates();
      log.iter(rec);
      if (observer) observer(rec, plan, model);
      metrics.iters.push_back(std::move(rec));

      for (const auto& p : model.parameters()) p.value.ensure_finite(p.name);
    } catch (const NumericError& e) {
      metrics.aborted = true;
      metrics.abort_reason = e.what();
      log.abort(t, e.what());
      break;
    }

    if ((t + 1) % cfg.val_every == 0 || t + 1 == cfg.iters) {
      const double vl = evaluate(model, data, cfg.batch_size, cfg.val_examples);
      ValRecord v{t + 1, vl, std::exp(vl), meter.snapshot() + overhead.snapshot()};
      log.val(v);
      metrics.vals.push_back(v);
    }
  }
  metrics.overhead_flops = overhead.snapshot();
  metrics.total_flops = meter.snapshot() + metrics.overhead_flops;
  log.summary(metrics.iters.size(), last_loss, metrics.final_val_loss(), metrics.total_flops,
              metrics.overhead_flops);
  return metrics;
}

RunMetrics train(const RunConfig& cfg) {
  cfg.validate();
  const Dataset data = make_dataset(cfg.dataset);
  Rng init = model_rng(cfg.seed);
  Model model(cfg.model, init);
  if (!cfg.init_checkpoint.empty()) load_checkpoint(cfg.init_checkpoint, model);
  prepare_model(cfg, model);
  MetricsLog log = cfg.log_path.empty() ? MetricsLog() : MetricsLog(cfg.log_path);
  RunMetrics metrics = train(cfg, model, data, log);
  if (!cfg.save_checkpoint.empty()) save_checkpoint(cfg.save_checkpoint, model);
  return metrics;
}

}  // namespace dropbp

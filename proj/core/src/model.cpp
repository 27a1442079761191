#include "dropbp/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dropbp/error.hpp"
#include "dropbp/ops.hpp"

namespace dropbp {

const char* to_string(TrainingMode mode) { return mode == TrainingMode::full ? "full" : "peft"; }

TrainingMode parse_training_mode(const std::string& text) {
  if (text == "full") return TrainingMode::full;
  if (text == "peft") return TrainingMode::peft;
  throw InputError("unknown training mode '" + text + "' (expected full or peft)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ArgumentError(std::string(name) + " must be positive");
  };
  positive(n_units, "n_units");
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(n_heads, "n_heads");
  positive(vocab_size, "vocab_size");
  positive(seq_len, "seq_len");
  if (d_model % n_heads != 0) throw ArgumentError("d_model must be divisible by n_heads");
  if (mode == TrainingMode::peft && adapter_rank == 0) {
    throw ArgumentError("peft mode requires adapter_rank >= 1");
  }
  if (!(init_std > 0.0)) throw ArgumentError("init_std must be positive");
}

std::string LayerIndex::name() const {
  return "unit" + std::to_string(unit) + (branch == Branch::attn ? ".attn" : ".ffn");
}

ExecutionPlan ExecutionPlan::keep_all(std::size_t n_layers) {
  ExecutionPlan plan;
  plan.routes.assign(n_layers, Route::both);
  return plan;
}

ExecutionPlan ExecutionPlan::from_drops(const std::vector<bool>& dropped) {
  ExecutionPlan plan;
  plan.routes.reserve(dropped.size());
  for (bool d : dropped) plan.routes.push_back(d ? Route::residual_only : Route::both);
  return plan;
}

std::size_t BranchCache::bytes() const {
  std::size_t b = xhat.bytes() + rstd.size() * sizeof(double) + h.bytes() + q.bytes() +
                  k.bytes() + v.bytes() + probs.bytes() + ctx.bytes() + pre.bytes() + act.bytes();
  for (const auto& t : adapter_mid) b += t.bytes();
  return b;
}

void ActivationCache::reset(std::size_t n_layers, const Batch& batch) {
  layers_.assign(n_layers, std::nullopt);
  batch_size_ = batch.batch_size;
  seq_ = batch.seq;
  tokens_ = batch.tokens;
  final_xhat = Tensor();
  final_rstd.clear();
  final_h = Tensor();
}

const BranchCache& ActivationCache::layer(std::size_t i) const {
  if (!layers_.at(i)) {
    throw StateError("no cached activations for layer " + LayerIndex::from_flat(i).name());
  }
  return *layers_[i];
}

std::size_t ActivationCache::layer_bytes(std::size_t i) const {
  return layers_.at(i) ? layers_[i]->bytes() : 0;
}

std::size_t ActivationCache::block_bytes() const {
  std::size_t b = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) b += layer_bytes(i);
  return b;
}

std::size_t ActivationCache::off_block_bytes() const {
  return final_xhat.bytes() + final_rstd.size() * sizeof(double) + final_h.bytes();
}

// ---------------------------------------------------------------------------
// Model construction

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

std::size_t Model::add_param(std::string name, Tensor value, bool trainable,
                             std::optional<std::size_t> layer) {
  params_.push_back({std::move(name), std::move(value), trainable, layer});
  return params_.size() - 1;
}

Model::Linear Model::add_linear(const std::string& name, std::size_t in, std::size_t out,
                                std::size_t layer, Rng& rng) {
  const bool peft = config_.mode == TrainingMode::peft;
  Linear lin;
  lin.weight = add_param(name, normal_tensor({in, out}, config_.init_std, rng), !peft, layer);
  if (peft) {
    const std::size_t r = config_.adapter_rank;
    lin.lora_a = add_param(name + ".lora_a", normal_tensor({in, r}, config_.init_std, rng), true,
                           layer);
    lin.lora_b = add_param(name + ".lora_b", Tensor({r, out}), true, layer);
  }
  return lin;
}

Model::Model(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const bool full = config_.mode == TrainingMode::full;
  const std::size_t d = config_.d_model;
  ids_.tok_emb = add_param("tok_emb", normal_tensor({config_.vocab_size, d}, config_.init_std, rng),
                           full, std::nullopt);
  ids_.pos_emb = add_param("pos_emb", normal_tensor({config_.seq_len, d}, config_.init_std, rng),
                           full, std::nullopt);
  for (std::size_t u = 0; u < config_.n_units; ++u) {
    const std::string unit = "unit" + std::to_string(u);
    const std::size_t la = LayerIndex{u, Branch::attn}.flat();
    const std::size_t lf = LayerIndex{u, Branch::ffn}.flat();
    AttnIds a;
    a.ln_gamma = add_param(unit + ".ln1.gamma", Tensor::full({d}, 1.0), true, la);
    a.ln_beta = add_param(unit + ".ln1.beta", Tensor({d}), true, la);
    a.wq = add_linear(unit + ".attn.wq", d, d, la, rng);
    a.wk = add_linear(unit + ".attn.wk", d, d, la, rng);
    a.wv = add_linear(unit + ".attn.wv", d, d, la, rng);
    a.wo = add_linear(unit + ".attn.wo", d, d, la, rng);
    ids_.attn.push_back(a);
    FfnIds f;
    f.ln_gamma = add_param(unit + ".ln2.gamma", Tensor::full({d}, 1.0), true, lf);
    f.ln_beta = add_param(unit + ".ln2.beta", Tensor({d}), true, lf);
    f.w1 = add_linear(unit + ".ffn.w1", d, config_.d_ff, lf, rng);
    f.w2 = add_linear(unit + ".ffn.w2", config_.d_ff, d, lf, rng);
    ids_.ffn.push_back(f);
  }
  ids_.lnf_gamma = add_param("ln_f.gamma", Tensor::full({d}, 1.0), true, std::nullopt);
  ids_.lnf_beta = add_param("ln_f.beta", Tensor({d}), true, std::nullopt);
  ids_.head = add_param("head", normal_tensor({d, config_.vocab_size}, config_.init_std, rng), full,
                        std::nullopt);
}

std::size_t Model::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw InputError("unknown parameter '" + name + "'");
}

std::vector<std::size_t> Model::layer_parameters(std::size_t layer) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].layer == layer) out.push_back(i);
  }
  return out;
}

void Model::set_trainable(const std::string& name, bool trainable) {
  param(name).trainable = trainable;
}

std::size_t Model::parameter_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (!trainable_only || p.trainable) n += p.value.size();
  }
  return n;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

struct Dims {
  std::size_t batch, seq, rows, d, heads, dh;
};

Dims dims_of(const Model& model, std::size_t batch, std::size_t seq) {
  const auto& c = model.config();
  return {batch, seq, batch * seq, c.d_model, c.n_heads, c.head_dim()};
}

const Tensor& value(const Model& model, std::size_t id) { return model.parameters()[id].value; }

// y = x W (+ scale * (x A) B). Pushes x A onto `mids` when adapted.
Tensor linear_forward(const Model& model, const Model::Linear& lin, const Tensor& x,
                      std::vector<Tensor>* mids, FlopsMeter& meter) {
  Tensor y = ops::matmul_forward(x, value(model, lin.weight), meter);
  if (lin.lora_a) {
    Tensor mid = ops::matmul_forward(x, value(model, *lin.lora_a), meter);
    Tensor delta = ops::matmul_forward(mid, value(model, *lin.lora_b), meter);
    delta = ops::scale(delta, model.config().adapter_scale(), meter, Phase::forward);
    ops::add_inplace(y, delta, meter, Phase::forward);
    if (mids) mids->push_back(std::move(mid));
  }
  return y;
}

// Causal softmax over rows of a [seq x seq] score block, in place.
void causal_softmax(double* s, std::size_t seq) {
  for (std::size_t i = 0; i < seq; ++i) {
    double* row = s + i * seq;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= i; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j <= i; ++j) row[j] /= sum;
    for (std::size_t j = i + 1; j < seq; ++j) row[j] = 0.0;
  }
}

Tensor attention_branch_forward(const Model& model, std::size_t unit, const Tensor& x,
                                const Dims& dm, BranchCache* cache, FlopsMeter& meter) {
  const auto& ids = model.ids().attn[unit];
  auto ln = ops::layer_norm_forward(x, value(model, ids.ln_gamma), value(model, ids.ln_beta), meter);
  std::vector<Tensor> mids;
  std::vector<Tensor>* mp = cache ? &mids : nullptr;
  Tensor q = linear_forward(model, ids.wq, ln.out, mp, meter);
  Tensor k = linear_forward(model, ids.wk, ln.out, mp, meter);
  Tensor v = linear_forward(model, ids.wv, ln.out, mp, meter);

  const std::size_t T = dm.seq, d = dm.d, dh = dm.dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor probs({dm.batch * dm.heads * T, T});
  Tensor ctx({dm.rows, d});
  for (std::size_t b = 0; b < dm.batch; ++b) {
    for (std::size_t h = 0; h < dm.heads; ++h) {
      const std::size_t off = b * T * d + h * dh;
      double* p = probs.ptr() + (b * dm.heads + h) * T * T;
      ops::gemm(T, T, dh, scale, q.ptr() + off, d, false, k.ptr() + off, d, true, p, T, false);
      causal_softmax(p, T);
      ops::gemm(T, dh, T, 1.0, p, T, false, v.ptr() + off, d, false, ctx.ptr() + off, d, false);
    }
  }
  // scores + softmax + context per (batch, head)
  meter.add(Phase::forward, dm.batch * dm.heads * (4 * T * T * dh + T * T));

  Tensor out = linear_forward(model, ids.wo, ctx, mp, meter);
  if (cache) {
    cache->xhat = std::move(ln.xhat);
    cache->rstd = std::move(ln.rstd);
    cache->h = std::move(ln.out);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->ctx = std::move(ctx);
    cache->adapter_mid = std::move(mids);
  }
  return out;
}

Tensor ffn_branch_forward(const Model& model, std::size_t unit, const Tensor& x,
                          BranchCache* cache, FlopsMeter& meter) {
  const auto& ids = model.ids().ffn[unit];
  auto ln = ops::layer_norm_forward(x, value(model, ids.ln_gamma), value(model, ids.ln_beta), meter);
  std::vector<Tensor> mids;
  std::vector<Tensor>* mp = cache ? &mids : nullptr;
  Tensor pre = linear_forward(model, ids.w1, ln.out, mp, meter);
  Tensor act = ops::gelu_forward(pre, meter);
  Tensor out = linear_forward(model, ids.w2, act, mp, meter);
  if (cache) {
    cache->xhat = std::move(ln.xhat);
    cache->rstd = std::move(ln.rstd);
    cache->h = std::move(ln.out);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->adapter_mid = std::move(mids);
  }
  return out;
}

std::vector<int> position_ids(std::size_t batch, std::size_t seq) {
  std::vector<int> ids(batch * seq);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i % seq);
  return ids;
}

}  // namespace

Tensor forward(const Model& model, const Batch& batch, const ExecutionPlan& plan,
               ActivationCache& cache, FlopsMeter& meter) {
  const auto& cfg = model.config();
  const std::size_t n_layers = cfg.n_layers();
  if (plan.routes.size() != n_layers) {
    throw DimensionError("plan has " + std::to_string(plan.routes.size()) + " routes for " +
                         std::to_string(n_layers) + " layers");
  }
  if (batch.batch_size == 0 || batch.seq == 0 || batch.tokens.size() != batch.rows()) {
    throw DimensionError("batch token count does not match batch_size x seq");
  }
  if (batch.seq > cfg.seq_len) {
    throw InputError("sequence length " + std::to_string(batch.seq) + " exceeds model seq_len " +
                     std::to_string(cfg.seq_len));
  }
  const Dims dm = dims_of(model, batch.batch_size, batch.seq);
  cache.reset(n_layers, batch);

  const auto& ids = model.ids();
  Tensor x = ops::embedding_forward(value(model, ids.tok_emb), batch.tokens, meter);
  const auto pos = position_ids(batch.batch_size, batch.seq);
  ops::add_inplace(x, ops::embedding_forward(value(model, ids.pos_emb), pos, meter), meter,
                   Phase::forward);

  for (std::size_t layer = 0; layer < n_layers; ++layer) {
    if (plan.drop_in_forward && plan.dropped(layer)) continue;
    const LayerIndex li = LayerIndex::from_flat(layer);
    std::optional<BranchCache> bc;
    if (plan.needs_cache(layer)) bc.emplace();
    BranchCache* bcp = bc ? &*bc : nullptr;
    Tensor out = li.branch == Branch::attn
                     ? attention_branch_forward(model, li.unit, x, dm, bcp, meter)
                     : ffn_branch_forward(model, li.unit, x, bcp, meter);
    ops::add_inplace(x, out, meter, Phase::forward);
    if (bc) cache.store(layer, std::move(*bc));
  }

  auto lnf = ops::layer_norm_forward(x, value(model, ids.lnf_gamma), value(model, ids.lnf_beta), meter);
  Tensor logits = ops::matmul_forward(lnf.out, value(model, ids.head), meter);
  cache.final_xhat = std::move(lnf.xhat);
  cache.final_rstd = std::move(lnf.rstd);
  cache.final_h = std::move(lnf.out);
  return logits;
}

// ---------------------------------------------------------------------------
// Backward

namespace {

struct GradSink {
  const Model& model;
  Gradients& grads;
  bool trainable(std::size_t id) const { return model.parameters()[id].trainable; }
  void set(std::size_t id, Tensor g) {
    if (trainable(id)) grads.by_param[id] = std::move(g);
  }
};

// Backward of linear_forward. `mid` is the cached x A (adapted maps only).
Tensor linear_backward(const Model& model, const Model::Linear& lin, const Tensor& x,
                       const Tensor* mid, const Tensor& dy, GradSink& sink, FlopsMeter& meter) {
  if (sink.trainable(lin.weight)) {
    sink.set(lin.weight, ops::matmul_grad_weight(x, dy, meter));
  }
  Tensor dx = ops::matmul_grad_input(dy, value(model, lin.weight), meter);
  if (lin.lora_a) {
    const Tensor ddelta = ops::scale(dy, model.config().adapter_scale(), meter, Phase::backward_grad);
    if (sink.trainable(*lin.lora_b)) {
      sink.set(*lin.lora_b, ops::matmul_grad_weight(*mid, ddelta, meter));
    }
    const Tensor dmid = ops::matmul_grad_input(ddelta, value(model, *lin.lora_b), meter);
    if (sink.trainable(*lin.lora_a)) {
      sink.set(*lin.lora_a, ops::matmul_grad_weight(x, dmid, meter));
    }
    ops::add_inplace(dx, ops::matmul_grad_input(dmid, value(model, *lin.lora_a), meter), meter,
                     Phase::backward_grad);
  }
  return dx;
}

const Tensor* mid_at(const BranchCache& c, std::size_t i) {
  return c.adapter_mid.empty() ? nullptr : &c.adapter_mid.at(i);
}

Tensor layer_norm_branch_backward(const Model& model, std::size_t gamma_id, std::size_t beta_id,
                                  const BranchCache& c, const Tensor& dh, GradSink& sink,
                                  FlopsMeter& meter) {
  const bool params = sink.trainable(gamma_id) || sink.trainable(beta_id);
  auto g = ops::layer_norm_backward(dh, c.xhat, c.rstd, value(model, gamma_id), meter, params);
  if (params) {
    sink.set(gamma_id, std::move(g.grad_gamma));
    sink.set(beta_id, std::move(g.grad_beta));
  }
  return std::move(g.grad_x);
}

Tensor attention_branch_backward(const Model& model, std::size_t unit, const BranchCache& c,
                                 const Tensor& dout, const Dims& dm, GradSink& sink,
                                 FlopsMeter& meter) {
  const auto& ids = model.ids().attn[unit];
  // adapter mids were pushed in order q, k, v, o
  const Tensor dctx = linear_backward(model, ids.wo, c.ctx, mid_at(c, 3), dout, sink, meter);

  const std::size_t T = dm.seq, d = dm.d, dh = dm.dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor dq({dm.rows, d}), dk({dm.rows, d}), dv({dm.rows, d});
  std::vector<double> dp(T * T), ds(T * T);
  for (std::size_t b = 0; b < dm.batch; ++b) {
    for (std::size_t h = 0; h < dm.heads; ++h) {
      const std::size_t off = b * T * d + h * dh;
      const double* p = c.probs.ptr() + (b * dm.heads + h) * T * T;
      ops::gemm(T, T, dh, 1.0, dctx.ptr() + off, d, false, c.v.ptr() + off, d, true, dp.data(), T,
                false);
      ops::gemm(T, dh, T, 1.0, p, T, true, dctx.ptr() + off, d, false, dv.ptr() + off, d, false);
      for (std::size_t i = 0; i < T; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < T; ++j) dot += p[i * T + j] * dp[i * T + j];
        for (std::size_t j = 0; j < T; ++j) ds[i * T + j] = p[i * T + j] * (dp[i * T + j] - dot);
      }
      ops::gemm(T, dh, T, scale, ds.data(), T, false, c.k.ptr() + off, d, false, dq.ptr() + off, d,
                false);
      ops::gemm(T, dh, T, scale, ds.data(), T, true, c.q.ptr() + off, d, false, dk.ptr() + off, d,
                false);
    }
  }
  meter.add(Phase::backward_grad, dm.batch * dm.heads * (8 * T * T * dh + T * T));

  Tensor dh_in = linear_backward(model, ids.wq, c.h, mid_at(c, 0), dq, sink, meter);
  ops::add_inplace(dh_in, linear_backward(model, ids.wk, c.h, mid_at(c, 1), dk, sink, meter), meter,
                   Phase::backward_grad);
  ops::add_inplace(dh_in, linear_backward(model, ids.wv, c.h, mid_at(c, 2), dv, sink, meter), meter,
                   Phase::backward_grad);
  return layer_norm_branch_backward(model, ids.ln_gamma, ids.ln_beta, c, dh_in, sink, meter);
}

Tensor ffn_branch_backward(const Model& model, std::size_t unit, const BranchCache& c,
                           const Tensor& dout, GradSink& sink, FlopsMeter& meter) {
  const auto& ids = model.ids().ffn[unit];
  const Tensor dact = linear_backward(model, ids.w2, c.act, mid_at(c, 1), dout, sink, meter);
  const Tensor dpre = ops::gelu_backward(c.pre, dact, meter);
  const Tensor dh = linear_backward(model, ids.w1, c.h, mid_at(c, 0), dpre, sink, meter);
  return layer_norm_branch_backward(model, ids.ln_gamma, ids.ln_beta, c, dh, sink, meter);
}

}  // namespace

Gradients backward(const Model& model, const ActivationCache& cache, const ExecutionPlan& plan,
                   const Tensor& loss_grad, FlopsMeter& meter) {
  const auto& cfg = model.config();
  const std::size_t n_layers = cfg.n_layers();
  if (plan.routes.size() != n_layers || cache.n_layers() != n_layers) {
    throw StateError("backward: plan/cache layer count does not match the model");
  }
  const Dims dm = dims_of(model, cache.batch_size(), cache.seq());
  if (loss_grad.rows() != dm.rows || loss_grad.cols() != cfg.vocab_size) {
    throw StateError("backward: loss gradient shape " + shape_string(loss_grad.shape()) +
                     " does not match the cached forward");
  }
  for (std::size_t layer = plan.backward_floor; layer < n_layers; ++layer) {
    if (plan.needs_cache(layer) && !cache.present(layer)) {
      throw StateError("backward: layer " + LayerIndex::from_flat(layer).name() +
                       " is kept but its activations were not cached");
    }
  }
  if (cache.final_h.empty()) throw StateError("backward: cache holds no forward pass");

  Gradients grads;
  const auto& params = model.parameters();
  grads.by_param.resize(params.size());
  // Trainable parameters start at zero; layers that never run backward keep it.
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable) grads.by_param[i] = Tensor(params[i].value.shape());
  }
  GradSink sink{model, grads};
  const auto& ids = model.ids();

  Tensor dx = [&] {
    if (sink.trainable(ids.head)) {
      sink.set(ids.head, ops::matmul_grad_weight(cache.final_h, loss_grad, meter));
    }
    Tensor dhf = ops::matmul_grad_input(loss_grad, value(model, ids.head), meter);
    const bool ln_params = sink.trainable(ids.lnf_gamma) || sink.trainable(ids.lnf_beta);
    auto g = ops::layer_norm_backward(dhf, cache.final_xhat, cache.final_rstd,
                                      value(model, ids.lnf_gamma), meter, ln_params);
    if (ln_params) {
      sink.set(ids.lnf_gamma, std::move(g.grad_gamma));
      sink.set(ids.lnf_beta, std::move(g.grad_beta));
    }
    return std::move(g.grad_x);
  }();

  for (std::size_t layer = n_layers; layer-- > plan.backward_floor;) {
    const Route route = plan.routes[layer];
    if (route == Route::residual_only) continue;
    const LayerIndex li = LayerIndex::from_flat(layer);
    const BranchCache& c = cache.layer(layer);
    Tensor dbranch = li.branch == Branch::attn
                         ? attention_branch_backward(model, li.unit, c, dx, dm, sink, meter)
                         : ffn_branch_backward(model, li.unit, c, dx, sink, meter);
    if (route == Route::both) {
      ops::add_inplace(dx, dbranch, meter, Phase::backward_grad);
    } else {
      dx = std::move(dbranch);
    }
  }

  if (plan.backward_floor == 0) {
    if (sink.trainable(ids.tok_emb)) {
      sink.set(ids.tok_emb, ops::embedding_backward(dx, cache.tokens(), cfg.vocab_size, meter));
    }
    if (sink.trainable(ids.pos_emb)) {
      const auto pos = position_ids(dm.batch, dm.seq);
      sink.set(ids.pos_emb, ops::embedding_backward(dx, pos, cfg.seq_len, meter));
    }
    grads.input = std::move(dx);
  }
  return grads;
}

const Tensor* Gradients::find(const Model& model, const std::string& name) const {
  const auto& g = by_param.at(model.index_of(name));
  return g ? &*g : nullptr;
}

LossOutput loss_and_grad(const Tensor& logits, std::span<const int> targets, FlopsMeter& meter) {
  auto fwd = ops::cross_entropy_forward(logits, targets, meter);
  Tensor grad = ops::cross_entropy_backward(fwd, targets, meter);
  return {fwd.loss, std::move(grad)};
}

double loss(const Tensor& logits, std::span<const int> targets) {
  FlopsMeter scratch;
  return ops::cross_entropy_forward(logits, targets, scratch).loss;
}

}  // namespace dropbp

#include "dropbp/optim.hpp"

#include <cmath>
#include <numbers>

#include "dropbp/error.hpp"

namespace dropbp {

AdamWState AdamWState::for_model(const Model& model) {
  AdamWState s;
  for (const auto& p : model.parameters()) {
    s.m.emplace_back(p.trainable ? Tensor(p.value.shape()) : Tensor());
    s.v.emplace_back(p.trainable ? Tensor(p.value.shape()) : Tensor());
  }
  return s;
}

void adamw_step(std::vector<Parameter>& params, const std::vector<std::optional<Tensor>>& grads,
                AdamWState& state, double lr, const AdamWConfig& cfg,
                const std::vector<bool>& idle) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw DimensionError("adamw_step: parameter, gradient and state counts differ");
  }
  if (!idle.empty() && idle.size() != params.size()) {
    throw DimensionError("adamw_step: idle mask size differs from parameter count");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) continue;
    auto& p = params[i].value;
    const auto& g = *grads[i];
    if (g.shape() != p.shape()) {
      throw DimensionError("adamw_step: gradient shape mismatch for " + params[i].name);
    }
    if (state.m[i].shape() != p.shape()) {
      // Became trainable after the state was built.
      state.m[i] = Tensor(p.shape());
      state.v[i] = Tensor(p.shape());
    }
    auto theta = p.values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    const auto gd = g.data();
    if (!idle.empty() && idle[i]) {
      for (std::size_t j = 0; j < theta.size(); ++j) {
        m[j] *= cfg.beta1;
        v[j] *= cfg.beta2;
        theta[j] -= lr * cfg.weight_decay * theta[j];
      }
      continue;
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gd[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gd[j] * gd[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      theta[j] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * theta[j]);
    }
  }
}

double cosine_lr(std::uint64_t iter, std::uint64_t total, double lr_max, double lr_min) {
  if (total == 0) return lr_max;
  if (iter > total) throw ArgumentError("cosine_lr: iteration past the end of the schedule");
  const double frac = static_cast<double>(iter) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace dropbp

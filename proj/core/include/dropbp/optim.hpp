#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dropbp/model.hpp"
#include "dropbp/tensor.hpp"

namespace dropbp {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

// First and second moments per parameter; empty for frozen ones.
struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamWState for_model(const Model& model);
};

// Decoupled weight decay:
//   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// Parameters without a gradient (frozen) are left untouched.
// idle[i] marks a parameter whose backward was skipped this step (a dropped
// layer). Its moments still decay and weight decay still applies, but the
// stale moments do not move it, so at wd = 0 it stays put.
void adamw_step(std::vector<Parameter>& params, const std::vector<std::optional<Tensor>>& grads,
                AdamWState& state, double lr, const AdamWConfig& cfg,
                const std::vector<bool>& idle = {});

// lr_min + (lr_max - lr_min) * (1 + cos(pi * iter / total)) / 2
double cosine_lr(std::uint64_t iter, std::uint64_t total, double lr_max, double lr_min);

}  // namespace dropbp

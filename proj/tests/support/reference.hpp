#pragma once

// Independent transformer implementation on the scalar tape. Shares nothing
// with the library's kernels except the parameter values it reads.

#include <map>
#include <string>
#include <vector>

#include "dropbp/model.hpp"

namespace dropbp::testing {

struct ReferenceResult {
  double loss = 0.0;
  std::vector<double> logits;               // rows x vocab
  std::map<std::string, Tensor> grads;      // trainable parameters only
  std::vector<double> input_grad;           // d loss / d embedding sum
};

// detached[l] = true makes branch l's output a constant in the residual sum:
// forward unchanged, no gradient into or through the branch.
ReferenceResult reference_run(const Model& model, const Batch& batch,
                              const std::vector<bool>& detached);

// Sensitivities by brute force: full gradients with nothing detached and with each
// layer detached in turn, L2 norm per trainable tensor.
std::vector<double> reference_sensitivities(const Model& model, const Batch& batch);

}  // namespace dropbp::testing

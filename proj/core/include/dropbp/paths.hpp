#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "dropbp/model.hpp"
#include "dropbp/rng.hpp"
#include "dropbp/tensor.hpp"

namespace dropbp {

// Anything with residual blocks whose backward can be routed per block.
class ResidualNetwork {
 public:
  virtual ~ResidualNetwork() = default;
  virtual std::size_t n_blocks() const = 0;
  // Gradient of the loss w.r.t. the network input when each block's backward
  // follows routes[i]. Forward activations are fixed.
  virtual Tensor input_gradient(const std::vector<Route>& routes) = 0;
};

// x_{i+1} = x_i + x_i * W_i, loss = sum(readout .* x_n).
class LinearResidualNet final : public ResidualNetwork {
 public:
  LinearResidualNet(std::vector<Tensor> weights, Tensor input, Tensor readout);
  // Each W_i is `scale` times a random orthogonal matrix, so a path through k
  // branches scales the readout norm by exactly scale^k.
  static LinearResidualNet scaled_orthogonal(std::size_t n_blocks, std::size_t width,
                                             std::size_t rows, double scale, Rng& rng);

  std::size_t n_blocks() const override { return weights_.size(); }
  Tensor input_gradient(const std::vector<Route>& routes) override;
  Tensor forward() const;

 private:
  std::vector<Tensor> weights_;
  Tensor input_;
  Tensor readout_;
};

// Routes the transformer's backward per residual branch on one fixed batch.
// The forward pass runs once, at construction.
class ModelPathProbe final : public ResidualNetwork {
 public:
  ModelPathProbe(const Model& model, Batch batch);

  std::size_t n_blocks() const override { return model_.config().n_layers(); }
  Tensor input_gradient(const std::vector<Route>& routes) override;
  double loss() const { return loss_; }

 private:
  const Model& model_;
  Batch batch_;
  ActivationCache cache_;
  Tensor loss_grad_;
  double loss_ = 0.0;
};

// Routes for a path: branch_only where on_path[i], residual_only elsewhere.
std::vector<Route> path_routes(const std::vector<bool>& on_path);

struct PathSample {
  std::size_t k = 0;
  double norm = 0.0;
  std::size_t rep = 0;
};

struct PathRow {
  std::size_t k = 0;
  double mean_norm = 0.0;
  double weight = 0.0;  // C(n, k) / 2^n
  double weighted_total = 0.0;
};

struct PathReport {
  std::size_t n_blocks = 0;
  std::vector<PathRow> rows;
  std::vector<PathSample> samples;
};

// For each k, draws `reps` random k-subsets of blocks (without replacement
// within a subset), backprops through the branch of the chosen blocks and
// the identity of the rest, and records the input-gradient L2 norm.
PathReport path_gradient_analysis(ResidualNetwork& net, const std::vector<std::size_t>& k_values,
                                  std::size_t reps, Rng& rng);

// Sum of the input gradients of all 2^n paths.
Tensor sum_over_paths(ResidualNetwork& net);

}  // namespace dropbp

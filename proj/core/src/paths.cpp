#include "dropbp/paths.hpp"

#include <cmath>

#include "dropbp/error.hpp"
#include "dropbp/ops.hpp"
#include "dropbp/submodules.hpp"

namespace dropbp {

namespace {

// Modified Gram-Schmidt on the columns of a Gaussian matrix.
Tensor random_orthogonal(std::size_t n, Rng& rng) {
  for (;;) {
    Tensor q({n, n});
    for (double& v : q.values()) v = rng.normal();
    bool degenerate = false;
    for (std::size_t j = 0; j < n && !degenerate; ++j) {
      for (std::size_t i = 0; i < j; ++i) {
        double dot = 0.0;
        for (std::size_t r = 0; r < n; ++r) dot += q.at(r, i) * q.at(r, j);
        for (std::size_t r = 0; r < n; ++r) q.at(r, j) -= dot * q.at(r, i);
      }
      double norm = 0.0;
      for (std::size_t r = 0; r < n; ++r) norm += q.at(r, j) * q.at(r, j);
      norm = std::sqrt(norm);
      if (norm < 1e-8) {
        degenerate = true;
        break;
      }
      for (std::size_t r = 0; r < n; ++r) q.at(r, j) /= norm;
    }
    if (!degenerate) return q;
  }
}

void check_routes(const std::vector<Route>& routes, std::size_t n) {
  if (routes.size() != n) {
    throw DimensionError("expected " + std::to_string(n) + " routes, got " +
                         std::to_string(routes.size()));
  }
}

}  // namespace

LinearResidualNet::LinearResidualNet(std::vector<Tensor> weights, Tensor input, Tensor readout)
    : weights_(std::move(weights)), input_(std::move(input)), readout_(std::move(readout)) {
  const std::size_t d = input_.cols();
  for (const auto& w : weights_) {
    if (w.rank() != 2 || w.rows() != d || w.cols() != d) {
      throw DimensionError("residual weights must be " + std::to_string(d) + "x" +
                           std::to_string(d));
    }
  }
  if (readout_.shape() != input_.shape()) throw DimensionError("readout must match input shape");
}

LinearResidualNet LinearResidualNet::scaled_orthogonal(std::size_t n_blocks, std::size_t width,
                                                       std::size_t rows, double scale, Rng& rng) {
  std::vector<Tensor> ws;
  for (std::size_t i = 0; i < n_blocks; ++i) {
    Tensor w = random_orthogonal(width, rng);
    for (double& v : w.values()) v *= scale;
    ws.push_back(std::move(w));
  }
  Tensor x({rows, width}), c({rows, width});
  for (double& v : x.values()) v = rng.normal();
  for (double& v : c.values()) v = rng.normal();
  return {std::move(ws), std::move(x), std::move(c)};
}

Tensor LinearResidualNet::forward() const {
  FlopsMeter meter;
  Tensor x = input_;
  for (const auto& w : weights_) {
    Tensor branch = ops::matmul_forward(x, w, meter);
    ops::add_inplace(x, branch, meter, Phase::forward);
  }
  return x;
}

Tensor LinearResidualNet::input_gradient(const std::vector<Route>& routes) {
  check_routes(routes, weights_.size());
  FlopsMeter meter;
  Tensor dx = readout_;
  for (std::size_t i = weights_.size(); i-- > 0;) {
    if (routes[i] == Route::residual_only) continue;
    Tensor db = ops::matmul_grad_input(dx, weights_[i], meter);
    if (routes[i] == Route::both) {
      ops::add_inplace(dx, db, meter, Phase::backward_grad);
    } else {
      dx = std::move(db);
    }
  }
  return dx;
}

ModelPathProbe::ModelPathProbe(const Model& model, Batch batch)
    : model_(model), batch_(std::move(batch)) {
  FlopsMeter meter;
  const auto plan = ExecutionPlan::keep_all(model_.config().n_layers());
  const Tensor logits = forward(model_, batch_, plan, cache_, meter);
  auto out = loss_and_grad(logits, batch_.targets, meter);
  loss_ = out.value;
  loss_grad_ = std::move(out.grad);
}

Tensor ModelPathProbe::input_gradient(const std::vector<Route>& routes) {
  check_routes(routes, n_blocks());
  ExecutionPlan plan;
  plan.routes = routes;
  FlopsMeter meter;
  return backward(model_, cache_, plan, loss_grad_, meter).input;
}

std::vector<Route> path_routes(const std::vector<bool>& on_path) {
  std::vector<Route> routes(on_path.size());
  for (std::size_t i = 0; i < on_path.size(); ++i) {
    routes[i] = on_path[i] ? Route::branch_only : Route::residual_only;
  }
  return routes;
}

PathReport path_gradient_analysis(ResidualNetwork& net, const std::vector<std::size_t>& k_values,
                                  std::size_t reps, Rng& rng) {
  const std::size_t n = net.n_blocks();
  if (reps == 0) throw ArgumentError("path analysis needs at least one repetition");
  for (std::size_t k : k_values) {
    if (k > n) {
      throw ArgumentError("path length " + std::to_string(k) + " exceeds block count " +
                          std::to_string(n));
    }
  }
  const auto weights = binomial_weights(static_cast<unsigned>(n));
  PathReport report;
  report.n_blocks = n;
  for (std::size_t k : k_values) {
    double sum = 0.0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      std::vector<bool> on_path(n, false);
      for (std::size_t i : rng.sample_without_replacement(n, k)) on_path[i] = true;
      const double norm = net.input_gradient(path_routes(on_path)).l2_norm();
      report.samples.push_back({k, norm, rep});
      sum += norm;
    }
    PathRow row;
    row.k = k;
    row.mean_norm = sum / static_cast<double>(reps);
    row.weight = static_cast<double>(weights[k]);
    row.weighted_total = row.mean_norm * row.weight;
    report.rows.push_back(row);
  }
  return report;
}

Tensor sum_over_paths(ResidualNetwork& net) {
  const std::size_t n = net.n_blocks();
  if (n >= 20) throw ArgumentError("path enumeration is limited to fewer than 20 blocks");
  Tensor total;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    std::vector<bool> on_path(n);
    for (std::size_t i = 0; i < n; ++i) on_path[i] = (mask >> i) & 1U;
    Tensor g = net.input_gradient(path_routes(on_path));
    if (total.empty()) {
      total = std::move(g);
    } else {
      for (std::size_t j = 0; j < total.size(); ++j) total.values()[j] += g.values()[j];
    }
  }
  return total;
}

}  // namespace dropbp

#include "dropbp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dropbp/error.hpp"

namespace dropbp::ops {

namespace {

void require_2d_match(bool ok, const char* what, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw DimensionError(std::string(what) + ": incompatible shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
}

std::uint64_t mkn2(std::size_t m, std::size_t k, std::size_t n) {
  return 2ULL * static_cast<std::uint64_t>(m) * k * n;
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, bool trans_a, const double* b, std::size_t ldb, bool trans_b,
          double* c, std::size_t ldc, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0);
  }
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * ldc;
      const double* ai = a + i * lda;
      for (std::size_t p = 0; p < k; ++p) {
        const double s = alpha * ai[p];
        const double* bp = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * lda;
      double* ci = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * ldb;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] += alpha * s;
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a + p * lda;
      const double* bp = b + p * ldb;
      for (std::size_t i = 0; i < m; ++i) {
        const double s = alpha * ap[i];
        double* ci = c + i * ldc;
        for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * lda + i] * b[j * ldb + p];
        c[i * ldc + j] += alpha * s;
      }
    }
  }
}

Tensor matmul_forward(const Tensor& a, const Tensor& b, FlopsMeter& meter) {
  require_2d_match(a.cols() == b.rows(), "matmul_forward", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  gemm(m, n, k, 1.0, a.ptr(), k, false, b.ptr(), n, false, out.ptr(), n, false);
  meter.add(Phase::forward, mkn2(m, k, n));
  return out;
}

Tensor matmul_grad_input(const Tensor& grad_out, const Tensor& b, FlopsMeter& meter) {
  require_2d_match(grad_out.cols() == b.cols(), "matmul_grad_input", grad_out, b);
  const std::size_t m = grad_out.rows(), n = grad_out.cols(), k = b.rows();
  Tensor grad_a({m, k});
  gemm(m, k, n, 1.0, grad_out.ptr(), n, false, b.ptr(), n, true, grad_a.ptr(), k, false);
  meter.add(Phase::backward_grad, mkn2(m, k, n));
  return grad_a;
}

Tensor matmul_grad_weight(const Tensor& a, const Tensor& grad_out, FlopsMeter& meter) {
  require_2d_match(a.rows() == grad_out.rows(), "matmul_grad_weight", a, grad_out);
  const std::size_t m = a.rows(), k = a.cols(), n = grad_out.cols();
  Tensor grad_b({k, n});
  gemm(k, n, m, 1.0, a.ptr(), k, true, grad_out.ptr(), n, false, grad_b.ptr(), n, false);
  meter.add(Phase::backward_param, mkn2(m, k, n));
  return grad_b;
}

MatmulGrads matmul_backward(const Tensor& grad_out, const Tensor& a, const Tensor& b,
                            FlopsMeter& meter) {
  require_2d_match(a.cols() == b.rows(), "matmul_backward", a, b);
  if (grad_out.rows() != a.rows() || grad_out.cols() != b.cols()) {
    throw DimensionError("matmul_backward: grad_out " + shape_string(grad_out.shape()) +
                         " inconsistent with forward operands");
  }
  return {matmul_grad_input(grad_out, b, meter), matmul_grad_weight(a, grad_out, meter)};
}

Tensor add(const Tensor& a, const Tensor& b, FlopsMeter& meter, Phase phase) {
  Tensor out = a;
  add_inplace(out, b, meter, phase);
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src, FlopsMeter& meter, Phase phase) {
  if (dst.size() != src.size()) {
    throw DimensionError("add: shapes " + shape_string(dst.shape()) + " and " +
                         shape_string(src.shape()));
  }
  double* d = dst.ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
  meter.add(phase, dst.size());
}

Tensor scale(const Tensor& a, double factor, FlopsMeter& meter, Phase phase) {
  Tensor out = a;
  for (double& v : out.values()) v *= factor;
  meter.add(phase, out.size());
  return out;
}

LayerNormForward layer_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                    FlopsMeter& meter, double eps) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(d));
  }
  LayerNormForward r{Tensor({rows, d}), Tensor({rows, d}), std::vector<double>(rows)};
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x.ptr() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    r.rstd[i] = rstd;
    double* hi = r.xhat.ptr() + i * d;
    double* yi = r.out.ptr() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      hi[j] = (xi[j] - mean) * rstd;
      yi[j] = hi[j] * gamma[j] + beta[j];
    }
  }
  meter.add(Phase::forward, x.size());
  return r;
}

LayerNormGrads layer_norm_backward(const Tensor& grad_out, const Tensor& xhat,
                                   std::span<const double> rstd, const Tensor& gamma,
                                   FlopsMeter& meter, bool param_grads) {
  const std::size_t rows = xhat.rows(), d = xhat.cols();
  if (grad_out.size() != xhat.size() || rstd.size() != rows || gamma.size() != d) {
    throw DimensionError("layer_norm_backward: inconsistent shapes");
  }
  LayerNormGrads g{Tensor({rows, d}), Tensor(), Tensor()};
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* dy = grad_out.ptr() + i * d;
    const double* h = xhat.ptr() + i * d;
    double sum_dh = 0.0, sum_dh_h = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dh = dy[j] * gamma[j];
      sum_dh += dh;
      sum_dh_h += dh * h[j];
    }
    const double mean_dh = sum_dh * inv_d;
    const double mean_dh_h = sum_dh_h * inv_d;
    double* dx = g.grad_x.ptr() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      dx[j] = rstd[i] * (dy[j] * gamma[j] - mean_dh - h[j] * mean_dh_h);
    }
  }
  meter.add(Phase::backward_grad, xhat.size());
  if (param_grads) {
    g.grad_gamma = Tensor(gamma.shape());
    g.grad_beta = Tensor(gamma.shape());
    for (std::size_t i = 0; i < rows; ++i) {
      const double* dy = grad_out.ptr() + i * d;
      const double* h = xhat.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        g.grad_gamma[j] += dy[j] * h[j];
        g.grad_beta[j] += dy[j];
      }
    }
    meter.add(Phase::backward_param, xhat.size());
  }
  return g;
}

Tensor softmax_forward(const Tensor& x, FlopsMeter& meter) {
  const std::size_t rows = x.rows(), d = x.cols();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x.ptr() + i * d;
    double* yi = y.ptr() + i * d;
    const double mx = *std::max_element(xi, xi + d);
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (std::size_t j = 0; j < d; ++j) yi[j] /= sum;
  }
  meter.add(Phase::forward, x.size());
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& grad_out, FlopsMeter& meter) {
  if (y.size() != grad_out.size()) throw DimensionError("softmax_backward: shape mismatch");
  const std::size_t rows = y.rows(), d = y.cols();
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* yi = y.ptr() + i * d;
    const double* gi = grad_out.ptr() + i * d;
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += yi[j] * gi[j];
    double* di = dx.ptr() + i * d;
    for (std::size_t j = 0; j < d; ++j) di[j] = yi[j] * (gi[j] - dot);
  }
  meter.add(Phase::backward_grad, y.size());
  return dx;
}

Tensor gelu_forward(const Tensor& x, FlopsMeter& meter) {
  Tensor y(x.shape());
  const double* xs = x.ptr();
  double* ys = y.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) {
    ys[i] = 0.5 * xs[i] * (1.0 + std::erf(xs[i] * std::numbers::sqrt2 * 0.5));
  }
  meter.add(Phase::forward, x.size());
  return y;
}

Tensor gelu_backward(const Tensor& x, const Tensor& grad_out, FlopsMeter& meter) {
  if (x.size() != grad_out.size()) throw DimensionError("gelu_backward: shape mismatch");
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    dx[i] = grad_out[i] * (cdf + v * pdf);
  }
  meter.add(Phase::backward_grad, x.size());
  return dx;
}

Tensor embedding_forward(const Tensor& table, std::span<const int> ids, FlopsMeter& meter) {
  const std::size_t vocab = table.rows(), d = table.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InputError("token id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(table.ptr() + static_cast<std::size_t>(ids[i]) * d, d, out.ptr() + i * d);
  }
  meter.add(Phase::forward, out.size());
  return out;
}

Tensor embedding_backward(const Tensor& grad_out, std::span<const int> ids, std::size_t vocab,
                          FlopsMeter& meter) {
  const std::size_t d = grad_out.cols();
  if (grad_out.rows() != ids.size()) throw DimensionError("embedding_backward: row mismatch");
  Tensor table({vocab, d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double* row = table.ptr() + static_cast<std::size_t>(ids[i]) * d;
    const double* g = grad_out.ptr() + i * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += g[j];
  }
  meter.add(Phase::backward_param, grad_out.size());
  return table;
}

CrossEntropyForward cross_entropy_forward(const Tensor& logits, std::span<const int> targets,
                                          FlopsMeter& meter) {
  const std::size_t rows = logits.rows(), v = logits.cols();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  logits.ensure_finite("cross_entropy logits");
  CrossEntropyForward r;
  r.probs = Tensor(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* li = logits.ptr() + i * v;
    double* pi = r.probs.ptr() + i * v;
    const double mx = *std::max_element(li, li + v);
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      pi[j] = std::exp(li[j] - mx);
      sum += pi[j];
    }
    for (std::size_t j = 0; j < v; ++j) pi[j] /= sum;
    const int t = targets[i];
    if (t == kIgnoreIndex) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw InputError("target id " + std::to_string(t) + " out of range");
    }
    total += (mx + std::log(sum)) - li[t];
    ++r.counted;
  }
  r.loss = r.counted ? total / static_cast<double>(r.counted) : 0.0;
  if (!std::isfinite(r.loss)) throw NumericError("cross_entropy produced a non-finite loss");
  meter.add(Phase::forward, logits.size());
  return r;
}

Tensor cross_entropy_backward(const CrossEntropyForward& fwd, std::span<const int> targets,
                              FlopsMeter& meter) {
  const std::size_t rows = fwd.probs.rows(), v = fwd.probs.cols();
  Tensor grad(fwd.probs.shape());
  if (fwd.counted > 0) {
    const double inv = 1.0 / static_cast<double>(fwd.counted);
    for (std::size_t i = 0; i < rows; ++i) {
      if (targets[i] == kIgnoreIndex) continue;
      const double* pi = fwd.probs.ptr() + i * v;
      double* gi = grad.ptr() + i * v;
      for (std::size_t j = 0; j < v; ++j) gi[j] = pi[j] * inv;
      gi[targets[i]] -= inv;
    }
  }
  meter.add(Phase::backward_grad, grad.size());
  return grad;
}

}  // namespace dropbp::ops

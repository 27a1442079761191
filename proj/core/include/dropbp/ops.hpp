#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dropbp/flops_meter.hpp"
#include "dropbp/tensor.hpp"

// Forward and backward kernels for every primitive the network uses. All
// tensors are treated as 2-D row-major matrices ([rows x cols]); each kernel
// meters its own flops.
namespace dropbp::ops {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr int kIgnoreIndex = -1;

// C (m x n) [+]= alpha * op(A) * op(B) with leading dimensions, so the model
// can multiply per-head column slices in place. Does not meter.
void gemm(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, bool trans_a, const double* b, std::size_t ldb, bool trans_b,
          double* c, std::size_t ldc, bool accumulate);

// out = a x b, meter.forward += 2mkn.
Tensor matmul_forward(const Tensor& a, const Tensor& b, FlopsMeter& meter);

struct MatmulGrads {
  Tensor grad_a;
  Tensor grad_b;
};
// grad_a = grad_out x b^T, grad_b = a^T x grad_out; 2mkn flops each.
MatmulGrads matmul_backward(const Tensor& grad_out, const Tensor& a, const Tensor& b,
                            FlopsMeter& meter);
// The two halves separately, for callers that skip frozen weights.
Tensor matmul_grad_input(const Tensor& grad_out, const Tensor& b, FlopsMeter& meter);
Tensor matmul_grad_weight(const Tensor& a, const Tensor& grad_out, FlopsMeter& meter);

// Elementwise helpers, 1 flop per element charged to `phase`.
Tensor add(const Tensor& a, const Tensor& b, FlopsMeter& meter, Phase phase);
void add_inplace(Tensor& dst, const Tensor& src, FlopsMeter& meter, Phase phase);
Tensor scale(const Tensor& a, double factor, FlopsMeter& meter, Phase phase);

struct LayerNormForward {
  Tensor out;
  Tensor xhat;               // normalized input before the affine map
  std::vector<double> rstd;  // 1 / sqrt(var + eps), one per row
};
LayerNormForward layer_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                    FlopsMeter& meter, double eps = kLayerNormEps);

struct LayerNormGrads {
  Tensor grad_x;
  Tensor grad_gamma;  // empty when param grads were not requested
  Tensor grad_beta;
};
LayerNormGrads layer_norm_backward(const Tensor& grad_out, const Tensor& xhat,
                                   std::span<const double> rstd, const Tensor& gamma,
                                   FlopsMeter& meter, bool param_grads = true);

// Row-wise softmax.
Tensor softmax_forward(const Tensor& x, FlopsMeter& meter);
Tensor softmax_backward(const Tensor& y, const Tensor& grad_out, FlopsMeter& meter);

// Exact (erf-based) GELU.
Tensor gelu_forward(const Tensor& x, FlopsMeter& meter);
Tensor gelu_backward(const Tensor& x, const Tensor& grad_out, FlopsMeter& meter);

// Gathers table rows. ids must be < table.rows().
Tensor embedding_forward(const Tensor& table, std::span<const int> ids, FlopsMeter& meter);
// Scatter-adds grad rows into a zero table of `vocab` rows.
Tensor embedding_backward(const Tensor& grad_out, std::span<const int> ids, std::size_t vocab,
                          FlopsMeter& meter);

struct CrossEntropyForward {
  double loss = 0.0;         // mean over targets != kIgnoreIndex
  Tensor probs;              // softmax of logits
  std::size_t counted = 0;   // number of non-ignored targets
};
CrossEntropyForward cross_entropy_forward(const Tensor& logits, std::span<const int> targets,
                                          FlopsMeter& meter);
Tensor cross_entropy_backward(const CrossEntropyForward& fwd, std::span<const int> targets,
                              FlopsMeter& meter);

}  // namespace dropbp::ops

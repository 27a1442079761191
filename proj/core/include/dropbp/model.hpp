#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dropbp/flops_meter.hpp"
#include "dropbp/rng.hpp"
#include "dropbp/tensor.hpp"

namespace dropbp {

enum class TrainingMode { full, peft };

const char* to_string(TrainingMode mode);
TrainingMode parse_training_mode(const std::string& text);

struct ModelConfig {
  std::size_t n_units = 2;  // transformer units; DropBP sees 2 * n_units layers
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 256;
  std::size_t seq_len = 64;  // maximum sequence length (position table size)
  TrainingMode mode = TrainingMode::full;
  std::size_t adapter_rank = 0;  // low-rank adapter width, peft only
  double adapter_alpha = 16.0;   // adapter output is scaled by alpha / rank
  double init_std = 0.02;

  std::size_t n_layers() const { return 2 * n_units; }
  std::size_t head_dim() const { return d_model / n_heads; }
  double adapter_scale() const {
    return adapter_rank ? adapter_alpha / static_cast<double>(adapter_rank) : 0.0;
  }
  void validate() const;  // throws ArgumentError

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Branch : std::uint8_t { attn = 0, ffn = 1 };

// A residual branch. Units hold an attention layer and an FFN layer, so the
// flat index is 2 * unit + branch.
struct LayerIndex {
  std::size_t unit = 0;
  Branch branch = Branch::attn;

  std::size_t flat() const { return 2 * unit + static_cast<std::size_t>(branch); }
  static LayerIndex from_flat(std::size_t i) {
    return {i / 2, (i % 2) ? Branch::ffn : Branch::attn};
  }
  std::string name() const;  // e.g. "unit1.ffn"
};

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
  std::optional<std::size_t> layer;  // flat layer index; nullopt for embeddings/head/final LN
};

// What backward does at each residual branch.
//   both           normal backprop: residual identity plus branch
//   residual_only  branch skipped in backward (DropBP "dropped")
//   branch_only    identity skipped; used by the path-length analysis
enum class Route : std::uint8_t { both, residual_only, branch_only };

struct ExecutionPlan {
  std::vector<Route> routes;
  // LayerDrop semantics: residual_only branches are also skipped in forward.
  bool drop_in_forward = false;
  // Layers below this index get no backward at all, and embedding gradients
  // are not computed (layer freezing truncates backprop).
  std::size_t backward_floor = 0;

  static ExecutionPlan keep_all(std::size_t n_layers);
  // dropped[i] == true -> residual_only.
  static ExecutionPlan from_drops(const std::vector<bool>& dropped);

  bool dropped(std::size_t layer) const { return routes.at(layer) == Route::residual_only; }
  // True when layer i needs its branch activations for backward.
  bool needs_cache(std::size_t layer) const {
    return layer >= backward_floor && routes.at(layer) != Route::residual_only;
  }
};

struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq = 0;
  std::vector<int> tokens;   // batch_size * seq, row-major
  std::vector<int> targets;  // same layout; ops::kIgnoreIndex masks a position
  std::size_t rows() const { return batch_size * seq; }
};

// Activations one branch's backward reads. Only the fields for the branch's
// kind are filled.
struct BranchCache {
  Tensor xhat;               // layer-norm normalized input
  std::vector<double> rstd;  // layer-norm reciprocal std per row
  Tensor h;                  // layer-norm output (input to the first linears)
  Tensor q, k, v;            // attention projections
  Tensor probs;              // attention probabilities, [batch*heads*seq x seq]
  Tensor ctx;                // attention context (input to the output projection)
  Tensor pre;                // FFN pre-activation
  Tensor act;                // FFN activation (input to the second linear)
  std::vector<Tensor> adapter_mid;  // x * A for each adapted linear, peft only

  std::size_t bytes() const;
};

class ActivationCache {
 public:
  void reset(std::size_t n_layers, const Batch& batch);

  bool present(std::size_t layer) const { return layers_.at(layer).has_value(); }
  const BranchCache& layer(std::size_t i) const;
  void store(std::size_t i, BranchCache cache) { layers_.at(i) = std::move(cache); }

  std::size_t layer_bytes(std::size_t i) const;
  std::size_t block_bytes() const;
  std::size_t off_block_bytes() const;
  std::size_t total_bytes() const { return block_bytes() + off_block_bytes(); }
  std::size_t n_layers() const { return layers_.size(); }

  std::size_t batch_size() const { return batch_size_; }
  std::size_t seq() const { return seq_; }
  const std::vector<int>& tokens() const { return tokens_; }

  // Final layer norm and head input.
  Tensor final_xhat;
  std::vector<double> final_rstd;
  Tensor final_h;

 private:
  std::vector<std::optional<BranchCache>> layers_;
  std::size_t batch_size_ = 0;
  std::size_t seq_ = 0;
  std::vector<int> tokens_;
};

// Decoder-only transformer: token + position embeddings, n residual units
// (pre-LN causal attention, pre-LN GELU FFN), final LN, linear head.
// Linear maps are stored as [in x out] and applied as x * W. In peft mode
// every block linear map gets a low-rank adapter x * A * B * (alpha/rank) and
// base weights, embeddings and head are frozen.
class Model {
 public:
  Model(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  std::size_t index_of(const std::string& name) const;  // throws InputError
  Parameter& param(const std::string& name) { return params_[index_of(name)]; }
  const Parameter& param(const std::string& name) const { return params_[index_of(name)]; }
  std::vector<std::size_t> layer_parameters(std::size_t layer) const;
  void set_trainable(const std::string& name, bool trainable);
  std::size_t parameter_count(bool trainable_only = false) const;

  struct Linear {
    std::size_t weight = 0;
    std::optional<std::size_t> lora_a;
    std::optional<std::size_t> lora_b;
  };
  struct AttnIds {
    std::size_t ln_gamma = 0, ln_beta = 0;
    Linear wq, wk, wv, wo;
  };
  struct FfnIds {
    std::size_t ln_gamma = 0, ln_beta = 0;
    Linear w1, w2;
  };
  struct Ids {
    std::size_t tok_emb = 0, pos_emb = 0, lnf_gamma = 0, lnf_beta = 0, head = 0;
    std::vector<AttnIds> attn;
    std::vector<FfnIds> ffn;
  };
  const Ids& ids() const { return ids_; }

 private:
  std::size_t add_param(std::string name, Tensor value, bool trainable,
                        std::optional<std::size_t> layer);
  Linear add_linear(const std::string& name, std::size_t in, std::size_t out,
                    std::size_t layer, Rng& rng);

  ModelConfig config_;
  std::vector<Parameter> params_;
  Ids ids_;
};

// Runs the forward pass. The logits do not depend on which layers the plan
// drops unless plan.drop_in_forward is set; the cache receives branch
// activations only for layers that plan.needs_cache().
Tensor forward(const Model& model, const Batch& batch, const ExecutionPlan& plan,
               ActivationCache& cache, FlopsMeter& meter);

struct Gradients {
  // Aligned with Model::parameters(); nullopt for parameters that are not
  // trainable (their gradient is never materialized).
  std::vector<std::optional<Tensor>> by_param;
  // d loss / d (embedding sum), the input of the first unit. Empty when the
  // plan truncates backward with a floor.
  Tensor input;

  const Tensor* find(const Model& model, const std::string& name) const;
};

// Hand-written backward. Branches routed residual_only contribute nothing:
// the gradient passes through the residual identity and their parameter
// gradients are exactly zero. No rescaling is applied to kept branches.
Gradients backward(const Model& model, const ActivationCache& cache, const ExecutionPlan& plan,
                   const Tensor& loss_grad, FlopsMeter& meter);

struct LossOutput {
  double value = 0.0;
  Tensor grad;  // d loss / d logits
};
// Mean next-token cross-entropy over non-ignored targets.
LossOutput loss_and_grad(const Tensor& logits, std::span<const int> targets, FlopsMeter& meter);
double loss(const Tensor& logits, std::span<const int> targets);

}  // namespace dropbp

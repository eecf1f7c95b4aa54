#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "relmap/relevance.hpp"
#include "relmap/rng.hpp"
#include "relmap/tensor.hpp"

namespace relmap {

enum class Mode { kTrain, kEval };

enum class ParamKind { kWeight, kMapRaw, kBeta };

// Handle the optimizer uses to update one parameter tensor (or the
// scalar beta). Map entries are clipped to [0,1] after each step.
struct ParamRef {
  std::string name;
  ParamKind kind = ParamKind::kWeight;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
  RelevanceMap* map = nullptr;     // set for kMapRaw
  double* scalar = nullptr;        // set for kBeta
  double* scalar_grad = nullptr;
};

// Linear layer without bias; weights gated element-wise by the active
// task's relevance map.
struct MaskedLinear {
  Tensor weights;                       // out x in
  std::vector<Tensor> final_masks;      // binary, one per completed task
  std::optional<RelevanceMap> live;     // map of the in-progress task
  FrozenIndicator frozen;

  Tensor grad_weights;
  Tensor grad_raw;
  double grad_beta = 0.0;

  // forward caches (train mode)
  Tensor in_cache;
  Tensor gate_cache;

  std::size_t in_dim() const { return weights.shape()[1]; }
  std::size_t out_dim() const { return weights.shape()[0]; }
};

// Batch norm whose scale/shift vectors are gated per task; running
// statistics are kept per task so completed tasks never drift.
struct MaskedBatchNorm {
  Tensor scale;   // [n]
  Tensor shift;   // [n]
  std::vector<Tensor> scale_masks, shift_masks;
  std::optional<RelevanceMap> live_scale, live_shift;
  FrozenIndicator frozen_scale, frozen_shift;
  std::vector<Tensor> run_mean, run_var;  // per task, biased variance
  double eps = 1e-5;
  double momentum = 0.1;

  Tensor grad_scale, grad_shift, grad_raw_scale, grad_raw_shift;
  double grad_beta_scale = 0.0, grad_beta_shift = 0.0;

  // forward caches (train mode)
  Tensor xhat_cache;
  Tensor inv_std_cache;   // [n]
  Tensor gated_scale_cache;
};

// The masked MLP: M-Linear / M-BN / ReLU blocks with a 10-way softmax
// head, per the 784-100-100-100-10 architecture.
class MaskedNetwork {
 public:
  MaskedNetwork() = default;

  // dims = {in, hidden..., out}. BN follows every hidden linear.
  static MaskedNetwork mlp(const std::vector<std::size_t>& dims, Rng& rng);
  static MaskedNetwork standard_mlp(Rng& rng) {
    return mlp({784, 100, 100, 100, 10}, rng);
  }

  const std::vector<std::size_t>& dims() const { return dims_; }

  // Task lifecycle -------------------------------------------------------
  void start_task(Rng& rng, const MapInit& init = {});
  void prune_live(double mu);
  void finish_task();

  std::size_t completed_tasks() const { return completed_; }
  bool has_live() const { return !linears_.empty() && linears_[0].live.has_value(); }
  // completed tasks plus the in-progress one
  std::size_t task_count() const { return completed_ + (has_live() ? 1 : 0); }

  // Forward / backward ---------------------------------------------------
  // Train mode requires task == the live task's id (== completed_tasks()).
  Tensor forward(const Tensor& x, std::size_t task, Mode mode);
  void backward(const Tensor& logit_grad);

  // Parameters of the in-progress task (weights, live raw maps, betas).
  std::vector<ParamRef> live_params(bool learn_beta = false);

  // Unsupervised task inference: per sample, the task whose masked
  // forward yields the highest max softmax probability; ties break to
  // the lowest task id.
  struct TaskInference {
    std::vector<std::size_t> task;  // per sample
    Tensor logits;                  // rows from each sample's winning task
    std::vector<double> confidence; // winning max softmax probability
  };
  TaskInference task_logit_max(const Tensor& x);

  // Accounting -----------------------------------------------------------
  std::size_t weight_count() const;        // gated parameters incl. BN
  std::size_t frozen_count() const;
  double model_sparsity() const;           // over completed task masks
  MemoryFootprint footprint() const;

  // checkpoint restore only
  void set_completed(std::size_t n) { completed_ = n; }

  std::vector<MaskedLinear>& linears() { return linears_; }
  const std::vector<MaskedLinear>& linears() const { return linears_; }
  std::vector<MaskedBatchNorm>& bns() { return bns_; }
  const std::vector<MaskedBatchNorm>& bns() const { return bns_; }

 private:
  void check_task(std::size_t task, Mode mode) const;
  Tensor layer_mask(const MaskedLinear& lin, std::size_t task,
                    Mode mode) const;

  std::vector<std::size_t> dims_;
  std::vector<MaskedLinear> linears_;   // dims_.size()-1 layers
  std::vector<MaskedBatchNorm> bns_;    // one per hidden layer
  std::size_t completed_ = 0;

  // backward caches
  bool have_forward_ = false;
  std::vector<Tensor> act_cache_;       // input to each linear (train mode)
  std::vector<Tensor> preact_cache_;    // BN outputs pre-ReLU
};

}  // namespace relmap

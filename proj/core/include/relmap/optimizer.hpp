#pragma once

#include <span>
#include <vector>

#include "relmap/network.hpp"
#include "relmap/tensor.hpp"

namespace relmap {

struct AdamConfig {
  double lr_weights = 0.002;
  double lr_maps = 0.002;
  double lr_beta = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over two parameter groups (weights; raw maps) with independent
// learning rates. Entries whose gradient is exactly zero (gradient
// masking) are skipped entirely: neither the parameter nor its moments
// move, and each entry keeps its own bias-correction step count.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  long step_count() const { return step_; }

  void step(std::span<ParamRef> params);

  // Checkpoint access.
  struct Slot {
    Tensor m, v, t;
    double scalar_m = 0.0, scalar_v = 0.0, scalar_t = 0.0;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  long& step_ref() { return step_; }

 private:
  AdamConfig config_;
  std::vector<Slot> slots_;
  long step_ = 0;
};

}  // namespace relmap

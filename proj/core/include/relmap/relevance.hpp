#pragma once

#include <cstdint>
#include <vector>

#include "relmap/rng.hpp"
#include "relmap/tensor.hpp"

namespace relmap {

inline constexpr double kBetaMin = 80.0;

// Sigmoidal pseudo-round gate: 1 / (1 + exp(-beta (x - 0.5))).
double pseudo_round(double x, double beta);
// d/dx pseudo_round = beta * L * (1 - L).
double pseudo_round_deriv(double x, double beta);

struct MapInit {
  double mean = 0.3;
  double sd = 0.2;
  double beta = kBetaMin;
};

// Per-task raw relevance values in [0, 1] over one weight tensor, with a
// layer-wise tightness beta.
struct RelevanceMap {
  Tensor raw;
  double beta = kBetaMin;
  bool pruned = false;
};

// Raw entries drawn from normal(mean, sd), clipped to [0, 1].
RelevanceMap init_map(const std::vector<std::size_t>& shape, Rng& rng,
                      const MapInit& init = {});

// Soft gate tensor: pseudo_round applied entry-wise.
Tensor gate(const RelevanceMap& map);

// Hard gate: pseudo_round rounded to {0, 1}; a tie at exactly 0.5 rounds to 1.
Tensor binarize(const RelevanceMap& map);

// Zeroes every raw entry <= mu and sets the pruned flag. Idempotent.
void prune(RelevanceMap& map, double mu);

// Clips raw entries back into [0, 1]; pruned entries stay at 0.
void clip_raw(RelevanceMap& map);

// Cumulative OR of completed tasks' binary gates; 1 means stabilized.
struct FrozenIndicator {
  Tensor mask;

  std::size_t popcount() const;
};

// frozen.mask |= binary_gate (element-wise).
void update_frozen(FrozenIndicator& frozen, const Tensor& binary_gate);

// Fraction of weight positions whose gate is 0 in every task mask.
double sparsity(const std::vector<Tensor>& task_masks,
                std::size_t weight_count);

struct MemoryFootprint {
  std::size_t weight_count = 0;
  std::size_t task_count = 0;
  std::size_t weight_bytes = 0;          // 8 bytes per weight
  std::size_t mask_bytes_per_task = 0;   // 1 bit per entry, byte padded
  std::size_t mask_bytes_total = 0;
  std::size_t removable_weights = 0;     // gate 0 under every task
};

MemoryFootprint memory_footprint(const std::vector<Tensor>& task_masks,
                                 std::size_t weight_count);

}  // namespace relmap

#pragma once

#include <cstdint>
#include <vector>

#include "relmap/data.hpp"
#include "relmap/metrics.hpp"
#include "relmap/network.hpp"
#include "relmap/optimizer.hpp"

namespace relmap {

enum class SparsityKind { kNone, kL1, kL0 };

struct TrainConfig {
  std::size_t epochs = 20;
  // reference budget the prune window [20, 80] is stated against; the
  // window scales proportionally when epochs is reduced
  std::size_t full_scale_epochs = 250;
  std::size_t batch = 128;
  double lr_weights = 0.002;
  double lr_maps = 0.002;
  double mu = 0.05;
  MapInit map_init;
  bool learn_beta = false;
  SparsityKind sparsity = SparsityKind::kNone;
  double sparsity_coeff = 0.0;
  std::size_t patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
  std::pair<std::size_t, std::size_t> prune_window() const;  // [lo, hi] epochs
};

// Optional sparsity penalty on the live maps' gates: coeff * sum(gate)
// for both the l1 and the l0 surrogate (gates are near-binary, so the
// gate sum stands in for the nonzero count). Accumulates d/draw into the
// live maps' grad buffers; call after backward(), before the optimizer
// step. Returns the penalty value.
double add_sparsity_loss(MaskedNetwork& net, SparsityKind kind, double coeff);

// Eval-mode accuracy of `task` on a labeled set.
double evaluate(MaskedNetwork& net, std::size_t task,
                const LabeledDataset& test);

// Eval-mode mean cross-entropy (used for the convergence trigger).
double eval_loss(MaskedNetwork& net, std::size_t task,
                 const LabeledDataset& data);

struct TaskReport {
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_loss;
  std::size_t prune_epoch = 0;
  bool converged = false;
  double accuracy = 0.0;
};

// One round of the supervised protocol for task `task`: train under the
// task's map with gradient masking, prune the maps at the convergence
// trigger, keep training to the epoch budget, then binarize and freeze.
TaskReport train_task(MaskedNetwork& net, const TaskStream& stream,
                      std::size_t task, const TrainConfig& config,
                      RunRecord* record);

struct RunSummary {
  std::vector<double> task_accuracy;  // measured after the final task
  double mean_accuracy = 0.0;
};

// Full multi-task supervised run; re-evaluates all earlier tasks after
// every task and records everything.
RunSummary run_supervised(MaskedNetwork& net, const TaskStream& stream,
                          const TrainConfig& config, RunRecord* record);

}  // namespace relmap

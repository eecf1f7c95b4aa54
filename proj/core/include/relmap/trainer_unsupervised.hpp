#pragma once

#include "relmap/data.hpp"
#include "relmap/metrics.hpp"
#include "relmap/network.hpp"
#include "relmap/stats.hpp"
#include "relmap/trainer_supervised.hpp"

namespace relmap {

struct UnsupervisedConfig {
  TrainConfig train;
  DetectorConfig detector;
  double tau = 0.95;             // claim threshold for batch filtering
  double gaussian_coeff = 0.01;  // 0 disables the Gaussian negative step
  std::size_t ramp = 0;          // fuzzy transition length, batches
  std::size_t epochs_per_task = 20;
  std::size_t max_detections = 16;  // runaway-detection guard
};

// Per-batch novelty statistic: mean of -log(max softmax probability)
// under the in-progress task's mask.
double novelty_stat(MaskedNetwork& net, const Tensor& x);

struct FilterResult {
  Tensor x;                  // retained samples
  std::vector<int> y;
  std::vector<int> task_of;  // ground-truth provenance of retained rows
  std::vector<std::size_t> claimed;  // per completed task
};

// Samples confident (> tau) under some completed task's mask are claimed
// by the most confident such task and excluded from new-task training.
FilterResult filter_batch(MaskedNetwork& net, const Batch& batch, double tau);

// One negative-sample step: forward a standard-Gaussian batch under the
// live mask and push its logits toward zero. Returns the (scaled) loss.
double gaussian_regularize(MaskedNetwork& net, Rng& rng, Adam& adam,
                           std::vector<ParamRef>& params,
                           const std::vector<std::size_t>& batch_shape,
                           double coeff);

struct UnsupervisedReport {
  std::vector<std::size_t> detections;     // batch indices where TSD fired
  std::vector<std::size_t> boundaries;     // ground truth, from the stream
  std::size_t tasks_created = 0;
  std::vector<double> task_accuracy;       // per ground-truth task
  double mean_accuracy = 0.0;
};

// The unsupervised protocol over a label-free flat stream: filter each
// batch against completed masks, detect task switches, allocate a fresh
// map per detection, train per batch with a Gaussian negative step, and
// prune+freeze whenever a task ends.
UnsupervisedReport run_unsupervised(MaskedNetwork& net,
                                    const TaskStream& stream,
                                    const UnsupervisedConfig& config,
                                    RunRecord* record);

// Unsupervised task inference for a single sample batch; returns the
// winning task per row.
std::vector<std::size_t> infer_task(MaskedNetwork& net, const Tensor& x);

}  // namespace relmap

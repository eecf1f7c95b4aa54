#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "relmap/tensor.hpp"

namespace relmap {

struct LabeledDataset {
  Tensor images;            // n x d, values in [0, 1]
  std::vector<int> labels;  // in [0, 10)

  std::size_t size() const { return labels.size(); }
};

// Parses an IDX image/label file pair (magic 0x803 / 0x801, big-endian
// dims), normalizing pixels by /255. Gzip-compressed files are accepted
// transparently.
LabeledDataset load_idx(const std::string& images_path,
                        const std::string& labels_path);

// One mini-batch with ground-truth task provenance retained.
struct Batch {
  Tensor x;
  std::vector<int> y;
  std::vector<int> task_of;
};

// Index-based reference into a stream's backing datasets; cheap to store
// for a whole run, materialized per batch.
struct BatchRef {
  std::vector<std::pair<int, std::uint32_t>> items;  // (task, base row)
};

struct FlatStream {
  std::vector<BatchRef> refs;
  // ground truth: first batch index containing any data of task t (t>=1)
  std::vector<std::size_t> boundaries;
};

// Deterministic sequence of task datasets over an MNIST-style base:
// permuted tasks (fixed pixel permutations) or split tasks (digit
// pairs), with optional fuzzy transition ramps.
class TaskStream {
 public:
  static TaskStream make_permuted(LabeledDataset train_base,
                                  LabeledDataset test_base, std::size_t tasks,
                                  std::uint64_t seed, std::size_t batch_size,
                                  double val_fraction = 0.1);
  static TaskStream make_split(LabeledDataset train_base,
                               LabeledDataset test_base, std::uint64_t seed,
                               std::size_t batch_size,
                               double val_fraction = 0.1);

  // Linear old/new mixing over `ramp` batches at every task boundary.
  void set_fuzzy(std::size_t ramp);
  std::size_t fuzzy_ramp() const { return ramp_; }

  std::size_t task_count() const { return train_idx_.size(); }
  std::size_t batch_size() const { return batch_size_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t train_size(std::size_t task) const {
    return train_idx_[task].size();
  }

  // Pixel permutation of a task; empty means identity.
  const std::vector<std::uint32_t>& pixel_permutation(std::size_t task) const {
    return perms_[task];
  }

  // Shuffled batches for one supervised epoch; pure function of
  // (seed, task, epoch).
  std::vector<BatchRef> epoch_refs(std::size_t task, std::size_t epoch) const;

  // Label-free flat stream across all tasks, honoring the fuzzy ramp.
  FlatStream flat_stream(std::size_t epochs_per_task) const;

  Batch materialize(const BatchRef& ref) const;
  LabeledDataset val_set(std::size_t task) const;
  LabeledDataset test_set(std::size_t task) const;

 private:
  Tensor rows_for(const std::vector<std::pair<int, std::uint32_t>>& items,
                  const Tensor& base) const;

  LabeledDataset train_base_, test_base_;
  std::uint64_t seed_ = 0;
  std::size_t batch_size_ = 128;
  std::size_t ramp_ = 0;
  std::vector<std::vector<std::uint32_t>> train_idx_, val_idx_, test_idx_;
  std::vector<std::vector<std::uint32_t>> perms_;
};

}  // namespace relmap

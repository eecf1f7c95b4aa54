#pragma once

#include <string>
#include <vector>

#include "relmap/data.hpp"
#include "relmap/trainer_supervised.hpp"
#include "relmap/trainer_unsupervised.hpp"

namespace relmap {

// Full experiment configuration, CLI- and config-file-facing.
struct RunConfig {
  std::string experiment = "split-mnist";  // split-mnist | permuted-mnist
  std::string mode = "supervised";         // supervised | unsupervised | fuzzy
  std::size_t tasks = 5;                   // permuted-MNIST task count
  TrainConfig train;
  DetectorConfig detector;
  double tau = 0.95;
  double gaussian_coeff = 0.01;
  std::size_t ramp = 20;  // fuzzy transition length, batches
  std::size_t max_detections = 16;
  std::size_t seeds = 1;
  std::uint64_t base_seed = 0;
  std::string data_dir;  // empty: $RELMAP_DATA_DIR
  std::string out_dir = "runs";
  bool force = false;

  void validate() const;
  std::string canonical() const;  // stable key=value serialization
  std::string hash() const;       // FNV-1a over canonical()
};

// Flat key=value config file; '#' comments; unknown keys rejected.
RunConfig parse_config_file(const std::string& path, RunConfig base = {});
void apply_config_entry(RunConfig& config, const std::string& key,
                        const std::string& value);

std::string resolve_data_dir(const RunConfig& config);
LabeledDataset load_mnist_train(const std::string& dir);
LabeledDataset load_mnist_test(const std::string& dir);

TaskStream build_stream(const RunConfig& config, std::uint64_t seed);

struct SeedOutcome {
  std::string run_id;
  std::uint64_t seed = 0;
  double mean_accuracy = 0.0;
  std::vector<double> task_accuracy;
  std::vector<std::size_t> detections;   // unsupervised modes
  std::vector<std::size_t> boundaries;
  std::string record_path;
  std::string checkpoint_path;
};

// Runs one seed end to end: builds the stream, trains, writes the
// record, checkpoint and timing sidecar under out_dir/<run_id>/.
SeedOutcome run_single(const RunConfig& config, std::uint64_t seed);

// All seeds (base_seed + 0 .. seeds-1), sequentially.
std::vector<SeedOutcome> run_experiment(const RunConfig& config);

}  // namespace relmap

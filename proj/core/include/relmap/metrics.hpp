#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace relmap {

// Append-only metric record for one training run, persisted as JSON
// lines. Every event carries a monotone logical sequence number "seq";
// wall-clock timing lives outside the record so replays are
// byte-identical. Schema: docs/metrics.md.
class RunRecord {
 public:
  RunRecord() = default;
  // Opens `path` for appending; empty path keeps the record in memory only.
  explicit RunRecord(std::string path);

  static RunRecord load(const std::string& path);

  // Adds "seq" and appends; returns the sequence number.
  std::size_t append(nlohmann::json event);

  const std::vector<nlohmann::json>& events() const { return events_; }
  const std::string& path() const { return path_; }

  std::vector<nlohmann::json> find(const std::string& event_type) const;

 private:
  std::string path_;
  std::vector<nlohmann::json> events_;
};

// Unweighted mean of per-task test accuracies recorded after task
// `after_task` completed. Throws InputError when an evaluation is missing.
double average_accuracy(const RunRecord& record, std::size_t after_task);

// Mean and sample standard deviation.
std::pair<double, double> mean_sd(const std::vector<double>& values);

// Writes a CSV summary (one row per run/task) and SVG line charts
// (accuracy vs task, sparsity vs task) with the config hash embedded.
// Returns the written file paths.
std::vector<std::string> emit_report(const std::vector<RunRecord>& records,
                                     const std::string& out_dir);

}  // namespace relmap

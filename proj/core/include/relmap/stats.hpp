#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>

namespace relmap {

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
// freedom. Returns nullopt for degenerate samples (fewer than two
// points, or zero variance in both samples with equal means handled
// normally; zero variance in both with t undefined abstains).
std::optional<WelchResult> welch_t(std::span<const double> a,
                                   std::span<const double> b);

// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

// Two-sided p-value of Student's t with df degrees of freedom.
double student_t_pvalue(double t, double df);

struct DetectorConfig {
  std::size_t window = 20;       // batches per comparison window
  // Within-task novelty drifts in plateaus that reach p ~ 1e-5 with small
  // windows, while a genuine switch drives p far past 1e-8 within a
  // window of the boundary; the stricter threshold separates the two.
  double p_threshold = 1e-8;
  std::size_t dwell = 40;        // min batches between detections
  // Practical-significance guard: the current window's mean must exceed
  // the reference mean by at least this much, so zero-variance numerical
  // flukes cannot fire on their own.
  double min_rise = 0.1;
};

// Streaming task-switch detector: compares the mean novelty statistic of
// the most recent window against the window before it; fires when the
// current mean is higher and Welch's p drops below threshold.
class TaskSwitchDetector {
 public:
  explicit TaskSwitchDetector(DetectorConfig config) : config_(config) {}

  const DetectorConfig& config() const { return config_; }

  // Push one per-batch statistic; true means a task switch was detected
  // (windows and dwell reset).
  bool push(double stat);

  void reset();

  std::size_t batches_since_reset() const { return since_reset_; }
  double last_p() const { return last_p_; }

 private:
  DetectorConfig config_;
  std::deque<double> stats_;
  std::size_t since_reset_ = 0;
  double last_p_ = 1.0;
};

}  // namespace relmap

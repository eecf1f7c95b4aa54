#include "relmap/stats.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace relmap {

namespace {

double log_gamma(double x) { return std::lgamma(x); }

// Continued fraction for the incomplete beta function (Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = log_gamma(a + b) - log_gamma(a) - log_gamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_pvalue(double t, double df) {
  if (df <= 0.0) return 1.0;
  const double x = df / (df + t * t);
  return incomplete_beta(df / 2.0, 0.5, x);
}

std::optional<WelchResult> welch_t(std::span<const double> a,
                                   std::span<const double> b) {
  const std::size_t na = a.size(), nb = b.size();
  if (na < 2 || nb < 2) return std::nullopt;
  double ma = 0.0, mb = 0.0;
  for (double v : a) ma += v;
  for (double v : b) mb += v;
  ma /= static_cast<double>(na);
  mb /= static_cast<double>(nb);
  double va = 0.0, vb = 0.0;
  for (double v : a) va += (v - ma) * (v - ma);
  for (double v : b) vb += (v - mb) * (v - mb);
  va /= static_cast<double>(na - 1);  // sample variance
  vb /= static_cast<double>(nb - 1);
  if (va == 0.0 && vb == 0.0) return std::nullopt;
  const double sa = va / static_cast<double>(na);
  const double sb = vb / static_cast<double>(nb);
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  const double num = (sa + sb) * (sa + sb);
  const double den = sa * sa / static_cast<double>(na - 1) +
                     sb * sb / static_cast<double>(nb - 1);
  r.df = num / den;
  r.p = student_t_pvalue(r.t, r.df);
  return r;
}

bool TaskSwitchDetector::push(double stat) {
  ++since_reset_;
  stats_.push_back(stat);
  if (stats_.size() > 2 * config_.window) stats_.pop_front();
  last_p_ = 1.0;
  if (stats_.size() < 2 * config_.window) return false;
  if (since_reset_ < config_.dwell) return false;
  std::vector<double> ref(stats_.begin(), stats_.begin() + config_.window);
  std::vector<double> cur(stats_.begin() + config_.window, stats_.end());
  const auto result = welch_t(cur, ref);
  if (!result) return false;  // degenerate samples: abstain
  last_p_ = result->p;
  double mean_ref = 0.0, mean_cur = 0.0;
  for (double v : ref) mean_ref += v;
  for (double v : cur) mean_cur += v;
  mean_ref /= static_cast<double>(config_.window);
  mean_cur /= static_cast<double>(config_.window);
  if (result->p < config_.p_threshold &&
      mean_cur > mean_ref + config_.min_rise) {
    // keep last_p_ readable after the fire
    stats_.clear();
    since_reset_ = 0;
    return true;
  }
  return false;
}

void TaskSwitchDetector::reset() {
  stats_.clear();
  since_reset_ = 0;
  last_p_ = 1.0;
}

}  // namespace relmap

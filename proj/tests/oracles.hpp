#pragma once

// Independent reference computations used by the unit and acceptance tests.
// None of these call into the code paths they are used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace dwellgate::oracle {

inline double gaussian_density(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

// Ratio evaluated in log space, for inputs where densities underflow.
inline double bayes_ratio_posterior_log(double mu1, double mu0, double sigma, double prior1,
                                        double x) {
  const double la = -0.5 * std::pow((x - mu1) / sigma, 2) + std::log(prior1);
  const double lb = -0.5 * std::pow((x - mu0) / sigma, 2) + std::log(1.0 - prior1);
  const double m = std::max(la, lb);
  return std::exp(la - m) / (std::exp(la - m) + std::exp(lb - m));
}

// Bayes rule written out: p(x|1)P(1) / (p(x|1)P(1) + p(x|0)P(0)).
// Subnormal densities carry too few digits, so those go through log space.
inline double bayes_ratio_posterior(double mu1, double mu0, double sigma, double prior1,
                                    double log_dwell_s) {
  const double a = gaussian_density(log_dwell_s, mu1, sigma) * prior1;
  const double b = gaussian_density(log_dwell_s, mu0, sigma) * (1.0 - prior1);
  if (!std::isnormal(a) || !std::isnormal(b)) {
    return bayes_ratio_posterior_log(mu1, mu0, sigma, prior1, log_dwell_s);
  }
  return a / (a + b);
}

inline int linear_scan_label(std::int64_t t, std::span<const std::int64_t> conversions,
                             std::int64_t horizon, std::int64_t buffer) {
  for (auto c : conversions) {
    if (t - buffer <= c && c <= t + horizon) return 1;
  }
  return 0;
}

struct BatchStats {
  std::int64_t n1 = 0, n0 = 0;
  double sum1 = 0, sum0 = 0, sumsq1 = 0, sumsq0 = 0;
};

// Sums of log(dwell seconds) in one pass over (dwell_ms, label) pairs.
inline BatchStats batch_stats(std::span<const std::pair<std::int64_t, int>> obs) {
  BatchStats s;
  for (const auto& [d, y] : obs) {
    const double x = std::log(static_cast<double>(d) / 1000.0);
    if (y) {
      ++s.n1;
      s.sum1 += x;
      s.sumsq1 += x * x;
    } else {
      ++s.n0;
      s.sum0 += x;
      s.sumsq0 += x * x;
    }
  }
  return s;
}

inline bool rel_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Smallest |corr| value v such that at least (1 - target) N values are <= v.
inline double brute_force_epsilon(std::span<const double> corr, double target) {
  const double need = (1.0 - target) * static_cast<double>(corr.size()) - 1e-9;
  double best = INFINITY;
  for (double c : corr) {
    const double v = std::abs(c);
    std::size_t at_or_below = 0;
    for (double d : corr) at_or_below += std::abs(d) <= v;
    if (static_cast<double>(at_or_below) >= need && v < best) best = v;
  }
  return need <= 0 ? 0.0 : best;
}

// Direct log-loss over prior-entropy, no clipping shortcuts.
inline double normalized_entropy_direct(std::span<const int> y, std::span<const double> p) {
  double ce = 0.0, pos = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double q = std::clamp(p[i], 1e-6, 1.0 - 1e-6);
    ce += y[i] * std::log(q) + (1 - y[i]) * std::log(1.0 - q);
    pos += y[i];
  }
  const double n = static_cast<double>(y.size());
  const double ph = pos / n;
  return -(ce / n) / -(ph * std::log(ph) + (1 - ph) * std::log(1 - ph));
}

}  // namespace dwellgate::oracle

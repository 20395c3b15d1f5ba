#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dwellgate {

// Binary window label: 1 iff a conversion falls inside the (buffered) label
// window of an impression.
enum class WindowLabel : std::uint8_t { kNoConversion = 0, kConversion = 1 };

constexpr int as_int(WindowLabel label) { return static_cast<int>(label); }

// `conversions` must be sorted ascending. Throws ConfigError for horizon_ms <= 0.
WindowLabel label_impression(std::int64_t t_ms, std::span<const std::int64_t> conversions,
                             std::int64_t horizon_ms, std::int64_t buffer_ms);

// Streaming sufficient statistics of log-dwell (log-seconds), split by window
// label. Plain sums, so merging is exact in the counts and order-insensitive up
// to floating-point rounding in the sums.
struct UserStats {
  std::string user_id;
  std::int64_t n1 = 0;
  std::int64_t n0 = 0;
  double sum_logd_1 = 0.0;
  double sum_logd_0 = 0.0;
  double sumsq_logd_1 = 0.0;
  double sumsq_logd_0 = 0.0;
  std::int64_t horizon_s_ms = 300'000;

  void add(std::int64_t dwell_ms, WindowLabel label);
  // Throws ConfigError when users or horizons differ.
  void merge(const UserStats& other);

  bool operator==(const UserStats&) const = default;
};

// Natural log of dwell converted to seconds.
double log_dwell_seconds(std::int64_t dwell_ms);

// Returns a copy of `stats` with one more observation. Throws RangeError for dwell_ms <= 0.
UserStats update_stats(UserStats stats, std::int64_t dwell_ms, WindowLabel label);
UserStats merge_stats(UserStats a, const UserStats& b);

enum class CorrelationNormalization { kRaw, kStdNormalized };

inline constexpr std::int64_t kDefaultMinSamples = 20;

// Mean log-dwell near conversions minus mean log-dwell away from them.
// nullopt while either label has fewer than n_min samples. kStdNormalized
// divides by the pooled standard deviation (nullopt if it is zero).
std::optional<double> correlation(const UserStats& stats,
                                  std::int64_t n_min = kDefaultMinSamples,
                                  CorrelationNormalization norm = CorrelationNormalization::kRaw);

// Equal-variance Gaussian discriminant over log-dwell:
// P(C=1 | x) = sigmoid(w x + b).
struct DwellModel {
  double mu1 = 0.0;
  double mu0 = 0.0;
  double sigma_pooled = 1.0;
  double prior1 = 0.5;
  double w = 0.0;
  double b = 0.0;
};

// Builds the model from class means, shared standard deviation and prior.
// Throws RangeError unless sigma > 0 and prior1 in (0, 1).
DwellModel make_dwell_model(double mu1, double mu0, double sigma, double prior1);

// Pooled (Bessel-corrected) variance of log-dwell; nullopt when undefined.
std::optional<double> pooled_variance(const UserStats& stats);

// nullopt for cold-start (either label below n_min) or degenerate variance.
std::optional<DwellModel> fit_model(const UserStats& stats,
                                    std::int64_t n_min = kDefaultMinSamples);

double sigmoid(double z);
double posterior_log_dwell(const DwellModel& model, double log_dwell_s);
// Throws RangeError for dwell_ms <= 0.
double posterior(const DwellModel& model, std::int64_t dwell_ms);

// JSONL snapshot of UserStats, one user per line.
std::string serialize_stats(const UserStats& stats);
UserStats parse_stats(const std::string& line);
void write_stats(std::ostream& out, std::span<const UserStats> stats);
std::vector<UserStats> read_stats(std::istream& in);

}  // namespace dwellgate

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dwellgate/event_model.hpp"
#include "dwellgate/stats_engine.hpp"

namespace dwellgate {

enum class Regime { kPositive, kLow, kNegative };

std::string_view to_string(Regime regime);
std::optional<Regime> parse_regime(std::string_view name);

struct RegimeChange {
  std::int64_t start_ms = 0;
  Regime regime = Regime::kLow;
};

// mu1 - mu0 per regime, in log-seconds.
struct RegimeDeltas {
  double positive = 0.7;
  double low = 0.0;
  double negative = -0.7;

  double of(Regime r) const;
};

struct UserProfile {
  std::string user_id;
  std::vector<RegimeChange> regime_schedule{{0, Regime::kLow}};
  double mu0 = 2.0;
  RegimeDeltas delta;
  double sigma = 0.8;
  double conversion_rate = 3.0;   // per hour
  double impression_rate = 50.0;  // ad impressions per hour
  double organic_rate = 0.0;      // organic impressions per hour
  double new_page_rate = 0.0;     // new-page impressions per hour
  bool informative_boost_attrs = false;

  Regime regime_at(std::int64_t t_ms) const;
  // Throws RangeError on non-positive sigma or rates, or an unsorted schedule.
  void validate() const;
};

struct SimulationConfig {
  std::int64_t horizon_ms = 300'000;
  // Chance that each signal-bearing ad attribute reveals the window label.
  double signal_reveal_prob = 0.05;
  // Chance the informative boost attribute equals the window label.
  double boost_agreement = 0.85;
};

// Shares of users per regime; normalized internally.
struct RegimeMix {
  double positive = 1.0 / 3.0;
  double low = 1.0 / 3.0;
  double negative = 1.0 / 3.0;
};

// Defaults for generated users: every source active, low regime.
UserProfile default_prototype();

// Knobs for building a population; read from the --regimes file.
struct PopulationSpec {
  RegimeMix mix;
  // Fraction of non-low users whose regime flips sign at flip_at_ms.
  double flip_fraction = 0.0;
  std::optional<std::int64_t> flip_at_ms;  // defaults to half the duration
  UserProfile prototype = default_prototype();
};

PopulationSpec parse_population_spec(const std::string& yaml_text);
PopulationSpec load_population_spec(const std::string& path);

// Deterministic population: regimes are assigned in exact proportions and
// users with a non-low initial regime carry informative boost attributes.
std::vector<UserProfile> make_profiles(std::size_t n_users, const PopulationSpec& spec,
                                       std::int64_t duration_ms);

// Per-user seed derived from the run seed and the user id.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view user_id);

struct ImpressionSample {
  EventSource source = EventSource::kAdImpression;
  std::int64_t t_ms = 0;
  std::int64_t dwell_ms = 0;
  WindowLabel label = WindowLabel::kNoConversion;
  Regime regime = Regime::kLow;
};

struct UserSamples {
  std::vector<std::int64_t> conversions;
  std::vector<ImpressionSample> impressions;  // sorted by time
};

// Poisson conversions and impressions; log-dwell ~ Normal(mu0 + delta, sigma)
// when a conversion follows within the horizon, Normal(mu0, sigma) otherwise.
UserSamples sample_user(const UserProfile& profile, std::int64_t duration_ms,
                        std::int64_t horizon_ms, std::uint64_t seed);

struct TruthRecord {
  std::size_t line = 0;  // 0-based index into the event stream
  std::string user_id;
  EventSource source = EventSource::kAdImpression;
  WindowLabel true_label = WindowLabel::kNoConversion;
  Regime regime = Regime::kLow;
  std::int64_t clean_timestamp_ms = 0;
  std::int64_t delay_ms = 0;
  bool outlier = false;
};

struct SimulatedStream {
  std::vector<UserProfile> profiles;
  std::vector<Event> events;         // merged by timestamp
  std::vector<TruthRecord> truth;    // one per impression, in stream order
};

SimulatedStream generate(std::span<const UserProfile> profiles, std::int64_t duration_ms,
                         std::uint64_t seed, const SimulationConfig& config = {});

// Shifts impression timestamps forward by Uniform(0, delay_max_ms) and swaps
// an outlier_rate share of dwell values for 1-10 ms or 2-8 h draws. Event order
// and truth indices are preserved.
SimulatedStream inject_logging_artifacts(SimulatedStream stream, std::int64_t delay_max_ms,
                                         double outlier_rate, std::uint64_t seed);

// Ground-truth sidecar: one profile line per user, then one impression line
// per truth record.
void write_truth(std::ostream& out, const SimulatedStream& stream);
std::vector<TruthRecord> read_truth(std::istream& in);

}  // namespace dwellgate

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dwellgate/stats_engine.hpp"

namespace dwellgate {

enum class Segment { kActive, kPassive, kUnknown };

std::string_view to_string(Segment segment);
std::optional<Segment> parse_segment(std::string_view name);

// Cold-start users are gated like passive users.
constexpr Segment gating_segment(Segment s) {
  return s == Segment::kUnknown ? Segment::kPassive : s;
}

struct SegmentAssignment {
  std::string user_id;
  std::int64_t epoch = 0;
  Segment segment = Segment::kUnknown;
  std::optional<double> corr_value;

  bool operator==(const SegmentAssignment&) const = default;
};

struct EpochCalibration {
  std::int64_t epoch = 0;
  double epsilon = 0.0;  // +inf for an empty population
  double target_active_fraction = 2.0 / 3.0;
  double achieved_active_fraction = 0.0;
  std::int64_t population_size = 0;
};

// epsilon is the (1 - target) quantile of |corr|; values equal to epsilon are
// passive. Throws RangeError unless target lies in (0, 1).
EpochCalibration calibrate_epsilon(std::span<const double> corr_values,
                                   double target_active_fraction);

Segment assign_segment(std::optional<double> corr_value, double epsilon);

struct SegmenterOptions {
  double target_active_fraction = 2.0 / 3.0;
  std::int64_t n_min = kDefaultMinSamples;
  CorrelationNormalization normalization = CorrelationNormalization::kRaw;
  // Skips calibration and uses this threshold directly.
  std::optional<double> fixed_epsilon;
};

struct EpochResult {
  EpochCalibration calibration;
  std::vector<SegmentAssignment> assignments;  // same order as the snapshot
};

EpochResult run_epoch(std::span<const UserStats> snapshot, const SegmenterOptions& options,
                      std::int64_t epoch);
inline EpochResult run_epoch(std::span<const UserStats> snapshot, double target_active_fraction,
                             std::int64_t epoch) {
  SegmenterOptions opts;
  opts.target_active_fraction = target_active_fraction;
  return run_epoch(snapshot, opts, epoch);
}

// Read-only lookup over published assignments, keyed by (epoch, user).
class SegmentTable {
 public:
  SegmentTable() = default;
  explicit SegmentTable(std::span<const SegmentAssignment> assignments);

  void insert(const SegmentAssignment& a);
  // kUnknown for users or epochs without an assignment.
  Segment lookup(std::int64_t epoch, const std::string& user_id) const;
  std::size_t size() const { return table_.size(); }
  std::vector<SegmentAssignment> assignments() const;

 private:
  std::map<std::pair<std::int64_t, std::string>, SegmentAssignment> table_;
};

std::string serialize_assignment(const SegmentAssignment& a);
SegmentAssignment parse_assignment(const std::string& line);
void write_assignments(std::ostream& out, std::span<const SegmentAssignment> assignments);
std::vector<SegmentAssignment> read_assignments(std::istream& in);

std::string serialize_calibration(const EpochCalibration& c);

}  // namespace dwellgate

#include "dwellgate/segmenter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "dwellgate/errors.hpp"
#include "json.hpp"

namespace dwellgate {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {
constexpr std::array<std::string_view, 3> kSegmentNames = {"active", "passive", "unknown"};
}

std::string_view to_string(Segment segment) {
  return kSegmentNames[static_cast<std::size_t>(segment)];
}

std::optional<Segment> parse_segment(std::string_view name) {
  for (std::size_t i = 0; i < kSegmentNames.size(); ++i) {
    if (kSegmentNames[i] == name) return static_cast<Segment>(i);
  }
  return std::nullopt;
}

EpochCalibration calibrate_epsilon(std::span<const double> corr_values,
                                   double target_active_fraction) {
  if (!(target_active_fraction > 0.0 && target_active_fraction < 1.0)) {
    throw RangeError("target active fraction must lie in (0, 1)");
  }
  EpochCalibration cal;
  cal.target_active_fraction = target_active_fraction;
  cal.population_size = static_cast<std::int64_t>(corr_values.size());
  if (corr_values.empty()) {
    cal.epsilon = std::numeric_limits<double>::infinity();
    cal.achieved_active_fraction = 0.0;
    return cal;
  }

  std::vector<double> mags;
  mags.reserve(corr_values.size());
  for (double c : corr_values) mags.push_back(std::abs(c));
  std::sort(mags.begin(), mags.end());

  // Number of users that should sit at or below epsilon. The small slack keeps
  // fractions like 1 - 2/3 from rounding up past an exact integer.
  const double n = static_cast<double>(mags.size());
  const auto passive =
      static_cast<std::size_t>(std::ceil((1.0 - target_active_fraction) * n - 1e-9));
  cal.epsilon = passive == 0 ? 0.0 : mags[passive - 1];

  const auto active = static_cast<std::size_t>(
      mags.end() - std::upper_bound(mags.begin(), mags.end(), cal.epsilon));
  cal.achieved_active_fraction = static_cast<double>(active) / n;
  return cal;
}

Segment assign_segment(std::optional<double> corr_value, double epsilon) {
  if (!corr_value) return Segment::kUnknown;
  return std::abs(*corr_value) > epsilon ? Segment::kActive : Segment::kPassive;
}

EpochResult run_epoch(std::span<const UserStats> snapshot, const SegmenterOptions& options,
                      std::int64_t epoch) {
  std::vector<std::optional<double>> corr;
  corr.reserve(snapshot.size());
  std::vector<double> defined;
  for (const auto& s : snapshot) {
    corr.push_back(correlation(s, options.n_min, options.normalization));
    if (corr.back()) defined.push_back(*corr.back());
  }

  EpochResult result;
  if (options.fixed_epsilon) {
    if (*options.fixed_epsilon < 0.0) throw RangeError("epsilon must be non-negative");
    auto& cal = result.calibration;
    cal.epsilon = *options.fixed_epsilon;
    cal.target_active_fraction = options.target_active_fraction;
    cal.population_size = static_cast<std::int64_t>(defined.size());
    const auto active = std::count_if(defined.begin(), defined.end(), [&](double c) {
      return std::abs(c) > cal.epsilon;
    });
    cal.achieved_active_fraction =
        defined.empty() ? 0.0 : static_cast<double>(active) / static_cast<double>(defined.size());
  } else {
    result.calibration = calibrate_epsilon(defined, options.target_active_fraction);
  }
  result.calibration.epoch = epoch;

  result.assignments.reserve(snapshot.size());
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    result.assignments.push_back(
        {snapshot[i].user_id, epoch, assign_segment(corr[i], result.calibration.epsilon), corr[i]});
  }
  return result;
}

SegmentTable::SegmentTable(std::span<const SegmentAssignment> assignments) {
  for (const auto& a : assignments) insert(a);
}

void SegmentTable::insert(const SegmentAssignment& a) {
  table_.insert_or_assign({a.epoch, a.user_id}, a);
}

Segment SegmentTable::lookup(std::int64_t epoch, const std::string& user_id) const {
  auto it = table_.find({epoch, user_id});
  return it == table_.end() ? Segment::kUnknown : it->second.segment;
}

std::vector<SegmentAssignment> SegmentTable::assignments() const {
  std::vector<SegmentAssignment> out;
  out.reserve(table_.size());
  for (const auto& [_, a] : table_) out.push_back(a);
  return out;
}

std::string serialize_assignment(const SegmentAssignment& a) {
  ordered_json out;
  out["user_id"] = a.user_id;
  out["epoch"] = a.epoch;
  out["segment"] = std::string(to_string(a.segment));
  out["corr_value"] = a.corr_value ? ordered_json(*a.corr_value) : ordered_json(nullptr);
  return out.dump();
}

SegmentAssignment parse_assignment(const std::string& line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  try {
    SegmentAssignment a;
    a.user_id = obj.at("user_id").get<std::string>();
    a.epoch = obj.at("epoch").get<std::int64_t>();
    auto seg = parse_segment(obj.at("segment").get<std::string>());
    if (!seg) throw SchemaError("unknown segment " + obj.at("segment").get<std::string>());
    a.segment = *seg;
    const auto& c = obj.at("corr_value");
    if (!c.is_null()) a.corr_value = c.get<double>();
    return a;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad segment record: ") + e.what());
  }
}

void write_assignments(std::ostream& out, std::span<const SegmentAssignment> assignments) {
  for (const auto& a : assignments) out << serialize_assignment(a) << '\n';
}

std::vector<SegmentAssignment> read_assignments(std::istream& in) {
  std::vector<SegmentAssignment> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_assignment(line));
    } catch (const Error& e) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string serialize_calibration(const EpochCalibration& c) {
  ordered_json out;
  out["epoch"] = c.epoch;
  out["epsilon"] = std::isinf(c.epsilon) ? ordered_json("inf") : ordered_json(c.epsilon);
  out["target_active_fraction"] = c.target_active_fraction;
  out["achieved_active_fraction"] = c.achieved_active_fraction;
  out["population_size"] = c.population_size;
  return out.dump();
}

}  // namespace dwellgate

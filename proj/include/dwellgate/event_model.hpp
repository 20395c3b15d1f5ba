#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dwellgate {

enum class EventSource {
  kOrganicImpression,
  kAdImpression,
  kNewPageImpression,
  kConversion,
};

inline constexpr std::array<EventSource, 4> kAllSources = {
    EventSource::kOrganicImpression, EventSource::kAdImpression,
    EventSource::kNewPageImpression, EventSource::kConversion};

std::string_view to_string(EventSource source);
std::optional<EventSource> parse_source(std::string_view name);

constexpr bool is_impression(EventSource source) {
  return source != EventSource::kConversion;
}

using AttributeValue = std::variant<std::int64_t, double, std::string>;
using AttributeMap = std::map<std::string, AttributeValue>;

// Canonical text form of an attribute value, used for feature hashing.
std::string attribute_text(const AttributeValue& value);

// One timestamped event-based-feature record.
//
// Impressions carry dwell_ms and no conversion_kind; conversions the reverse.
// extended_attributes holds optional boost candidates that the model never
// sees unless a gate policy admits them.
struct Event {
  std::string user_id;
  EventSource source = EventSource::kAdImpression;
  std::int64_t timestamp_ms = 0;
  std::optional<std::int64_t> dwell_ms;
  AttributeMap attributes;
  AttributeMap extended_attributes;
  std::optional<std::string> conversion_kind;

  bool operator==(const Event&) const = default;
};

struct IngestStats {
  std::size_t lines = 0;
  std::size_t events = 0;
  std::size_t blank_lines = 0;
  // Unknown top-level fields are ignored and counted here.
  std::size_t unknown_fields = 0;
};

// Parses one JSONL record. Throws ParseError, SchemaError or RangeError.
Event parse_event(std::string_view line, IngestStats* stats = nullptr);

// Single-line JSON text (no trailing newline). Field order is fixed so the
// output is byte-stable.
std::string serialize_event(const Event& event);
// Length of serialize_event without building the string for the caller.
std::size_t serialized_size(const Event& event, bool with_extended = true);

// Reads a whole JSONL stream; errors are prefixed with the 1-based line number.
std::vector<Event> read_events(std::istream& in, IngestStats* stats = nullptr);
std::vector<Event> read_events_file(const std::string& path, IngestStats* stats = nullptr);
void write_events(std::ostream& out, std::span<const Event> events);

struct DwellBounds {
  std::int64_t min_ms = 250;
  std::int64_t max_ms = 1'800'000;
};

// Drops impressions whose dwell lies outside [min_dwell_ms, max_dwell_ms];
// conversions pass unchanged. Order is preserved.
std::vector<Event> denoise_dwell(std::span<const Event> events, std::int64_t min_dwell_ms,
                                 std::int64_t max_dwell_ms);
inline std::vector<Event> denoise_dwell(std::span<const Event> events, DwellBounds bounds) {
  return denoise_dwell(events, bounds.min_ms, bounds.max_ms);
}
bool within_bounds(const Event& event, DwellBounds bounds);

// Closed interval [lo, hi] in milliseconds.
struct LabelInterval {
  std::int64_t lo = 0;
  std::int64_t hi = 0;

  bool contains(std::int64_t t) const { return lo <= t && t <= hi; }
  bool operator==(const LabelInterval&) const = default;
};

// Label window of an impression logged at t_ms, widened backwards by
// buffer_ms to absorb impressions logged after their conversion.
LabelInterval adjust_label_window(std::int64_t t_ms, std::int64_t horizon_ms,
                                  std::int64_t buffer_ms);

struct UserTimeline {
  std::string user_id;
  std::vector<Event> impressions;         // sorted by timestamp, ingest order on ties
  std::vector<std::int64_t> conversions;  // sorted ascending

  // Ad impressions only; these drive the dwell statistics.
  std::vector<const Event*> ad_impressions() const;
};

std::map<std::string, UserTimeline> build_timelines(std::span<const Event> events);

}  // namespace dwellgate

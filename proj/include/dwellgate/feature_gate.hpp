#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "dwellgate/event_model.hpp"
#include "dwellgate/segmenter.hpp"

namespace dwellgate {

// Attribute names per source: `base` is what events carry by default,
// `extended` the boost candidates they may carry in extended_attributes.
struct AttributeSchema {
  std::map<EventSource, std::vector<std::string>> base;
  std::map<EventSource, std::vector<std::string>> extended;

  // attr_01..attr_11 for ad impressions plus per-source boost attributes.
  static AttributeSchema defaults();

  bool has_base(EventSource source, const std::string& name) const;
  bool has_extended(EventSource source, const std::string& name) const;
  std::size_t base_count(EventSource source) const;
};

// Ad-impression attributes the simulator fills with noise.
std::vector<std::string> default_noise_attributes();

using SegmentSourceKey = std::pair<Segment, EventSource>;

struct GatePolicy {
  std::map<SegmentSourceKey, std::set<std::string>> removals;
  std::map<SegmentSourceKey, std::set<std::string>> boosts;
  // Segments without an entry pass every source.
  std::map<Segment, std::set<EventSource>> source_allowlist;

  bool empty() const;
  bool allows(Segment segment, EventSource source) const;
  const std::set<std::string>& removed(Segment segment, EventSource source) const;
  const std::set<std::string>& boosted(Segment segment, EventSource source) const;

  // Throws ConfigError naming the offending attribute.
  void validate(const AttributeSchema& schema) const;
};

// YAML (or JSON) text with keys removals / boosts / source_allowlist; segment
// keys are "active" or "passive". Validated against the schema on load.
GatePolicy parse_policy(const std::string& text, const AttributeSchema& schema);
GatePolicy load_policy_file(const std::string& path, const AttributeSchema& schema);

struct GatedEvent {
  Event event;  // extended_attributes always stripped
  Segment segment = Segment::kPassive;
};

struct Dropped {
  Segment segment = Segment::kPassive;
};

using GateOutcome = std::variant<GatedEvent, Dropped>;

// Unknown segments are gated as passive. Conversions are labels rather than
// features and always pass through.
GateOutcome gate(const Event& event, Segment segment, const GatePolicy& policy);

std::string serialize_gated(const GatedEvent& gated);

// Serialized length of the model-visible part of an event (no extended attrs).
std::size_t model_bytes(const Event& event);

struct CostCounters {
  std::int64_t events_in = 0;
  std::int64_t events_out = 0;
  std::int64_t attributes_in = 0;
  std::int64_t attributes_out = 0;
  std::int64_t bytes_in = 0;
  std::int64_t bytes_out = 0;

  CostCounters& operator+=(const CostCounters& o);
  bool operator==(const CostCounters&) const = default;
};

class CostLedger {
 public:
  void account(const Event& before, const GateOutcome& after);
  void merge(const CostLedger& other);

  const std::map<SegmentSourceKey, CostCounters>& entries() const { return entries_; }
  CostCounters total() const;
  CostCounters total_for(EventSource source) const;
  CostCounters total_for(Segment segment) const;

  // JSON object with per-(segment, source) counters and totals.
  std::string summary_json() const;

 private:
  std::map<SegmentSourceKey, CostCounters> entries_;
};

CostLedger account(CostLedger ledger, const Event& before, const GateOutcome& after);

// Traffic share per gating segment (active/passive); should sum to 1.
struct SegmentMix {
  double active = 0.0;
  double passive = 0.0;
};

// Analytic fraction of `source` attribute volume removed by the policy for
// events carrying exactly the schema's base attributes (and every boost
// candidate). Negative when boosts add more than removals drop.
double expected_reduction(const GatePolicy& policy, SegmentMix mix, const AttributeSchema& schema,
                          EventSource source);

}  // namespace dwellgate

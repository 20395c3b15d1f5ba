#include "dwellgate/feature_gate.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "dwellgate/errors.hpp"
#include "json.hpp"

namespace dwellgate {

using ordered_json = nlohmann::ordered_json;

AttributeSchema AttributeSchema::defaults() {
  AttributeSchema s;
  auto& ad = s.base[EventSource::kAdImpression];
  for (int i = 1; i <= 11; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "attr_%02d", i);
    ad.emplace_back(name);
  }
  s.base[EventSource::kOrganicImpression] = {"content_id", "media_type", "position"};
  s.base[EventSource::kNewPageImpression] = {"semantic_ids", "media_type"};
  s.base[EventSource::kConversion] = {};
  s.extended[EventSource::kAdImpression] = {"boost_ad_01"};
  s.extended[EventSource::kOrganicImpression] = {"boost_organic_01"};
  s.extended[EventSource::kNewPageImpression] = {"boost_new_page_01"};
  s.extended[EventSource::kConversion] = {};
  return s;
}

namespace {

bool contains(const std::map<EventSource, std::vector<std::string>>& m, EventSource source,
              const std::string& name) {
  auto it = m.find(source);
  if (it == m.end()) return false;
  return std::find(it->second.begin(), it->second.end(), name) != it->second.end();
}

const std::set<std::string>& empty_set() {
  static const std::set<std::string> kEmpty;
  return kEmpty;
}

}  // namespace

bool AttributeSchema::has_base(EventSource source, const std::string& name) const {
  return contains(base, source, name);
}

bool AttributeSchema::has_extended(EventSource source, const std::string& name) const {
  return contains(extended, source, name);
}

std::size_t AttributeSchema::base_count(EventSource source) const {
  auto it = base.find(source);
  return it == base.end() ? 0 : it->second.size();
}

std::vector<std::string> default_noise_attributes() {
  return {"attr_08", "attr_09", "attr_10", "attr_11"};
}

bool GatePolicy::empty() const {
  auto all_empty = [](const auto& m) {
    return std::all_of(m.begin(), m.end(), [](const auto& kv) { return kv.second.empty(); });
  };
  return all_empty(removals) && all_empty(boosts) && source_allowlist.empty();
}

bool GatePolicy::allows(Segment segment, EventSource source) const {
  auto it = source_allowlist.find(gating_segment(segment));
  if (it == source_allowlist.end()) return true;
  return it->second.count(source) > 0;
}

const std::set<std::string>& GatePolicy::removed(Segment segment, EventSource source) const {
  auto it = removals.find({gating_segment(segment), source});
  return it == removals.end() ? empty_set() : it->second;
}

const std::set<std::string>& GatePolicy::boosted(Segment segment, EventSource source) const {
  auto it = boosts.find({gating_segment(segment), source});
  return it == boosts.end() ? empty_set() : it->second;
}

void GatePolicy::validate(const AttributeSchema& schema) const {
  for (const auto& [key, names] : removals) {
    for (const auto& name : names) {
      if (!schema.has_base(key.second, name)) {
        throw ConfigError("policy removes unknown attribute '" + name + "' for source " +
                          std::string(to_string(key.second)));
      }
    }
  }
  for (const auto& [key, names] : boosts) {
    for (const auto& name : names) {
      if (!schema.has_extended(key.second, name)) {
        throw ConfigError("policy boosts unknown attribute '" + name + "' for source " +
                          std::string(to_string(key.second)));
      }
      if (removed(key.first, key.second).count(name)) {
        throw ConfigError("attribute '" + name + "' is both removed and boosted");
      }
    }
  }
}

namespace {

std::string at_line(const YAML::Node& node) {
  return "line " + std::to_string(node.Mark().line + 1) + ": ";
}

Segment policy_segment(const YAML::Node& key) {
  auto seg = parse_segment(key.as<std::string>());
  if (!seg || *seg == Segment::kUnknown) {
    throw ConfigError(at_line(key) + "policy segment must be 'active' or 'passive', got '" +
                      key.as<std::string>() + "'");
  }
  return *seg;
}

EventSource policy_source(const YAML::Node& node) {
  auto src = parse_source(node.as<std::string>());
  if (!src) throw ConfigError(at_line(node) + "unknown source '" + node.as<std::string>() + "'");
  return *src;
}

void parse_attribute_map(const YAML::Node& node, const char* what,
                         std::map<SegmentSourceKey, std::set<std::string>>& out) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError(at_line(node) + what + " must be a map of segments");
  for (const auto& seg_kv : node) {
    const Segment seg = policy_segment(seg_kv.first);
    if (!seg_kv.second.IsMap()) {
      throw ConfigError(at_line(seg_kv.second) + what + " entry must map sources to lists");
    }
    for (const auto& src_kv : seg_kv.second) {
      const EventSource src = policy_source(src_kv.first);
      if (!src_kv.second.IsSequence()) {
        throw ConfigError(at_line(src_kv.second) + "attribute list expected");
      }
      auto& names = out[{seg, src}];
      for (const auto& name : src_kv.second) names.insert(name.as<std::string>());
    }
  }
}

}  // namespace

GatePolicy parse_policy(const std::string& text, const AttributeSchema& schema) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(std::string("policy: ") + e.what());
  }
  GatePolicy policy;
  if (root.IsNull()) return policy;
  if (!root.IsMap()) throw ConfigError("policy must be a map");
  try {
    for (const auto& kv : root) {
      const auto key = kv.first.as<std::string>();
      if (key != "removals" && key != "boosts" && key != "source_allowlist") {
        throw ConfigError(at_line(kv.first) + "unknown policy key '" + key + "'");
      }
    }
    parse_attribute_map(root["removals"], "removals", policy.removals);
    parse_attribute_map(root["boosts"], "boosts", policy.boosts);
    if (const auto allow = root["source_allowlist"]) {
      if (!allow.IsMap()) throw ConfigError(at_line(allow) + "source_allowlist must be a map");
      for (const auto& kv : allow) {
        const Segment seg = policy_segment(kv.first);
        if (!kv.second.IsSequence()) throw ConfigError(at_line(kv.second) + "source list expected");
        auto& sources = policy.source_allowlist[seg];
        for (const auto& s : kv.second) sources.insert(policy_source(s));
      }
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("policy: ") + e.what());
  }
  policy.validate(schema);
  return policy;
}

GatePolicy load_policy_file(const std::string& path, const AttributeSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open policy file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_policy(buf.str(), schema);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

GateOutcome gate(const Event& event, Segment segment, const GatePolicy& policy) {
  const Segment seg = gating_segment(segment);
  if (is_impression(event.source) && !policy.allows(seg, event.source)) return Dropped{seg};
  GatedEvent out;
  out.segment = seg;
  out.event.user_id = event.user_id;
  out.event.source = event.source;
  out.event.timestamp_ms = event.timestamp_ms;
  out.event.dwell_ms = event.dwell_ms;
  out.event.attributes = event.attributes;
  out.event.conversion_kind = event.conversion_kind;
  if (!is_impression(event.source)) return out;

  for (const auto& name : policy.removed(seg, event.source)) out.event.attributes.erase(name);
  for (const auto& name : policy.boosted(seg, event.source)) {
    auto it = event.extended_attributes.find(name);
    if (it != event.extended_attributes.end()) out.event.attributes.insert_or_assign(name, it->second);
  }
  return out;
}

std::string serialize_gated(const GatedEvent& gated) {
  std::string text = serialize_event(gated.event);
  text.pop_back();
  text += ",\"segment\":\"";
  text += to_string(gated.segment);
  text += "\"}";
  return text;
}

std::size_t model_bytes(const Event& event) {
  return serialized_size(event, false) + 1;
}

CostCounters& CostCounters::operator+=(const CostCounters& o) {
  events_in += o.events_in;
  events_out += o.events_out;
  attributes_in += o.attributes_in;
  attributes_out += o.attributes_out;
  bytes_in += o.bytes_in;
  bytes_out += o.bytes_out;
  return *this;
}

void CostLedger::account(const Event& before, const GateOutcome& after) {
  const Segment seg = std::visit([](const auto& o) { return o.segment; }, after);
  auto& c = entries_[{seg, before.source}];
  ++c.events_in;
  c.attributes_in += static_cast<std::int64_t>(before.attributes.size());
  const auto bytes = static_cast<std::int64_t>(model_bytes(before));
  c.bytes_in += bytes;
  if (const auto* g = std::get_if<GatedEvent>(&after)) {
    ++c.events_out;
    c.attributes_out += static_cast<std::int64_t>(g->event.attributes.size());
    const bool untouched = g->event.attributes == before.attributes && g->event.user_id == before.user_id &&
                           g->event.timestamp_ms == before.timestamp_ms;
    c.bytes_out += untouched ? bytes : static_cast<std::int64_t>(model_bytes(g->event));
  }
}

void CostLedger::merge(const CostLedger& other) {
  for (const auto& [key, c] : other.entries_) entries_[key] += c;
}

CostCounters CostLedger::total() const {
  CostCounters t;
  for (const auto& [_, c] : entries_) t += c;
  return t;
}

CostCounters CostLedger::total_for(EventSource source) const {
  CostCounters t;
  for (const auto& [key, c] : entries_) {
    if (key.second == source) t += c;
  }
  return t;
}

CostCounters CostLedger::total_for(Segment segment) const {
  CostCounters t;
  for (const auto& [key, c] : entries_) {
    if (key.first == gating_segment(segment)) t += c;
  }
  return t;
}

namespace {
ordered_json counters_json(const CostCounters& c) {
  ordered_json j;
  j["events_in"] = c.events_in;
  j["events_out"] = c.events_out;
  j["attributes_in"] = c.attributes_in;
  j["attributes_out"] = c.attributes_out;
  j["bytes_in"] = c.bytes_in;
  j["bytes_out"] = c.bytes_out;
  return j;
}
}  // namespace

std::string CostLedger::summary_json() const {
  ordered_json out;
  ordered_json rows = ordered_json::array();
  for (const auto& [key, c] : entries_) {
    ordered_json row;
    row["segment"] = std::string(to_string(key.first));
    row["source"] = std::string(to_string(key.second));
    row["counters"] = counters_json(c);
    rows.push_back(std::move(row));
  }
  out["entries"] = std::move(rows);
  ordered_json by_source = ordered_json::object();
  for (auto src : kAllSources) by_source[std::string(to_string(src))] = counters_json(total_for(src));
  out["by_source"] = std::move(by_source);
  out["total"] = counters_json(total());
  return out.dump(2);
}

CostLedger account(CostLedger ledger, const Event& before, const GateOutcome& after) {
  ledger.account(before, after);
  return ledger;
}

double expected_reduction(const GatePolicy& policy, SegmentMix mix, const AttributeSchema& schema,
                          EventSource source) {
  const auto in = static_cast<double>(schema.base_count(source));
  if (in == 0.0) return 0.0;
  auto kept = [&](Segment seg) {
    if (!policy.allows(seg, source)) return 0.0;
    double count = 0.0;
    for (const auto& name : schema.base.at(source)) {
      if (!policy.removed(seg, source).count(name)) count += 1.0;
    }
    return count + static_cast<double>(policy.boosted(seg, source).size());
  };
  const double out = mix.active * kept(Segment::kActive) + mix.passive * kept(Segment::kPassive);
  return 1.0 - out / in;
}

}  // namespace dwellgate

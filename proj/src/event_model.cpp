#include "dwellgate/event_model.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "dwellgate/errors.hpp"
#include "json.hpp"

namespace dwellgate {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 4> kSourceNames = {
    "organic_impression", "ad_impression", "new_page_impression", "conversion"};

std::int64_t required_int(const json& obj, const char* key) {
  const auto& v = obj.at(key);
  if (v.is_number_integer()) {
    if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
      throw RangeError(std::string(key) + " out of range");
    }
    return v.get<std::int64_t>();
  }
  throw SchemaError(std::string(key) + " must be an integer");
}

AttributeMap parse_attributes(const json& obj, const char* key) {
  AttributeMap out;
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return out;
  if (!it->is_object()) throw SchemaError(std::string(key) + " must be an object");
  for (const auto& [name, v] : it->items()) {
    if (v.is_string()) {
      out.emplace(name, v.get<std::string>());
    } else if (v.is_number_integer()) {
      if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
        throw RangeError("attribute " + name + " out of range");
      }
      out.emplace(name, v.get<std::int64_t>());
    } else if (v.is_number_float()) {
      out.emplace(name, v.get<double>());
    } else {
      throw SchemaError("attribute " + name + " must be a string, integer or float");
    }
  }
  return out;
}

// Hand-rolled writer producing the same bytes as nlohmann's dump(); building a
// json tree per event dominated gating cost.
void append_string(std::string& out, std::string_view s) {
  if (std::any_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) >= 0x80; })) {
    out += json(std::string(s)).dump();  // UTF-8 validation stays with the library
    return;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  out += '"';
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          out += "\\u00";
          out += kHex[(c >> 4) & 0xF];
          out += kHex[c & 0xF];
        } else {
          out += c;
        }
    }
  }
  out += '"';
}

void append_int(std::string& out, std::int64_t v) {
  char buf[24];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

void append_value(std::string& out, const AttributeValue& value) {
  if (const auto* s = std::get_if<std::string>(&value)) {
    append_string(out, *s);
  } else if (const auto* i = std::get_if<std::int64_t>(&value)) {
    append_int(out, *i);
  } else {
    out += json(std::get<double>(value)).dump();
  }
}

void append_attributes(std::string& out, const AttributeMap& attrs) {
  out += '{';
  bool first = true;
  for (const auto& [name, value] : attrs) {
    if (!first) out += ',';
    first = false;
    append_string(out, name);
    out += ':';
    append_value(out, value);
  }
  out += '}';
}

void write_event(std::string& out, const Event& event, bool with_extended) {
  out += "{\"user_id\":";
  append_string(out, event.user_id);
  out += ",\"source\":\"";
  out += to_string(event.source);
  out += "\",\"timestamp_ms\":";
  append_int(out, event.timestamp_ms);
  if (event.dwell_ms) {
    out += ",\"dwell_ms\":";
    append_int(out, *event.dwell_ms);
  }
  if (event.conversion_kind) {
    out += ",\"conversion_kind\":";
    append_string(out, *event.conversion_kind);
  }
  if (!event.attributes.empty()) {
    out += ",\"attributes\":";
    append_attributes(out, event.attributes);
  }
  if (with_extended && !event.extended_attributes.empty()) {
    out += ",\"extended_attributes\":";
    append_attributes(out, event.extended_attributes);
  }
  out += '}';
}

bool is_known_field(const std::string& key) {
  static constexpr std::array<std::string_view, 7> kFields = {
      "user_id", "source", "timestamp_ms", "dwell_ms", "attributes", "extended_attributes",
      "conversion_kind"};
  return std::find(kFields.begin(), kFields.end(), key) != kFields.end();
}

}  // namespace

std::string_view to_string(EventSource source) {
  return kSourceNames[static_cast<std::size_t>(source)];
}

std::optional<EventSource> parse_source(std::string_view name) {
  for (std::size_t i = 0; i < kSourceNames.size(); ++i) {
    if (kSourceNames[i] == name) return static_cast<EventSource>(i);
  }
  return std::nullopt;
}

std::string attribute_text(const AttributeValue& value) {
  if (const auto* s = std::get_if<std::string>(&value)) return *s;
  if (const auto* i = std::get_if<std::int64_t>(&value)) return std::to_string(*i);
  return json(std::get<double>(value)).dump();
}

Event parse_event(std::string_view line, IngestStats* stats) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw SchemaError("event must be a JSON object");

  for (const auto& field : {"user_id", "source", "timestamp_ms"}) {
    if (!obj.contains(field)) throw SchemaError(std::string("missing field ") + field);
  }

  Event ev;
  const auto& uid = obj.at("user_id");
  if (!uid.is_string() || uid.get_ref<const std::string&>().empty()) {
    throw SchemaError("user_id must be a non-empty string");
  }
  ev.user_id = uid.get<std::string>();

  const auto& src = obj.at("source");
  if (!src.is_string()) throw SchemaError("source must be a string");
  auto parsed = parse_source(src.get_ref<const std::string&>());
  if (!parsed) throw SchemaError("unknown source " + src.get<std::string>());
  ev.source = *parsed;

  ev.timestamp_ms = required_int(obj, "timestamp_ms");
  if (ev.timestamp_ms < 0) throw RangeError("timestamp_ms must be >= 0");

  const bool has_dwell = obj.contains("dwell_ms") && !obj.at("dwell_ms").is_null();
  const bool has_kind = obj.contains("conversion_kind") && !obj.at("conversion_kind").is_null();
  if (is_impression(ev.source)) {
    if (!has_dwell) throw SchemaError("dwell_ms required for impressions");
    if (has_kind) throw SchemaError("conversion_kind not allowed on impressions");
    ev.dwell_ms = required_int(obj, "dwell_ms");
    if (*ev.dwell_ms < 0) throw RangeError("dwell_ms must be >= 0");
  } else {
    if (has_dwell) throw SchemaError("dwell_ms not allowed on conversions");
    if (!has_kind) throw SchemaError("conversion_kind required for conversions");
    const auto& kind = obj.at("conversion_kind");
    if (!kind.is_string()) throw SchemaError("conversion_kind must be a string");
    ev.conversion_kind = kind.get<std::string>();
  }

  ev.attributes = parse_attributes(obj, "attributes");
  ev.extended_attributes = parse_attributes(obj, "extended_attributes");

  if (stats) {
    for (const auto& item : obj.items()) {
      if (!is_known_field(item.key())) ++stats->unknown_fields;
    }
    ++stats->events;
  }
  return ev;
}

std::string serialize_event(const Event& event) {
  std::string out;
  out.reserve(256);
  write_event(out, event, true);
  return out;
}

std::size_t serialized_size(const Event& event, bool with_extended) {
  thread_local std::string buf;
  buf.clear();
  write_event(buf, event, with_extended);
  return buf.size();
}

std::vector<Event> read_events(std::istream& in, IngestStats* stats) {
  std::vector<Event> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (stats) ++stats->lines;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      if (stats) ++stats->blank_lines;
      continue;
    }
    try {
      events.push_back(parse_event(line, stats));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const RangeError& e) {
      throw RangeError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return events;
}

std::vector<Event> read_events_file(const std::string& path, IngestStats* stats) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_events(in, stats);
}

void write_events(std::ostream& out, std::span<const Event> events) {
  for (const auto& ev : events) out << serialize_event(ev) << '\n';
}

bool within_bounds(const Event& event, DwellBounds bounds) {
  if (!is_impression(event.source)) return true;
  const auto d = event.dwell_ms.value_or(0);
  return bounds.min_ms <= d && d <= bounds.max_ms;
}

std::vector<Event> denoise_dwell(std::span<const Event> events, std::int64_t min_dwell_ms,
                                 std::int64_t max_dwell_ms) {
  const DwellBounds bounds{min_dwell_ms, max_dwell_ms};
  std::vector<Event> out;
  out.reserve(events.size());
  std::copy_if(events.begin(), events.end(), std::back_inserter(out),
               [&](const Event& ev) { return within_bounds(ev, bounds); });
  return out;
}

LabelInterval adjust_label_window(std::int64_t t_ms, std::int64_t horizon_ms,
                                  std::int64_t buffer_ms) {
  if (horizon_ms <= 0) throw ConfigError("forecast horizon must be positive");
  if (buffer_ms < 0) throw ConfigError("logging buffer must be non-negative");
  return {t_ms - buffer_ms, t_ms + horizon_ms};
}

std::vector<const Event*> UserTimeline::ad_impressions() const {
  std::vector<const Event*> out;
  for (const auto& ev : impressions) {
    if (ev.source == EventSource::kAdImpression) out.push_back(&ev);
  }
  return out;
}

std::map<std::string, UserTimeline> build_timelines(std::span<const Event> events) {
  std::map<std::string, UserTimeline> out;
  for (const auto& ev : events) {
    auto& tl = out[ev.user_id];
    tl.user_id = ev.user_id;
    if (is_impression(ev.source)) {
      tl.impressions.push_back(ev);
    } else {
      tl.conversions.push_back(ev.timestamp_ms);
    }
  }
  for (auto& [_, tl] : out) {
    std::stable_sort(tl.impressions.begin(), tl.impressions.end(),
                     [](const Event& a, const Event& b) { return a.timestamp_ms < b.timestamp_ms; });
    std::sort(tl.conversions.begin(), tl.conversions.end());
  }
  return out;
}

}  // namespace dwellgate

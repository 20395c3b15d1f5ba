#include <algorithm>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dwellgate/errors.hpp"
#include "dwellgate/event_model.hpp"
#include "json.hpp"

using namespace dwellgate;

namespace {

// Reference serialization through a json tree.
std::string tree_serialize(const Event& e) {
  auto attrs = [](const AttributeMap& m) {
    nlohmann::ordered_json o = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m) std::visit([&](const auto& x) { o[k] = x; }, v);
    return o;
  };
  nlohmann::ordered_json j;
  j["user_id"] = e.user_id;
  j["source"] = std::string(to_string(e.source));
  j["timestamp_ms"] = e.timestamp_ms;
  if (e.dwell_ms) j["dwell_ms"] = *e.dwell_ms;
  if (e.conversion_kind) j["conversion_kind"] = *e.conversion_kind;
  if (!e.attributes.empty()) j["attributes"] = attrs(e.attributes);
  if (!e.extended_attributes.empty()) j["extended_attributes"] = attrs(e.extended_attributes);
  return j.dump();
}

}  // namespace

TEST_CASE("parse_event maps impression fields") {
  const auto ev = parse_event(
      R"({"user_id":"u1","source":"ad_impression","timestamp_ms":1000,"dwell_ms":3000,"attributes":{"ad_id":"a9"}})");
  CHECK(ev.user_id == "u1");
  CHECK(ev.source == EventSource::kAdImpression);
  CHECK(ev.timestamp_ms == 1000);
  REQUIRE(ev.dwell_ms);
  CHECK(*ev.dwell_ms == 3000);
  CHECK(std::get<std::string>(ev.attributes.at("ad_id")) == "a9");
  CHECK_FALSE(ev.conversion_kind);
}

TEST_CASE("parse_event maps conversion fields") {
  const auto ev = parse_event(
      R"({"user_id":"u1","source":"conversion","timestamp_ms":5000,"conversion_kind":"click"})");
  CHECK(ev.source == EventSource::kConversion);
  CHECK(ev.conversion_kind == std::optional<std::string>("click"));
  CHECK_FALSE(ev.dwell_ms);
}

TEST_CASE("parse_event error paths") {
  CHECK_THROWS_AS(parse_event(R"({"user_id":"u1","source":"ad_impression","timestamp_ms":1000})"),
                  SchemaError);
  CHECK_THROWS_AS(parse_event(R"({"user_id":"u1","source":"ad_impression",)"), ParseError);
  CHECK_THROWS_AS(parse_event(R"({"user_id":"u1","source":"video_view","timestamp_ms":1,"dwell_ms":1})"),
                  SchemaError);
  CHECK_THROWS_AS(parse_event(R"({"user_id":"","source":"conversion","timestamp_ms":1,"conversion_kind":"x"})"),
                  SchemaError);
  CHECK_THROWS_AS(parse_event(R"({"user_id":"u","source":"conversion","timestamp_ms":1})"), SchemaError);
  CHECK_THROWS_AS(
      parse_event(R"({"user_id":"u","source":"conversion","timestamp_ms":1,"conversion_kind":"x","dwell_ms":3})"),
      SchemaError);
  CHECK_THROWS_AS(
      parse_event(R"({"user_id":"u","source":"ad_impression","timestamp_ms":1,"dwell_ms":3,"conversion_kind":"x"})"),
      SchemaError);
  CHECK_THROWS_AS(parse_event(R"({"user_id":"u","source":"ad_impression","timestamp_ms":-1,"dwell_ms":3})"),
                  RangeError);
  CHECK_THROWS_AS(parse_event(R"({"user_id":"u","source":"ad_impression","timestamp_ms":1,"dwell_ms":-3})"),
                  RangeError);
  CHECK_THROWS_AS(parse_event(R"({"user_id":"u","source":"ad_impression","timestamp_ms":1.5,"dwell_ms":3})"),
                  SchemaError);
  CHECK_THROWS_AS(
      parse_event(R"({"user_id":"u","source":"ad_impression","timestamp_ms":1,"dwell_ms":3,"attributes":{"a":[1]}})"),
      SchemaError);
  CHECK_THROWS_AS(parse_event("[1,2]"), SchemaError);
}

TEST_CASE("unknown fields are ignored and counted") {
  IngestStats stats;
  const auto ev = parse_event(
      R"({"user_id":"u1","source":"conversion","timestamp_ms":5,"conversion_kind":"like","x":1,"y":2})", &stats);
  CHECK(ev.user_id == "u1");
  CHECK(stats.unknown_fields == 2);
  CHECK(stats.events == 1);
}

TEST_CASE("read_events reports the failing line") {
  std::istringstream in(
      "{\"user_id\":\"u\",\"source\":\"conversion\",\"timestamp_ms\":1,\"conversion_kind\":\"x\"}\n"
      "\n"
      "{\"user_id\":\"u\",\"source\":\"ad_impression\",\"timestamp_ms\":1}\n");
  try {
    read_events(in);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("serialize/parse round trip holds for random events") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_int_distribution<std::int64_t> ts(0, 1'000'000'000);
  std::uniform_real_distribution<double> real(-1e6, 1e6);
  for (int i = 0; i < 500; ++i) {
    Event ev;
    ev.user_id = "user-" + std::to_string(rng() % 1000) + "\"quoted\"";
    ev.source = static_cast<EventSource>(kind(rng));
    ev.timestamp_ms = ts(rng);
    if (is_impression(ev.source)) {
      ev.dwell_ms = ts(rng) % 100000;
      ev.attributes["s"] = std::string("v") + std::to_string(rng() % 7);
      ev.attributes["i"] = static_cast<std::int64_t>(rng() % 100) - 50;
      ev.attributes["f"] = real(rng);
      ev.attributes["whole"] = 3.0;
      if (rng() % 2) ev.extended_attributes["boost"] = std::int64_t{1};
    } else {
      ev.conversion_kind = "click";
    }
    const auto text = serialize_event(ev);
    const auto back = parse_event(text);
    CHECK(back == ev);
    CHECK(serialize_event(back) == text);
  }
}

TEST_CASE("denoise_dwell keeps only in-bounds impressions") {
  auto imp = [](std::int64_t dwell) {
    Event e;
    e.user_id = "u";
    e.source = EventSource::kAdImpression;
    e.dwell_ms = dwell;
    return e;
  };
  const std::vector<Event> in = {imp(5), imp(300000), imp(7200000)};
  const auto out = denoise_dwell(in, 250, 1800000);
  REQUIRE(out.size() == 1);
  CHECK(*out[0].dwell_ms == 300000);

  CHECK(denoise_dwell(std::vector<Event>{}, 250, 1800000).empty());

  Event conv;
  conv.user_id = "u";
  conv.source = EventSource::kConversion;
  conv.conversion_kind = "click";
  const std::vector<Event> convs = {conv, conv};
  CHECK(denoise_dwell(convs, 250, 1800000) == convs);

  // bounds are inclusive
  const std::vector<Event> edges = {imp(250), imp(1800000), imp(249), imp(1800001)};
  CHECK(denoise_dwell(edges, 250, 1800000).size() == 2);
}

TEST_CASE("denoise_dwell is idempotent") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int64_t> dwell(0, 10'000'000);
  std::vector<Event> in;
  for (int i = 0; i < 2000; ++i) {
    Event e;
    e.user_id = "u";
    e.source = i % 5 == 0 ? EventSource::kConversion : EventSource::kAdImpression;
    if (e.source == EventSource::kConversion) {
      e.conversion_kind = "click";
    } else {
      e.dwell_ms = dwell(rng);
    }
    e.timestamp_ms = i;
    in.push_back(e);
  }
  const auto once = denoise_dwell(in, DwellBounds{});
  CHECK(denoise_dwell(once, DwellBounds{}) == once);
  CHECK(std::is_sorted(once.begin(), once.end(),
                       [](const Event& a, const Event& b) { return a.timestamp_ms < b.timestamp_ms; }));
}

TEST_CASE("adjust_label_window") {
  CHECK(adjust_label_window(100000, 300000, 60000) == LabelInterval{40000, 400000});
  CHECK(adjust_label_window(100000, 300000, 0) == LabelInterval{100000, 400000});
  CHECK(adjust_label_window(0, 1, 5) == LabelInterval{-5, 1});
  CHECK_THROWS_AS(adjust_label_window(0, 0, 5), ConfigError);
  CHECK_THROWS_AS(adjust_label_window(0, -3, 5), ConfigError);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t t = static_cast<std::int64_t>(rng() % 1'000'000'000);
    const std::int64_t s = 1 + static_cast<std::int64_t>(rng() % 10'000'000);
    CHECK(adjust_label_window(t, s, 0) == LabelInterval{t, t + s});
  }
}

TEST_CASE("build_timelines is independent of input order") {
  std::vector<Event> events;
  for (int i = 0; i < 300; ++i) {
    Event e;
    e.user_id = "u" + std::to_string(i % 4);
    e.timestamp_ms = i * 7;
    if (i % 6 == 0) {
      e.source = EventSource::kConversion;
      e.conversion_kind = "share";
    } else {
      e.source = i % 2 ? EventSource::kAdImpression : EventSource::kOrganicImpression;
      e.dwell_ms = 1000 + i;
    }
    events.push_back(e);
  }
  const auto sorted = build_timelines(events);
  auto shuffled = events;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(9));
  const auto again = build_timelines(shuffled);
  REQUIRE(sorted.size() == 4);
  for (const auto& [uid, tl] : sorted) {
    const auto& other = again.at(uid);
    CHECK(tl.impressions == other.impressions);
    CHECK(tl.conversions == other.conversions);
    for (const auto& imp : tl.impressions) CHECK(is_impression(imp.source));
  }
  CHECK(sorted.at("u1").ad_impressions().size() == sorted.at("u1").impressions.size());
}

TEST_CASE("serializer output matches a json tree dump byte for byte") {
  std::mt19937_64 rng(23);
  const std::vector<std::string> texts = {"plain", "q\"uote", "back\\slash", "tab\there", "nl\n",
                                          std::string("ctl\x01\x1f", 5), "caf\xc3\xa9", "\x7f", ""};
  std::uniform_real_distribution<double> real(-1e12, 1e12);
  for (int i = 0; i < 2000; ++i) {
    Event e;
    e.user_id = texts[rng() % (texts.size() - 1)] + std::to_string(i);
    e.source = static_cast<EventSource>(rng() % 4);
    e.timestamp_ms = static_cast<std::int64_t>(rng() >> 1) * (rng() % 2 ? 1 : -1);
    if (is_impression(e.source)) {
      e.dwell_ms = static_cast<std::int64_t>(rng() % 100000);
      for (int k = 0; k < static_cast<int>(rng() % 5); ++k) {
        const auto key = texts[rng() % texts.size()] + std::to_string(k);
        switch (rng() % 4) {
          case 0: e.attributes[key] = texts[rng() % texts.size()]; break;
          case 1: e.attributes[key] = static_cast<std::int64_t>(rng()); break;
          case 2: e.attributes[key] = real(rng); break;
          default: e.attributes[key] = 1e-300 * static_cast<double>(rng() % 7);
        }
      }
      if (rng() % 2) e.extended_attributes["boost"] = std::int64_t{1};
    } else {
      e.conversion_kind = texts[rng() % texts.size()];
    }
    const auto text = serialize_event(e);
    CHECK(text == tree_serialize(e));
    CHECK(serialized_size(e) == text.size());
    Event visible = e;
    visible.extended_attributes.clear();
    CHECK(serialized_size(e, false) == tree_serialize(visible).size());
  }
}

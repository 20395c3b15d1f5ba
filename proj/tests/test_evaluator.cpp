#include <cmath>
#include <random>

#include "doctest.h"
#include "dwellgate/errors.hpp"
#include "dwellgate/evaluator.hpp"
#include "oracles.hpp"

using namespace dwellgate;

namespace {

struct Toy {
  std::vector<Event> events;
  std::vector<std::optional<WindowLabel>> labels;
  std::vector<Segment> segments;
};

// Ad impressions where attr_01 leaks the label 60% of the time and
// boost_ad_01 always equals it.
Toy toy_stream(int n, std::uint64_t seed) {
  Toy t;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution y(0.3), leak(0.6), active(2.0 / 3.0);
  for (int i = 0; i < n; ++i) {
    const int label = y(rng);
    Event e;
    e.user_id = "u" + std::to_string(i % 50);
    e.source = EventSource::kAdImpression;
    e.timestamp_ms = i;
    e.dwell_ms = 3000;
    e.attributes["attr_01"] = std::string(leak(rng) ? (label ? "pos" : "neg") : "c0");
    e.attributes["attr_08"] = std::string("n") + std::to_string(rng() % 8);
    e.extended_attributes["boost_ad_01"] = std::int64_t{label};
    t.events.push_back(e);
    t.labels.push_back(label ? WindowLabel::kConversion : WindowLabel::kNoConversion);
    t.segments.push_back(active(rng) ? Segment::kActive : Segment::kPassive);
  }
  // a conversion row, which is never scored
  Event c;
  c.user_id = "u0";
  c.source = EventSource::kConversion;
  c.timestamp_ms = n;
  c.conversion_kind = "click";
  t.events.push_back(c);
  t.labels.push_back(std::nullopt);
  t.segments.push_back(Segment::kActive);
  return t;
}

EvaluationInput input_of(const Toy& t) { return {t.events, t.labels, t.segments}; }

}  // namespace

TEST_CASE("normalized entropy examples") {
  const std::vector<int> y = {1, 0};
  const std::vector<double> p = {0.9, 0.1};
  CHECK(*normalized_entropy(y, p) == doctest::Approx(0.1520).epsilon(1e-3));
  CHECK(*normalized_entropy(y, p) == doctest::Approx(oracle::normalized_entropy_direct(y, p)).epsilon(1e-12));

  const std::vector<int> zeros = {0, 0, 0};
  const std::vector<double> any = {0.2, 0.3, 0.4};
  CHECK_FALSE(normalized_entropy(zeros, any));

  CHECK_THROWS_AS(normalized_entropy(std::vector<int>{}, std::vector<double>{}), RangeError);
  CHECK_THROWS_AS(normalized_entropy(y, any), RangeError);

  // clipping keeps confident mistakes finite
  const std::vector<double> wrong = {0.0, 1.0};
  CHECK(std::isfinite(*normalized_entropy(y, wrong)));
}

TEST_CASE("constant prior predictor scores exactly one") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::bernoulli_distribution b(0.05 + 0.9 * (trial / 50.0));
    std::vector<int> y(200 + trial * 13);
    double pos = 0;
    for (auto& v : y) pos += (v = b(rng));
    if (pos == 0 || pos == static_cast<double>(y.size())) continue;
    const std::vector<double> p(y.size(), pos / static_cast<double>(y.size()));
    CHECK(std::abs(*normalized_entropy(y, p) - 1.0) < 1e-9);
  }
}

TEST_CASE("NE matches the direct oracle on random predictions") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> y(1000);
  std::vector<double> p(1000);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = u(rng) < 0.4;
    p[i] = u(rng);
  }
  CHECK(*normalized_entropy(y, p) == doctest::Approx(oracle::normalized_entropy_direct(y, p)).epsilon(1e-12));
}

TEST_CASE("online model learns a perfectly informative attribute") {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution b(0.3);
  std::vector<AttributeMap> x(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = b(rng);
    x[i]["signal"] = static_cast<std::int64_t>(y[i]);
  }
  const auto p = train_predict_online(x, y, {});
  CHECK(*normalized_entropy(y, p) < 0.3);
}

TEST_CASE("online model on pure noise stays near the prior") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution b(0.3);
  std::vector<AttributeMap> x(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = b(rng);
    x[i]["noise"] = std::string("n") + std::to_string(rng() % 8);
  }
  const auto p = train_predict_online(x, y, {});
  CHECK(std::abs(*normalized_entropy(y, p) - 1.0) < 0.05);
}

TEST_CASE("online model config checks") {
  OnlineModelConfig cfg;
  cfg.hash_dim = 1;
  CHECK_THROWS_AS(OnlineLogistic{cfg}, ConfigError);
  const OnlineLogistic m{OnlineModelConfig{}};
  AttributeMap a;
  a["k"] = std::string("v");
  CHECK(m.features(a) == m.features(a));
  CHECK(m.predict(m.features(a)) == 0.5);
}

TEST_CASE("identical arms give zero gain") {
  const auto toy = toy_stream(3000, 6);
  const GatePolicy none;
  const auto r = compare_policies(input_of(toy), none, none, {});
  CHECK(r.ne_gain == 0.0);
  CHECK(r.ne_baseline == r.ne_treatment);
  CHECK(r.attr_volume_ratio == 1.0);
  CHECK(r.ad_attr_volume_ratio == 1.0);
  CHECK(r.n_samples == 3000);
  CHECK(r.replicas == 3);
}

TEST_CASE("boosting a label copy helps, removing it does not") {
  const auto toy = toy_stream(6000, 7);
  GatePolicy boost;
  boost.boosts[{Segment::kActive, EventSource::kAdImpression}] = {"boost_ad_01"};
  const auto r = compare_policies(input_of(toy), GatePolicy{}, boost, {});
  CHECK(r.ne_gain > 0.05);
  CHECK(r.attr_volume_ratio > 1.0);
  CHECK(r.per_segment.at(Segment::kActive).ne_gain > r.per_segment.at(Segment::kPassive).ne_gain);

  GatePolicy strip;
  strip.removals[{Segment::kActive, EventSource::kAdImpression}] = {"attr_01"};
  strip.removals[{Segment::kPassive, EventSource::kAdImpression}] = {"attr_01"};
  const auto s = compare_policies(input_of(toy), GatePolicy{}, strip, {});
  CHECK(s.ne_gain < 0.0);
  CHECK(s.ad_attr_volume_ratio == doctest::Approx(0.5));
}

TEST_CASE("comparison is deterministic and its report round-trips") {
  const auto toy = toy_stream(2000, 8);
  GatePolicy strip;
  strip.removals[{Segment::kActive, EventSource::kAdImpression}] = {"attr_08"};
  const auto a = compare_policies(input_of(toy), GatePolicy{}, strip, {});
  const auto b = compare_policies(input_of(toy), GatePolicy{}, strip, {});
  CHECK(report_json(a) == report_json(b));
  CHECK_FALSE(a.curve.empty());

  const auto back = parse_report_json(report_json(a));
  CHECK(back.ne_gain == a.ne_gain);
  CHECK(back.n_samples == a.n_samples);
  CHECK(back.attr_volume_ratio == a.attr_volume_ratio);
  CHECK(back.per_segment.size() == a.per_segment.size());
}

#include "dwellgate/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dwellgate/errors.hpp"
#include "json.hpp"

namespace dwellgate {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

double clip(double p) { return std::clamp(p, kPredictionClip, 1.0 - kPredictionClip); }

std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Running log-loss sums so NE can be read off at any prefix.
struct LossAccumulator {
  double loss = 0.0;
  std::int64_t n = 0;
  std::int64_t positives = 0;

  void add(int y, double p) {
    p = clip(p);
    loss -= y ? std::log(p) : std::log(1.0 - p);
    ++n;
    positives += y;
  }

  std::optional<double> ne() const {
    if (n == 0 || positives == 0 || positives == n) return std::nullopt;
    const double prior = static_cast<double>(positives) / static_cast<double>(n);
    const double entropy = -(prior * std::log(prior) + (1.0 - prior) * std::log(1.0 - prior));
    return (loss / static_cast<double>(n)) / entropy;
  }
};

}  // namespace

std::optional<double> normalized_entropy(std::span<const int> labels,
                                         std::span<const double> predictions) {
  if (labels.size() != predictions.size()) throw RangeError("labels and predictions differ in length");
  if (labels.empty()) throw RangeError("normalized entropy needs at least one sample");
  LossAccumulator acc;
  for (std::size_t i = 0; i < labels.size(); ++i) acc.add(labels[i] != 0, predictions[i]);
  return acc.ne();
}

OnlineLogistic::OnlineLogistic(const OnlineModelConfig& config) : config_(config) {
  if (config.hash_dim < 2) throw ConfigError("hash_dim must be at least 2");
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  weights_.assign(config.hash_dim, 0.0);
  grad_sq_.assign(config.hash_dim, 0.0);
}

std::uint64_t OnlineLogistic::token_hash(const std::string& name, const AttributeValue& value) {
  std::uint64_t h = fnv1a(name);
  h = fnv1a("=", h);
  if (const auto* s = std::get_if<std::string>(&value)) return fnv1a(*s, h);
  return fnv1a(attribute_text(value), h);
}

std::uint32_t OnlineLogistic::slot(std::uint64_t token) const {
  const std::uint64_t h = mix64(token ^ (config_.hash_seed * 0x9e3779b97f4a7c15ULL));
  return static_cast<std::uint32_t>(1 + h % (config_.hash_dim - 1));
}

std::vector<std::uint32_t> OnlineLogistic::features(const AttributeMap& attributes) const {
  std::vector<std::uint32_t> out;
  out.reserve(attributes.size() + 1);
  out.push_back(0);  // bias slot
  for (const auto& [name, value] : attributes) out.push_back(slot(token_hash(name, value)));
  return out;
}

double OnlineLogistic::predict(std::span<const std::uint32_t> features) const {
  double z = 0.0;
  for (auto f : features) z += weights_[f];
  return sigmoid(z);
}

void OnlineLogistic::update(std::span<const std::uint32_t> features, int label) {
  const double g = predict(features) - static_cast<double>(label != 0);
  for (auto f : features) {
    grad_sq_[f] += g * g;
    weights_[f] -= config_.learning_rate * g / (std::sqrt(grad_sq_[f]) + 1e-6);
  }
}

std::vector<double> train_predict_online(std::span<const AttributeMap> examples,
                                         std::span<const int> labels,
                                         const OnlineModelConfig& config) {
  if (examples.size() != labels.size()) throw RangeError("examples and labels differ in length");
  OnlineLogistic model(config);
  std::vector<double> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto f = model.features(examples[i]);
    out.push_back(model.predict(f));
    model.update(f, labels[i]);
  }
  return out;
}

namespace {

// Token hashes of the scored examples, flattened; example i owns
// tokens[offsets[i], offsets[i + 1]).
struct ArmRun {
  CostLedger ledger;
  std::vector<std::uint64_t> tokens;
  std::vector<std::size_t> offsets{0};
  double seconds = 0.0;
};

ArmRun gate_arm(const EvaluationInput& in, const std::vector<std::size_t>& scored,
                const GatePolicy& policy) {
  ArmRun arm;
  arm.offsets.reserve(scored.size() + 1);
  std::size_t next = 0;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < in.events.size(); ++i) {
    const auto outcome = gate(in.events[i], in.segments[i], policy);
    arm.ledger.account(in.events[i], outcome);
    if (next < scored.size() && scored[next] == i) {
      // Dropped impressions are still served, with a bias-only feature vector.
      if (const auto* g = std::get_if<GatedEvent>(&outcome)) {
        for (const auto& [name, value] : g->event.attributes) {
          arm.tokens.push_back(OnlineLogistic::token_hash(name, value));
        }
      }
      arm.offsets.push_back(arm.tokens.size());
      ++next;
    }
  }
  arm.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return arm;
}

std::vector<double> train_predict_arm(const ArmRun& arm, std::span<const int> labels,
                                      const OnlineModelConfig& config) {
  OnlineLogistic model(config);
  std::vector<double> out;
  out.reserve(labels.size());
  std::vector<std::uint32_t> f;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    f.assign(1, 0);
    for (std::size_t k = arm.offsets[i]; k < arm.offsets[i + 1]; ++k) f.push_back(model.slot(arm.tokens[k]));
    out.push_back(model.predict(f));
    model.update(f, labels[i]);
  }
  return out;
}

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

NEReport compare_policies(const EvaluationInput& in, const GatePolicy& baseline,
                          const GatePolicy& treatment, const EvalConfig& config) {
  if (in.labels.size() != in.events.size() || in.segments.size() != in.events.size()) {
    throw RangeError("events, labels and segments must be aligned");
  }
  if (config.replicas < 1) throw ConfigError("replicas must be at least 1");

  std::vector<std::size_t> scored;
  std::vector<int> labels;
  std::vector<Segment> seg_of;
  for (std::size_t i = 0; i < in.events.size(); ++i) {
    if (in.events[i].source == EventSource::kAdImpression && in.labels[i]) {
      scored.push_back(i);
      labels.push_back(as_int(*in.labels[i]));
      seg_of.push_back(gating_segment(in.segments[i]));
    }
  }
  if (scored.empty()) throw RangeError("no labeled ad impressions to evaluate");

  const ArmRun arm_a = gate_arm(in, scored, baseline);
  const ArmRun arm_b = gate_arm(in, scored, treatment);

  NEReport report;
  report.replicas = config.replicas;
  report.baseline_ledger = arm_a.ledger;
  report.treatment_ledger = arm_b.ledger;
  report.n_samples = static_cast<std::int64_t>(labels.size());
  report.prior_p = static_cast<double>(std::count(labels.begin(), labels.end(), 1)) /
                   static_cast<double>(labels.size());
  const double secs = arm_a.seconds + arm_b.seconds;
  report.gate_events_per_sec = secs > 0 ? 2.0 * static_cast<double>(in.events.size()) / secs : 0.0;

  const auto ta = arm_a.ledger.total();
  const auto tb = arm_b.ledger.total();
  report.attr_volume_ratio = ratio(tb.attributes_out, ta.attributes_out);
  report.byte_volume_ratio = ratio(tb.bytes_out, ta.bytes_out);
  report.ad_attr_volume_ratio =
      ratio(arm_b.ledger.total_for(EventSource::kAdImpression).attributes_out,
            arm_a.ledger.total_for(EventSource::kAdImpression).attributes_out);

  const std::array<Segment, 2> segs = {Segment::kActive, Segment::kPassive};
  std::map<Segment, std::pair<double, double>> seg_ne_sum;
  std::map<Segment, int> seg_ne_count;
  double ne_a_sum = 0.0;
  double ne_b_sum = 0.0;

  const std::size_t stride = std::max<std::size_t>(1, labels.size() / std::max<std::size_t>(1, config.curve_points));
  for (int r = 0; r < config.replicas; ++r) {
    OnlineModelConfig mc = config.model;
    mc.hash_seed = config.seed + static_cast<std::uint64_t>(r);
    const auto pa = train_predict_arm(arm_a, labels, mc);
    const auto pb = train_predict_arm(arm_b, labels, mc);

    LossAccumulator all_a, all_b;
    std::map<Segment, std::pair<LossAccumulator, LossAccumulator>> by_seg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      all_a.add(labels[i], pa[i]);
      all_b.add(labels[i], pb[i]);
      by_seg[seg_of[i]].first.add(labels[i], pa[i]);
      by_seg[seg_of[i]].second.add(labels[i], pb[i]);
      if (r == 0 && ((i + 1) % stride == 0 || i + 1 == labels.size())) {
        const auto na = all_a.ne();
        const auto nb = all_b.ne();
        if (na && nb) report.curve.push_back({static_cast<std::int64_t>(i + 1), *na, *nb});
      }
    }
    const auto na = all_a.ne();
    const auto nb = all_b.ne();
    if (!na || !nb) throw RangeError("labels are all identical; NE undefined");
    ne_a_sum += *na;
    ne_b_sum += *nb;
    for (auto s : segs) {
      const auto& acc = by_seg[s];
      const auto sa = acc.first.ne();
      const auto sb = acc.second.ne();
      if (sa && sb) {
        seg_ne_sum[s].first += *sa;
        seg_ne_sum[s].second += *sb;
        ++seg_ne_count[s];
      }
    }
  }
  report.ne_baseline = ne_a_sum / config.replicas;
  report.ne_treatment = ne_b_sum / config.replicas;
  report.ne_gain = report.ne_baseline - report.ne_treatment;

  for (auto s : segs) {
    SegmentMetrics m;
    std::int64_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (seg_of[i] == s) {
        ++m.n_samples;
        pos += labels[i];
      }
    }
    m.prior_p = m.n_samples ? static_cast<double>(pos) / static_cast<double>(m.n_samples) : 0.0;
    if (seg_ne_count[s] > 0) {
      m.ne_baseline = seg_ne_sum[s].first / seg_ne_count[s];
      m.ne_treatment = seg_ne_sum[s].second / seg_ne_count[s];
      m.ne_gain = m.ne_baseline - m.ne_treatment;
    }
    m.attr_volume_ratio = ratio(arm_b.ledger.total_for(s).attributes_out,
                                arm_a.ledger.total_for(s).attributes_out);
    report.per_segment[s] = m;
  }
  return report;
}

namespace {

ordered_json segment_json(const SegmentMetrics& m) {
  ordered_json j;
  j["ne_baseline"] = m.ne_baseline;
  j["ne_treatment"] = m.ne_treatment;
  j["ne_gain"] = m.ne_gain;
  j["n_samples"] = m.n_samples;
  j["prior_p"] = m.prior_p;
  j["attr_volume_ratio"] = m.attr_volume_ratio;
  return j;
}

}  // namespace

std::string report_json(const NEReport& r, bool include_curve) {
  ordered_json j;
  j["ne_baseline"] = r.ne_baseline;
  j["ne_treatment"] = r.ne_treatment;
  j["ne_gain"] = r.ne_gain;
  j["ne_gain_convention"] = "ne_baseline - ne_treatment; positive means the treatment improves";
  j["n_samples"] = r.n_samples;
  j["prior_p"] = r.prior_p;
  j["attr_volume_ratio"] = r.attr_volume_ratio;
  j["ad_attr_volume_ratio"] = r.ad_attr_volume_ratio;
  j["byte_volume_ratio"] = r.byte_volume_ratio;
  ordered_json per = ordered_json::object();
  for (const auto& [seg, m] : r.per_segment) per[std::string(to_string(seg))] = segment_json(m);
  j["per_segment"] = std::move(per);
  j["baseline_ledger"] = ordered_json::parse(r.baseline_ledger.summary_json());
  j["treatment_ledger"] = ordered_json::parse(r.treatment_ledger.summary_json());
  j["replicas"] = r.replicas;
  j["prediction_clip"] = r.prediction_clip;
  if (include_curve) {
    ordered_json curve = ordered_json::array();
    for (const auto& c : r.curve) curve.push_back({c.samples, c.ne_baseline, c.ne_treatment});
    j["curve"] = std::move(curve);
  }
  return j.dump(2);
}

NEReport parse_report_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  try {
    NEReport r;
    r.ne_baseline = j.at("ne_baseline").get<double>();
    r.ne_treatment = j.at("ne_treatment").get<double>();
    r.ne_gain = j.at("ne_gain").get<double>();
    r.n_samples = j.at("n_samples").get<std::int64_t>();
    r.prior_p = j.at("prior_p").get<double>();
    r.attr_volume_ratio = j.at("attr_volume_ratio").get<double>();
    r.ad_attr_volume_ratio = j.at("ad_attr_volume_ratio").get<double>();
    r.byte_volume_ratio = j.at("byte_volume_ratio").get<double>();
    r.replicas = j.at("replicas").get<int>();
    for (const auto& [name, m] : j.at("per_segment").items()) {
      auto seg = parse_segment(name);
      if (!seg) throw SchemaError("unknown segment " + name);
      SegmentMetrics sm;
      sm.ne_baseline = m.at("ne_baseline").get<double>();
      sm.ne_treatment = m.at("ne_treatment").get<double>();
      sm.ne_gain = m.at("ne_gain").get<double>();
      sm.n_samples = m.at("n_samples").get<std::int64_t>();
      sm.prior_p = m.at("prior_p").get<double>();
      sm.attr_volume_ratio = m.at("attr_volume_ratio").get<double>();
      r.per_segment[*seg] = sm;
    }
    if (j.contains("curve")) {
      for (const auto& c : j.at("curve")) {
        r.curve.push_back({c.at(0).get<std::int64_t>(), c.at(1).get<double>(), c.at(2).get<double>()});
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("report: ") + e.what());
  }
}

}  // namespace dwellgate

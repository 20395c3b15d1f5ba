#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dwellgate/event_model.hpp"
#include "dwellgate/feature_gate.hpp"
#include "dwellgate/segmenter.hpp"
#include "dwellgate/stats_engine.hpp"

namespace dwellgate {

inline constexpr double kPredictionClip = 1e-6;

// Cross-entropy of the predictions divided by the entropy of the empirical
// label prior; 1 means no better than predicting the prior, lower is better.
// Predictions are clipped to [1e-6, 1 - 1e-6]. nullopt when every label is
// identical. Throws RangeError on empty or mismatched inputs.
std::optional<double> normalized_entropy(std::span<const int> labels,
                                         std::span<const double> predictions);

struct OnlineModelConfig {
  double learning_rate = 0.1;
  std::size_t hash_dim = std::size_t{1} << 18;
  std::uint64_t hash_seed = 0;
};

// Logistic regression over hashed "name=value" attribute features plus a bias,
// trained with per-coordinate AdaGrad steps.
class OnlineLogistic {
 public:
  explicit OnlineLogistic(const OnlineModelConfig& config);

  // Seed-independent hash of one "name=value" token.
  static std::uint64_t token_hash(const std::string& name, const AttributeValue& value);
  // Weight index for a token under this model's hash seed; 0 is the bias.
  std::uint32_t slot(std::uint64_t token) const;
  std::vector<std::uint32_t> features(const AttributeMap& attributes) const;
  double predict(std::span<const std::uint32_t> features) const;
  void update(std::span<const std::uint32_t> features, int label);

 private:
  OnlineModelConfig config_;
  std::vector<double> weights_;
  std::vector<double> grad_sq_;
};

// Progressive validation: each example is scored before the model trains on
// it. Throws ConfigError for hash_dim < 2.
std::vector<double> train_predict_online(std::span<const AttributeMap> examples,
                                         std::span<const int> labels,
                                         const OnlineModelConfig& config);

struct EvalConfig {
  OnlineModelConfig model;
  int replicas = 3;
  std::uint64_t seed = 0;
  std::size_t curve_points = 50;
};

struct SegmentMetrics {
  double ne_baseline = 0.0;
  double ne_treatment = 0.0;
  double ne_gain = 0.0;
  std::int64_t n_samples = 0;
  double prior_p = 0.0;
  double attr_volume_ratio = 1.0;
};

struct CurvePoint {
  std::int64_t samples = 0;
  double ne_baseline = 0.0;
  double ne_treatment = 0.0;
};

struct NEReport {
  double ne_baseline = 0.0;
  double ne_treatment = 0.0;
  double ne_gain = 0.0;  // baseline - treatment; positive is better
  std::int64_t n_samples = 0;
  double prior_p = 0.0;
  double attr_volume_ratio = 1.0;     // all sources, treatment / baseline attributes_out
  double ad_attr_volume_ratio = 1.0;  // ad impressions only
  double byte_volume_ratio = 1.0;
  std::map<Segment, SegmentMetrics> per_segment;
  CostLedger baseline_ledger;
  CostLedger treatment_ledger;
  int replicas = 0;
  double prediction_clip = kPredictionClip;
  double gate_events_per_sec = 0.0;  // informational only
  std::vector<CurvePoint> curve;     // cumulative NE along the stream, first replica
};

// Everything the comparison needs, aligned by event index. Only ad impressions
// with a label are scored.
struct EvaluationInput {
  std::span<const Event> events;
  std::span<const std::optional<WindowLabel>> labels;
  std::span<const Segment> segments;
};

// Runs gate -> online model -> NE for both arms, averaged over seeded replicas.
NEReport compare_policies(const EvaluationInput& input, const GatePolicy& baseline,
                          const GatePolicy& treatment, const EvalConfig& config);

std::string report_json(const NEReport& report, bool include_curve = true);
NEReport parse_report_json(const std::string& text);

}  // namespace dwellgate

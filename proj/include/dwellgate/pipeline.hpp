#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dwellgate/evaluator.hpp"
#include "dwellgate/event_model.hpp"
#include "dwellgate/feature_gate.hpp"
#include "dwellgate/segmenter.hpp"
#include "dwellgate/simulator.hpp"
#include "dwellgate/stats_engine.hpp"

namespace dwellgate {

enum class StatsMode { kCumulative, kSliding };

struct RunConfig {
  std::int64_t horizon_s_ms = 300'000;
  std::int64_t buffer_ms = 60'000;
  DwellBounds denoise;
  std::int64_t n_min = kDefaultMinSamples;
  double target_active_fraction = 0.6667;
  std::optional<double> fixed_epsilon;
  std::int64_t epoch_ms = 6 * 3'600'000LL;
  StatsMode stats_mode = StatsMode::kCumulative;
  CorrelationNormalization correlation_normalization = CorrelationNormalization::kRaw;
  // Only two levels are implemented; kept as a hook for finer partitions.
  int segment_levels = 2;
  std::string policy;
  std::vector<std::uint64_t> seeds{1};
  int replicas = 3;
  double learning_rate = 0.1;
  std::size_t hash_dim = std::size_t{1} << 18;

  // Throws ConfigError on inconsistent values.
  void validate() const;
  SegmenterOptions segmenter_options() const;
  EvalConfig eval_config() const;
};

// YAML mapping with the RunConfig keys verbatim (denoise bounds as
// denoise_min_dwell_ms / denoise_max_dwell_ms). Errors carry the line number.
RunConfig parse_run_config(const std::string& yaml_text);
RunConfig load_run_config(const std::string& path);

std::int64_t epoch_of(std::int64_t t_ms, std::int64_t epoch_ms);

struct SegmentationRun {
  std::vector<EpochCalibration> calibrations;
  std::vector<SegmentAssignment> assignments;  // epoch-major, users sorted by id
  std::vector<UserStats> final_stats;          // cumulative, sorted by user id
};

// Denoises, labels every ad impression against its user's conversions with the
// buffered window, accumulates stats per epoch and segments each epoch. The
// assignment for epoch e covers events in [e * epoch_ms, (e + 1) * epoch_ms)
// and is computed from impressions up to the end of that epoch (cumulative)
// or inside it (sliding). `prior` stats seed the cumulative accumulators.
SegmentationRun segment_events(std::span<const Event> events, const RunConfig& config,
                               std::span<const UserStats> prior = {});

// Per-event segment from the published table.
std::vector<Segment> segments_for(std::span<const Event> events, const SegmentTable& table,
                                  std::int64_t epoch_ms);

// Buffered window labels for ad impressions (nullopt elsewhere).
std::vector<std::optional<WindowLabel>> window_labels(std::span<const Event> events,
                                                      const RunConfig& config);

// Ground-truth labels from a simulator sidecar (nullopt where absent).
std::vector<std::optional<WindowLabel>> truth_labels(std::size_t n_events,
                                                     std::span<const TruthRecord> truth);

struct GateRun {
  std::vector<GatedEvent> gated;
  CostLedger ledger;
};

GateRun gate_events(std::span<const Event> events, std::span<const Segment> segments,
                    const GatePolicy& policy);

}  // namespace dwellgate

#include "dwellgate/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "dwellgate/errors.hpp"

namespace dwellgate {

void RunConfig::validate() const {
  if (horizon_s_ms <= 0) throw ConfigError("horizon_s_ms must be positive");
  if (buffer_ms < 0) throw ConfigError("buffer_ms must be non-negative");
  if (denoise.min_ms < 1) throw ConfigError("denoise_min_dwell_ms must be at least 1");
  if (denoise.min_ms >= denoise.max_ms) {
    throw ConfigError("denoise_min_dwell_ms must be below denoise_max_dwell_ms");
  }
  if (n_min < 1) throw ConfigError("n_min must be at least 1");
  if (!(target_active_fraction > 0.0 && target_active_fraction < 1.0)) {
    throw ConfigError("target_active_fraction must lie in (0, 1)");
  }
  if (fixed_epsilon && *fixed_epsilon < 0.0) throw ConfigError("fixed_epsilon must be >= 0");
  if (epoch_ms <= 0) throw ConfigError("epoch_ms must be positive");
  if (segment_levels != 2) throw ConfigError("segment_levels: only 2 levels are supported");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (replicas < 1) throw ConfigError("replicas must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (hash_dim < 2) throw ConfigError("hash_dim must be at least 2");
}

SegmenterOptions RunConfig::segmenter_options() const {
  SegmenterOptions o;
  o.target_active_fraction = target_active_fraction;
  o.n_min = n_min;
  o.normalization = correlation_normalization;
  o.fixed_epsilon = fixed_epsilon;
  return o;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e;
  e.model.learning_rate = learning_rate;
  e.model.hash_dim = hash_dim;
  e.replicas = replicas;
  e.seed = seeds.front();
  return e;
}

namespace {

std::string at_line(const YAML::Node& node) {
  return "line " + std::to_string(node.Mark().line + 1);
}

template <typename T>
T scalar(const YAML::Node& key, const YAML::Node& value) {
  try {
    return value.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(at_line(value) + ": bad value for '" + key.as<std::string>() + "'");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  if (root.IsNull()) return cfg;
  if (!root.IsMap()) throw ConfigError("config must be a key-value map");

  for (const auto& kv : root) {
    const auto& k = kv.first;
    const auto& v = kv.second;
    const auto key = k.as<std::string>();
    if (key == "horizon_s_ms") {
      cfg.horizon_s_ms = scalar<std::int64_t>(k, v);
    } else if (key == "buffer_ms") {
      cfg.buffer_ms = scalar<std::int64_t>(k, v);
    } else if (key == "denoise_min_dwell_ms") {
      cfg.denoise.min_ms = scalar<std::int64_t>(k, v);
    } else if (key == "denoise_max_dwell_ms") {
      cfg.denoise.max_ms = scalar<std::int64_t>(k, v);
    } else if (key == "n_min") {
      cfg.n_min = scalar<std::int64_t>(k, v);
    } else if (key == "target_active_fraction") {
      cfg.target_active_fraction = scalar<double>(k, v);
    } else if (key == "fixed_epsilon") {
      if (!v.IsNull()) cfg.fixed_epsilon = scalar<double>(k, v);
    } else if (key == "epoch_ms") {
      cfg.epoch_ms = scalar<std::int64_t>(k, v);
    } else if (key == "stats_mode") {
      const auto mode = scalar<std::string>(k, v);
      if (mode == "cumulative") {
        cfg.stats_mode = StatsMode::kCumulative;
      } else if (mode == "sliding") {
        cfg.stats_mode = StatsMode::kSliding;
      } else {
        throw ConfigError(at_line(v) + ": stats_mode must be 'cumulative' or 'sliding'");
      }
    } else if (key == "correlation_normalization") {
      const auto norm = scalar<std::string>(k, v);
      if (norm == "raw") {
        cfg.correlation_normalization = CorrelationNormalization::kRaw;
      } else if (norm == "s_normalized") {
        cfg.correlation_normalization = CorrelationNormalization::kStdNormalized;
      } else {
        throw ConfigError(at_line(v) + ": correlation_normalization must be 'raw' or 's_normalized'");
      }
    } else if (key == "segment_levels") {
      cfg.segment_levels = scalar<int>(k, v);
    } else if (key == "policy") {
      cfg.policy = scalar<std::string>(k, v);
    } else if (key == "seeds") {
      cfg.seeds.clear();
      if (v.IsSequence()) {
        for (const auto& s : v) cfg.seeds.push_back(scalar<std::uint64_t>(k, s));
      } else {
        cfg.seeds.push_back(scalar<std::uint64_t>(k, v));
      }
    } else if (key == "replicas") {
      cfg.replicas = scalar<int>(k, v);
    } else if (key == "learning_rate") {
      cfg.learning_rate = scalar<double>(k, v);
    } else if (key == "hash_dim") {
      cfg.hash_dim = scalar<std::size_t>(k, v);
    } else {
      throw ConfigError(at_line(k) + ": unknown config key '" + key + "'");
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_run_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::int64_t epoch_of(std::int64_t t_ms, std::int64_t epoch_ms) {
  if (t_ms >= 0) return t_ms / epoch_ms;
  return -((-t_ms + epoch_ms - 1) / epoch_ms);
}

SegmentationRun segment_events(std::span<const Event> events, const RunConfig& config,
                               std::span<const UserStats> prior) {
  config.validate();
  SegmentationRun run;

  std::set<std::string> users;
  std::int64_t max_ts = 0;
  for (const auto& ev : events) {
    users.insert(ev.user_id);
    max_ts = std::max(max_ts, ev.timestamp_ms);
  }
  std::map<std::string, UserStats> running;
  for (const auto& p : prior) {
    auto [it, inserted] = running.try_emplace(p.user_id, p);
    if (!inserted) it->second.merge(p);
    if (p.horizon_s_ms != config.horizon_s_ms) {
      throw ConfigError("prior stats for " + p.user_id + " use a different horizon");
    }
    users.insert(p.user_id);
  }
  for (const auto& u : users) {
    auto [it, inserted] = running.try_emplace(u);
    if (inserted) {
      it->second.user_id = u;
      it->second.horizon_s_ms = config.horizon_s_ms;
    }
  }
  if (events.empty()) {
    for (const auto& [_, s] : running) run.final_stats.push_back(s);
    return run;
  }

  const std::int64_t n_epochs = epoch_of(max_ts, config.epoch_ms) + 1;

  // Per-user conversion times and in-bounds ad impressions, without copying events.
  struct Obs {
    std::int64_t t_ms;
    std::int64_t dwell_ms;
  };
  std::map<std::string, std::pair<std::vector<std::int64_t>, std::vector<Obs>>> per_user;
  for (const auto& ev : events) {
    if (ev.source == EventSource::kConversion) {
      per_user[ev.user_id].first.push_back(ev.timestamp_ms);
    } else if (ev.source == EventSource::kAdImpression && within_bounds(ev, config.denoise)) {
      per_user[ev.user_id].second.push_back({ev.timestamp_ms, *ev.dwell_ms});
    }
  }

  std::map<std::string, std::vector<UserStats>> buckets;
  for (auto& [uid, data] : per_user) {
    auto& [conversions, impressions] = data;
    std::sort(conversions.begin(), conversions.end());
    std::sort(impressions.begin(), impressions.end(), [](const Obs& a, const Obs& b) {
      return a.t_ms != b.t_ms ? a.t_ms < b.t_ms : a.dwell_ms < b.dwell_ms;
    });
    UserStats empty;
    empty.user_id = uid;
    empty.horizon_s_ms = config.horizon_s_ms;
    auto& b = buckets.try_emplace(uid, static_cast<std::size_t>(n_epochs), empty).first->second;
    for (const auto& imp : impressions) {
      const auto label = label_impression(imp.t_ms, conversions, config.horizon_s_ms, config.buffer_ms);
      b[static_cast<std::size_t>(epoch_of(imp.t_ms, config.epoch_ms))].add(imp.dwell_ms, label);
    }
  }

  const auto opts = config.segmenter_options();
  std::vector<UserStats> snapshot;
  snapshot.reserve(running.size());
  for (std::int64_t e = 0; e < n_epochs; ++e) {
    snapshot.clear();
    for (auto& [uid, acc] : running) {
      auto b = buckets.find(uid);
      if (config.stats_mode == StatsMode::kCumulative) {
        if (b != buckets.end()) acc.merge(b->second[static_cast<std::size_t>(e)]);
        snapshot.push_back(acc);
      } else {
        if (b != buckets.end()) {
          acc.merge(b->second[static_cast<std::size_t>(e)]);
          snapshot.push_back(b->second[static_cast<std::size_t>(e)]);
        } else {
          UserStats s;
          s.user_id = uid;
          s.horizon_s_ms = config.horizon_s_ms;
          snapshot.push_back(s);
        }
      }
    }
    auto result = run_epoch(snapshot, opts, e);
    run.calibrations.push_back(result.calibration);
    std::move(result.assignments.begin(), result.assignments.end(),
              std::back_inserter(run.assignments));
  }
  for (const auto& [_, s] : running) run.final_stats.push_back(s);
  return run;
}

std::vector<Segment> segments_for(std::span<const Event> events, const SegmentTable& table,
                                  std::int64_t epoch_ms) {
  std::vector<Segment> out;
  out.reserve(events.size());
  for (const auto& ev : events) out.push_back(table.lookup(epoch_of(ev.timestamp_ms, epoch_ms), ev.user_id));
  return out;
}

std::vector<std::optional<WindowLabel>> window_labels(std::span<const Event> events,
                                                      const RunConfig& config) {
  std::map<std::string, std::vector<std::int64_t>> conversions;
  for (const auto& ev : events) {
    if (ev.source == EventSource::kConversion) conversions[ev.user_id].push_back(ev.timestamp_ms);
  }
  for (auto& [_, c] : conversions) std::sort(c.begin(), c.end());

  static const std::vector<std::int64_t> kNone;
  std::vector<std::optional<WindowLabel>> out(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& ev = events[i];
    if (ev.source != EventSource::kAdImpression) continue;
    auto it = conversions.find(ev.user_id);
    const auto& conv = it == conversions.end() ? kNone : it->second;
    out[i] = label_impression(ev.timestamp_ms, conv, config.horizon_s_ms, config.buffer_ms);
  }
  return out;
}

std::vector<std::optional<WindowLabel>> truth_labels(std::size_t n_events,
                                                     std::span<const TruthRecord> truth) {
  std::vector<std::optional<WindowLabel>> out(n_events);
  for (const auto& t : truth) {
    if (t.line >= n_events) {
      throw SchemaError("truth record references line " + std::to_string(t.line) +
                        " beyond the event stream");
    }
    if (t.source == EventSource::kAdImpression) out[t.line] = t.true_label;
  }
  return out;
}

GateRun gate_events(std::span<const Event> events, std::span<const Segment> segments,
                    const GatePolicy& policy) {
  if (segments.size() != events.size()) throw RangeError("events and segments must be aligned");
  GateRun run;
  run.gated.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    auto outcome = gate(events[i], segments[i], policy);
    run.ledger.account(events[i], outcome);
    if (auto* g = std::get_if<GatedEvent>(&outcome)) run.gated.push_back(std::move(*g));
  }
  return run;
}

}  // namespace dwellgate

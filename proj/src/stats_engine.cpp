#include "dwellgate/stats_engine.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "dwellgate/errors.hpp"
#include "json.hpp"

namespace dwellgate {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

WindowLabel label_impression(std::int64_t t_ms, std::span<const std::int64_t> conversions,
                             std::int64_t horizon_ms, std::int64_t buffer_ms) {
  if (horizon_ms <= 0) throw ConfigError("forecast horizon must be positive");
  if (buffer_ms < 0) throw ConfigError("logging buffer must be non-negative");
  const std::int64_t lo = t_ms - buffer_ms;
  const std::int64_t hi = t_ms + horizon_ms;
  auto it = std::lower_bound(conversions.begin(), conversions.end(), lo);
  return (it != conversions.end() && *it <= hi) ? WindowLabel::kConversion
                                                : WindowLabel::kNoConversion;
}

double log_dwell_seconds(std::int64_t dwell_ms) {
  return std::log(static_cast<double>(dwell_ms) / 1000.0);
}

void UserStats::add(std::int64_t dwell_ms, WindowLabel label) {
  if (dwell_ms <= 0) throw RangeError("dwell_ms must be positive");
  const double x = log_dwell_seconds(dwell_ms);
  if (label == WindowLabel::kConversion) {
    ++n1;
    sum_logd_1 += x;
    sumsq_logd_1 += x * x;
  } else {
    ++n0;
    sum_logd_0 += x;
    sumsq_logd_0 += x * x;
  }
}

void UserStats::merge(const UserStats& other) {
  if (other.user_id != user_id) {
    throw ConfigError("cannot merge stats of " + other.user_id + " into " + user_id);
  }
  if (other.horizon_s_ms != horizon_s_ms) {
    throw ConfigError("cannot merge stats computed under different horizons");
  }
  n1 += other.n1;
  n0 += other.n0;
  sum_logd_1 += other.sum_logd_1;
  sum_logd_0 += other.sum_logd_0;
  sumsq_logd_1 += other.sumsq_logd_1;
  sumsq_logd_0 += other.sumsq_logd_0;
}

UserStats update_stats(UserStats stats, std::int64_t dwell_ms, WindowLabel label) {
  stats.add(dwell_ms, label);
  return stats;
}

UserStats merge_stats(UserStats a, const UserStats& b) {
  a.merge(b);
  return a;
}

namespace {

// Sum of squared deviations; clamped since cancellation can dip below zero.
double centered_ss(std::int64_t n, double sum, double sumsq) {
  if (n == 0) return 0.0;
  return std::max(0.0, sumsq - sum * sum / static_cast<double>(n));
}

bool enough(const UserStats& s, std::int64_t n_min) {
  const auto floor = std::max<std::int64_t>(n_min, 1);
  return s.n1 >= floor && s.n0 >= floor;
}

}  // namespace

std::optional<double> pooled_variance(const UserStats& s) {
  if (s.n1 < 1 || s.n0 < 1 || s.n1 + s.n0 <= 2) return std::nullopt;
  const double ss = centered_ss(s.n1, s.sum_logd_1, s.sumsq_logd_1) +
                    centered_ss(s.n0, s.sum_logd_0, s.sumsq_logd_0);
  const double var = ss / static_cast<double>(s.n1 + s.n0 - 2);
  const double scale =
      std::max(1.0, (s.sumsq_logd_1 + s.sumsq_logd_0) / static_cast<double>(s.n1 + s.n0));
  if (!(var > 1e-12 * scale)) return std::nullopt;
  return var;
}

std::optional<double> correlation(const UserStats& s, std::int64_t n_min,
                                  CorrelationNormalization norm) {
  if (!enough(s, n_min)) return std::nullopt;
  const double diff = s.sum_logd_1 / static_cast<double>(s.n1) -
                      s.sum_logd_0 / static_cast<double>(s.n0);
  if (norm == CorrelationNormalization::kRaw) return diff;
  const auto var = pooled_variance(s);
  if (!var) return std::nullopt;
  return diff / std::sqrt(*var);
}

DwellModel make_dwell_model(double mu1, double mu0, double sigma, double prior1) {
  if (!(sigma > 0.0)) throw RangeError("sigma must be positive");
  if (!(prior1 > 0.0 && prior1 < 1.0)) throw RangeError("prior must lie in (0, 1)");
  DwellModel m;
  m.mu1 = mu1;
  m.mu0 = mu0;
  m.sigma_pooled = sigma;
  m.prior1 = prior1;
  const double var = sigma * sigma;
  m.w = (mu1 - mu0) / var;
  m.b = (mu0 * mu0 - mu1 * mu1) / (2.0 * var) + std::log(prior1 / (1.0 - prior1));
  return m;
}

std::optional<DwellModel> fit_model(const UserStats& s, std::int64_t n_min) {
  if (!enough(s, n_min)) return std::nullopt;
  const auto var = pooled_variance(s);
  if (!var) return std::nullopt;
  const double mu1 = s.sum_logd_1 / static_cast<double>(s.n1);
  const double mu0 = s.sum_logd_0 / static_cast<double>(s.n0);
  const double prior1 = static_cast<double>(s.n1) / static_cast<double>(s.n1 + s.n0);
  return make_dwell_model(mu1, mu0, std::sqrt(*var), prior1);
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double posterior_log_dwell(const DwellModel& model, double log_dwell_s) {
  return sigmoid(model.w * log_dwell_s + model.b);
}

double posterior(const DwellModel& model, std::int64_t dwell_ms) {
  if (dwell_ms <= 0) throw RangeError("dwell_ms must be positive");
  return posterior_log_dwell(model, log_dwell_seconds(dwell_ms));
}

std::string serialize_stats(const UserStats& s) {
  ordered_json out;
  out["user_id"] = s.user_id;
  out["n1"] = s.n1;
  out["n0"] = s.n0;
  out["sum_logd_1"] = s.sum_logd_1;
  out["sum_logd_0"] = s.sum_logd_0;
  out["sumsq_logd_1"] = s.sumsq_logd_1;
  out["sumsq_logd_0"] = s.sumsq_logd_0;
  out["horizon_s_ms"] = s.horizon_s_ms;
  return out.dump();
}

UserStats parse_stats(const std::string& line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  try {
    UserStats s;
    s.user_id = obj.at("user_id").get<std::string>();
    s.n1 = obj.at("n1").get<std::int64_t>();
    s.n0 = obj.at("n0").get<std::int64_t>();
    s.sum_logd_1 = obj.at("sum_logd_1").get<double>();
    s.sum_logd_0 = obj.at("sum_logd_0").get<double>();
    s.sumsq_logd_1 = obj.at("sumsq_logd_1").get<double>();
    s.sumsq_logd_0 = obj.at("sumsq_logd_0").get<double>();
    s.horizon_s_ms = obj.at("horizon_s_ms").get<std::int64_t>();
    if (s.n1 < 0 || s.n0 < 0) throw RangeError("negative count in stats snapshot");
    return s;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad stats record: ") + e.what());
  }
}

void write_stats(std::ostream& out, std::span<const UserStats> stats) {
  for (const auto& s : stats) out << serialize_stats(s) << '\n';
}

std::vector<UserStats> read_stats(std::istream& in) {
  std::vector<UserStats> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_stats(line));
    } catch (const Error& e) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dwellgate

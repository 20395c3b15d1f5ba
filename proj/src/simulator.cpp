#include "dwellgate/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "dwellgate/errors.hpp"
#include "json.hpp"

namespace dwellgate {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 3> kRegimeNames = {"positive", "low", "negative"};
constexpr double kMsPerHour = 3'600'000.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::int64_t> poisson_times(std::mt19937_64& rng, double rate_per_hour,
                                        std::int64_t duration_ms) {
  std::vector<std::int64_t> out;
  if (rate_per_hour <= 0.0) return out;
  std::exponential_distribution<double> gap(rate_per_hour / kMsPerHour);
  double t = gap(rng);
  while (t < static_cast<double>(duration_ms)) {
    out.push_back(static_cast<std::int64_t>(t));
    t += gap(rng);
  }
  return out;
}

std::string pick(std::mt19937_64& rng, const char* prefix, int cardinality) {
  std::uniform_int_distribution<int> d(0, cardinality - 1);
  return std::string(prefix) + std::to_string(d(rng));
}

bool coin(std::mt19937_64& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

void fill_attributes(Event& ev, const ImpressionSample& s, const UserProfile& profile,
                     const SimulationConfig& cfg, std::mt19937_64& rng) {
  const bool positive = s.label == WindowLabel::kConversion;
  switch (s.source) {
    case EventSource::kAdImpression: {
      char name[16];
      for (int i = 1; i <= 11; ++i) {
        std::snprintf(name, sizeof(name), "attr_%02d", i);
        if (i <= 7 && coin(rng, cfg.signal_reveal_prob)) {
          ev.attributes[name] = std::string(positive ? "pos" : "neg");
        } else {
          ev.attributes[name] = pick(rng, i <= 7 ? "c" : "n", 8);
        }
      }
      std::int64_t boost = std::uniform_int_distribution<int>(0, 1)(rng);
      if (profile.informative_boost_attrs) {
        const std::int64_t truth = positive ? 1 : 0;
        boost = coin(rng, cfg.boost_agreement) ? truth : 1 - truth;
      }
      ev.extended_attributes["boost_ad_01"] = boost;
      break;
    }
    case EventSource::kOrganicImpression: {
      static constexpr std::array<const char*, 3> kMedia = {"image", "text", "video"};
      ev.attributes["content_id"] = pick(rng, "content_", 1000);
      ev.attributes["media_type"] =
          std::string(kMedia[std::uniform_int_distribution<int>(0, 2)(rng)]);
      ev.attributes["position"] = std::int64_t{std::uniform_int_distribution<int>(1, 50)(rng)};
      ev.extended_attributes["boost_organic_01"] = pick(rng, "o", 4);
      break;
    }
    case EventSource::kNewPageImpression: {
      static constexpr std::array<const char*, 3> kMedia = {"image", "text", "video"};
      ev.attributes["semantic_ids"] = pick(rng, "sem_", 100);
      ev.attributes["media_type"] =
          std::string(kMedia[std::uniform_int_distribution<int>(0, 2)(rng)]);
      ev.extended_attributes["boost_new_page_01"] = pick(rng, "p", 4);
      break;
    }
    case EventSource::kConversion:
      break;
  }
}

}  // namespace

std::string_view to_string(Regime regime) { return kRegimeNames[static_cast<std::size_t>(regime)]; }

std::optional<Regime> parse_regime(std::string_view name) {
  for (std::size_t i = 0; i < kRegimeNames.size(); ++i) {
    if (kRegimeNames[i] == name) return static_cast<Regime>(i);
  }
  return std::nullopt;
}

double RegimeDeltas::of(Regime r) const {
  switch (r) {
    case Regime::kPositive:
      return positive;
    case Regime::kNegative:
      return negative;
    case Regime::kLow:
      break;
  }
  return low;
}

Regime UserProfile::regime_at(std::int64_t t_ms) const {
  Regime current = regime_schedule.empty() ? Regime::kLow : regime_schedule.front().regime;
  for (const auto& change : regime_schedule) {
    if (change.start_ms > t_ms) break;
    current = change.regime;
  }
  return current;
}

void UserProfile::validate() const {
  if (!(sigma > 0.0)) throw RangeError(user_id + ": sigma must be positive");
  if (!(conversion_rate > 0.0) || !(impression_rate > 0.0)) {
    throw RangeError(user_id + ": rates must be positive");
  }
  if (organic_rate < 0.0 || new_page_rate < 0.0) throw RangeError(user_id + ": negative rate");
  for (std::size_t i = 1; i < regime_schedule.size(); ++i) {
    if (regime_schedule[i].start_ms < regime_schedule[i - 1].start_ms) {
      throw RangeError(user_id + ": regime schedule must be sorted");
    }
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view user_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : user_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

UserProfile default_prototype() {
  UserProfile p;
  p.organic_rate = 15.0;
  p.new_page_rate = 5.0;
  return p;
}

PopulationSpec parse_population_spec(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(std::string("regimes: ") + e.what());
  }
  PopulationSpec spec;
  if (root.IsNull()) return spec;
  if (!root.IsMap()) throw ConfigError("regimes file must be a map");
  auto line = [](const YAML::Node& n) { return "line " + std::to_string(n.Mark().line + 1) + ": "; };
  try {
    for (const auto& kv : root) {
      const auto key = kv.first.as<std::string>();
      const auto& v = kv.second;
      auto& p = spec.prototype;
      if (key == "mix") {
        spec.mix = {v["positive"].as<double>(0.0), v["low"].as<double>(0.0),
                    v["negative"].as<double>(0.0)};
      } else if (key == "flip_fraction") {
        spec.flip_fraction = v.as<double>();
      } else if (key == "flip_at_ms") {
        spec.flip_at_ms = v.as<std::int64_t>();
      } else if (key == "mu0") {
        p.mu0 = v.as<double>();
      } else if (key == "sigma") {
        p.sigma = v.as<double>();
      } else if (key == "delta_positive") {
        p.delta.positive = v.as<double>();
      } else if (key == "delta_negative") {
        p.delta.negative = v.as<double>();
      } else if (key == "conversion_rate") {
        p.conversion_rate = v.as<double>();
      } else if (key == "impression_rate") {
        p.impression_rate = v.as<double>();
      } else if (key == "organic_rate") {
        p.organic_rate = v.as<double>();
      } else if (key == "new_page_rate") {
        p.new_page_rate = v.as<double>();
      } else {
        throw ConfigError(line(kv.first) + "unknown regimes key '" + key + "'");
      }
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("regimes: ") + e.what());
  }
  const auto& m = spec.mix;
  if (m.positive < 0 || m.low < 0 || m.negative < 0 || m.positive + m.low + m.negative <= 0) {
    throw ConfigError("regimes: mix fractions must be non-negative and not all zero");
  }
  if (spec.flip_fraction < 0.0 || spec.flip_fraction > 1.0) {
    throw ConfigError("regimes: flip_fraction must lie in [0, 1]");
  }
  spec.prototype.validate();
  return spec;
}

PopulationSpec load_population_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open regimes file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_population_spec(buf.str());
}

std::vector<UserProfile> make_profiles(std::size_t n_users, const PopulationSpec& spec,
                                       std::int64_t duration_ms) {
  const double total = spec.mix.positive + spec.mix.low + spec.mix.negative;
  const double cut_pos = spec.mix.positive / total;
  const double cut_low = cut_pos + spec.mix.low / total;
  const std::int64_t flip_at = spec.flip_at_ms.value_or(duration_ms / 2);

  std::vector<UserProfile> out;
  out.reserve(n_users);
  std::size_t non_low = 0;
  for (std::size_t i = 0; i < n_users; ++i) {
    UserProfile p = spec.prototype;
    char id[32];
    std::snprintf(id, sizeof(id), "u%06zu", i);
    p.user_id = id;
    const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(n_users);
    const Regime r = q < cut_pos ? Regime::kPositive : (q < cut_low ? Regime::kLow : Regime::kNegative);
    p.regime_schedule = {{0, r}};
    p.informative_boost_attrs = r != Regime::kLow;
    if (r != Regime::kLow) {
      // Spread flips evenly over the non-low users.
      const auto before = static_cast<std::size_t>(std::floor(static_cast<double>(non_low) * spec.flip_fraction));
      const auto after = static_cast<std::size_t>(std::floor(static_cast<double>(non_low + 1) * spec.flip_fraction));
      if (after > before) {
        p.regime_schedule.push_back(
            {flip_at, r == Regime::kPositive ? Regime::kNegative : Regime::kPositive});
      }
      ++non_low;
    }
    out.push_back(std::move(p));
  }
  return out;
}

UserSamples sample_user(const UserProfile& profile, std::int64_t duration_ms,
                        std::int64_t horizon_ms, std::uint64_t seed) {
  profile.validate();
  if (duration_ms <= 0) throw RangeError("duration must be positive");
  if (horizon_ms <= 0) throw ConfigError("forecast horizon must be positive");

  std::mt19937_64 rng(seed);
  UserSamples out;
  out.conversions = poisson_times(rng, profile.conversion_rate, duration_ms);

  struct Stream {
    EventSource source;
    double rate;
  };
  const std::array<Stream, 3> streams = {{{EventSource::kAdImpression, profile.impression_rate},
                                          {EventSource::kOrganicImpression, profile.organic_rate},
                                          {EventSource::kNewPageImpression, profile.new_page_rate}}};
  for (const auto& st : streams) {
    for (std::int64_t t : poisson_times(rng, st.rate, duration_ms)) {
      out.impressions.push_back({st.source, t, 0, WindowLabel::kNoConversion, Regime::kLow});
    }
  }
  std::stable_sort(out.impressions.begin(), out.impressions.end(),
                   [](const auto& a, const auto& b) { return a.t_ms < b.t_ms; });

  std::normal_distribution<double> z(0.0, 1.0);
  for (auto& imp : out.impressions) {
    imp.label = label_impression(imp.t_ms, out.conversions, horizon_ms, 0);
    imp.regime = profile.regime_at(imp.t_ms);
    double mu = profile.mu0;
    if (imp.label == WindowLabel::kConversion) mu += profile.delta.of(imp.regime);
    const double log_dwell_s = mu + profile.sigma * z(rng);
    imp.dwell_ms = std::max<std::int64_t>(1, std::llround(std::exp(log_dwell_s) * 1000.0));
  }
  return out;
}

SimulatedStream generate(std::span<const UserProfile> profiles, std::int64_t duration_ms,
                         std::uint64_t seed, const SimulationConfig& config) {
  if (duration_ms <= 0) throw RangeError("duration must be positive");

  struct Pending {
    Event event;
    std::optional<TruthRecord> truth;
  };
  std::vector<Pending> all;
  for (const auto& profile : profiles) {
    const std::uint64_t user_seed = derive_seed(seed, profile.user_id);
    const UserSamples samples = sample_user(profile, duration_ms, config.horizon_ms, user_seed);
    // Attribute draws use their own stream so dwell draws stay comparable
    // across attribute-config changes.
    std::mt19937_64 attr_rng(splitmix64(user_seed ^ 0x5bd1e995ULL));

    std::vector<Pending> mine;
    mine.reserve(samples.impressions.size() + samples.conversions.size());
    for (const auto& s : samples.impressions) {
      Pending p;
      p.event.user_id = profile.user_id;
      p.event.source = s.source;
      p.event.timestamp_ms = s.t_ms;
      p.event.dwell_ms = s.dwell_ms;
      fill_attributes(p.event, s, profile, config, attr_rng);
      TruthRecord t;
      t.user_id = profile.user_id;
      t.source = s.source;
      t.true_label = s.label;
      t.regime = s.regime;
      t.clean_timestamp_ms = s.t_ms;
      p.truth = std::move(t);
      mine.push_back(std::move(p));
    }
    for (std::int64_t c : samples.conversions) {
      Pending p;
      p.event.user_id = profile.user_id;
      p.event.source = EventSource::kConversion;
      p.event.timestamp_ms = c;
      p.event.conversion_kind = "click";
      mine.push_back(std::move(p));
    }
    std::stable_sort(mine.begin(), mine.end(), [](const Pending& a, const Pending& b) {
      return a.event.timestamp_ms < b.event.timestamp_ms;
    });
    std::move(mine.begin(), mine.end(), std::back_inserter(all));
  }
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return all[a].event.timestamp_ms < all[b].event.timestamp_ms;
  });

  SimulatedStream out;
  out.profiles.assign(profiles.begin(), profiles.end());
  out.events.reserve(all.size());
  for (std::size_t i : order) {
    auto& p = all[i];
    if (p.truth) {
      p.truth->line = out.events.size();
      out.truth.push_back(std::move(*p.truth));
    }
    out.events.push_back(std::move(p.event));
  }
  return out;
}

SimulatedStream inject_logging_artifacts(SimulatedStream stream, std::int64_t delay_max_ms,
                                         double outlier_rate, std::uint64_t seed) {
  if (delay_max_ms < 0) throw RangeError("delay_max_ms must be non-negative");
  if (!(outlier_rate >= 0.0 && outlier_rate < 1.0)) throw RangeError("outlier_rate must lie in [0, 1)");
  std::mt19937_64 rng(splitmix64(seed ^ 0xa076bef5ULL));
  std::uniform_int_distribution<std::int64_t> delay(0, delay_max_ms);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> short_dwell(1, 10);
  std::uniform_int_distribution<std::int64_t> long_dwell(2 * 3'600'000LL, 8 * 3'600'000LL);

  for (auto& truth : stream.truth) {
    Event& ev = stream.events[truth.line];
    const std::int64_t d = delay(rng);
    ev.timestamp_ms += d;
    truth.delay_ms += d;
    if (unit(rng) < outlier_rate) {
      ev.dwell_ms = unit(rng) < 0.5 ? short_dwell(rng) : long_dwell(rng);
      truth.outlier = true;
    }
  }
  return stream;
}

void write_truth(std::ostream& out, const SimulatedStream& stream) {
  for (const auto& p : stream.profiles) {
    ordered_json j;
    j["kind"] = "profile";
    j["user_id"] = p.user_id;
    ordered_json sched = ordered_json::array();
    for (const auto& c : p.regime_schedule) {
      sched.push_back({{"start_ms", c.start_ms}, {"regime", std::string(to_string(c.regime))}});
    }
    j["regime_schedule"] = std::move(sched);
    j["mu0"] = p.mu0;
    j["delta"] = {{"positive", p.delta.positive}, {"low", p.delta.low}, {"negative", p.delta.negative}};
    j["sigma"] = p.sigma;
    j["conversion_rate"] = p.conversion_rate;
    j["impression_rate"] = p.impression_rate;
    j["organic_rate"] = p.organic_rate;
    j["new_page_rate"] = p.new_page_rate;
    j["informative_boost_attrs"] = p.informative_boost_attrs;
    out << j.dump() << '\n';
  }
  for (const auto& t : stream.truth) {
    ordered_json j;
    j["kind"] = "impression";
    j["line"] = t.line;
    j["user_id"] = t.user_id;
    j["source"] = std::string(to_string(t.source));
    j["true_label"] = as_int(t.true_label);
    j["regime"] = std::string(to_string(t.regime));
    j["clean_timestamp_ms"] = t.clean_timestamp_ms;
    j["delay_ms"] = t.delay_ms;
    j["outlier"] = t.outlier;
    out << j.dump() << '\n';
  }
}

std::vector<TruthRecord> read_truth(std::istream& in) {
  std::vector<TruthRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.at("kind").get<std::string>() != "impression") continue;
      TruthRecord t;
      t.line = j.at("line").get<std::size_t>();
      t.user_id = j.at("user_id").get<std::string>();
      auto src = parse_source(j.at("source").get<std::string>());
      auto reg = parse_regime(j.at("regime").get<std::string>());
      if (!src || !reg) throw SchemaError("bad source or regime");
      t.source = *src;
      t.regime = *reg;
      t.true_label = j.at("true_label").get<int>() ? WindowLabel::kConversion : WindowLabel::kNoConversion;
      t.clean_timestamp_ms = j.at("clean_timestamp_ms").get<std::int64_t>();
      t.delay_ms = j.at("delay_ms").get<std::int64_t>();
      t.outlier = j.at("outlier").get<bool>();
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw SchemaError("truth line " + std::to_string(lineno) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("truth line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dwellgate

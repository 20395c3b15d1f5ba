// dwellgate: generate / segment / gate / evaluate / report over JSONL event files.
//
// Exit codes: 0 success, 1 validation error (bad flags, config, policy or
// records), 2 runtime error (missing files, I/O).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dwellgate/errors.hpp"
#include "dwellgate/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dwellgate;

namespace {

struct Globals {
  std::string workdir = ".";
  std::string config_path;
};

fs::path resolve(const Globals& g, const std::string& path) {
  fs::path p(path);
  return p.is_absolute() ? p : fs::path(g.workdir) / p;
}

RunConfig load_config(const Globals& g) {
  if (g.config_path.empty()) return RunConfig{};
  return load_run_config(resolve(g, g.config_path).string());
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::vector<Event> load_events(const fs::path& path) {
  IngestStats stats;
  auto events = read_events_file(path.string(), &stats);
  if (stats.unknown_fields > 0) {
    std::cerr << "warning: ignored " << stats.unknown_fields << " unknown field(s) in "
              << path.string() << "\n";
  }
  return events;
}

SegmentTable load_segments(const fs::path& path) {
  auto in = open_in(path);
  return SegmentTable(read_assignments(in));
}

// ---- generate -------------------------------------------------------------

struct GenerateArgs {
  std::size_t users = 100;
  double duration_h = 24.0;
  std::uint64_t seed = 1;
  std::string regimes;
  std::string out = "events.jsonl";
  std::string truth = "truth.jsonl";
  std::int64_t delay_max_ms = 0;
  double outlier_rate = 0.0;
};

int cmd_generate(const Globals& g, const GenerateArgs& a) {
  const RunConfig cfg = load_config(g);
  PopulationSpec spec;
  if (!a.regimes.empty()) spec = load_population_spec(resolve(g, a.regimes).string());
  if (!(a.duration_h > 0.0)) throw RangeError("--duration must be positive");
  const auto duration_ms = static_cast<std::int64_t>(std::llround(a.duration_h * 3'600'000.0));

  const auto profiles = make_profiles(a.users, spec, duration_ms);
  SimulationConfig sim;
  sim.horizon_ms = cfg.horizon_s_ms;
  auto stream = generate(profiles, duration_ms, a.seed, sim);
  stream = inject_logging_artifacts(std::move(stream), a.delay_max_ms, a.outlier_rate, a.seed);

  auto out = open_out(resolve(g, a.out));
  write_events(out, stream.events);
  auto truth = open_out(resolve(g, a.truth));
  write_truth(truth, stream);
  std::cout << "generated " << stream.events.size() << " events for " << a.users << " users\n";
  return 0;
}

// ---- segment --------------------------------------------------------------

struct SegmentArgs {
  std::string events = "events.jsonl";
  std::string stats_in;
  std::string stats_out = "stats.jsonl";
  std::string segments_out = "segments.jsonl";
  std::string calibration_out = "calibration.jsonl";
};

int cmd_segment(const Globals& g, const SegmentArgs& a) {
  const RunConfig cfg = load_config(g);
  const auto events = load_events(resolve(g, a.events));
  std::vector<UserStats> prior;
  if (!a.stats_in.empty()) {
    auto in = open_in(resolve(g, a.stats_in));
    prior = read_stats(in);
  }
  const auto run = segment_events(events, cfg, prior);

  auto stats_out = open_out(resolve(g, a.stats_out));
  write_stats(stats_out, run.final_stats);
  auto seg_out = open_out(resolve(g, a.segments_out));
  write_assignments(seg_out, run.assignments);
  auto cal_out = open_out(resolve(g, a.calibration_out));
  for (const auto& c : run.calibrations) {
    cal_out << serialize_calibration(c) << '\n';
    std::cout << "epoch " << c.epoch << ": epsilon=" << c.epsilon
              << " achieved_active_fraction=" << c.achieved_active_fraction
              << " target=" << c.target_active_fraction << " population=" << c.population_size
              << "\n";
  }
  std::cout << "segmented " << run.final_stats.size() << " users over " << run.calibrations.size()
            << " epoch(s)\n";
  return 0;
}

// ---- gate -----------------------------------------------------------------

struct GateArgs {
  std::string events = "events.jsonl";
  std::string segments = "segments.jsonl";
  std::string policy;
  std::string out = "gated.jsonl";
  std::string ledger = "ledger.json";
};

GatePolicy policy_or_config(const Globals& g, const std::string& flag, const RunConfig& cfg) {
  const std::string& path = flag.empty() ? cfg.policy : flag;
  if (path.empty()) return GatePolicy{};
  return load_policy_file(resolve(g, path).string(), AttributeSchema::defaults());
}

int cmd_gate(const Globals& g, const GateArgs& a) {
  const RunConfig cfg = load_config(g);
  const auto policy = policy_or_config(g, a.policy, cfg);
  const auto events = load_events(resolve(g, a.events));
  const auto table = load_segments(resolve(g, a.segments));
  const auto segments = segments_for(events, table, cfg.epoch_ms);
  const auto run = gate_events(events, segments, policy);

  auto out = open_out(resolve(g, a.out));
  for (const auto& ge : run.gated) out << serialize_gated(ge) << '\n';
  auto ledger = open_out(resolve(g, a.ledger));
  ledger << run.ledger.summary_json() << '\n';
  const auto t = run.ledger.total();
  std::cout << "gated " << t.events_in << " events -> " << t.events_out << " (attributes "
            << t.attributes_in << " -> " << t.attributes_out << ")\n";
  return 0;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateArgs {
  std::string events = "events.jsonl";
  std::string segments = "segments.jsonl";
  std::string baseline_policy;
  std::string policy;
  std::string truth;
  std::string out = "report.json";
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
  const RunConfig cfg = load_config(g);
  const auto schema = AttributeSchema::defaults();
  const GatePolicy baseline = a.baseline_policy.empty()
                                  ? GatePolicy{}
                                  : load_policy_file(resolve(g, a.baseline_policy).string(), schema);
  const GatePolicy treatment = policy_or_config(g, a.policy, cfg);
  const auto events = load_events(resolve(g, a.events));
  const auto table = load_segments(resolve(g, a.segments));
  const auto segments = segments_for(events, table, cfg.epoch_ms);

  std::vector<std::optional<WindowLabel>> labels;
  if (!a.truth.empty()) {
    auto in = open_in(resolve(g, a.truth));
    labels = truth_labels(events.size(), read_truth(in));
  } else {
    labels = window_labels(events, cfg);
  }

  const auto report = compare_policies({events, labels, segments}, baseline, treatment,
                                       cfg.eval_config());
  auto out = open_out(resolve(g, a.out));
  out << report_json(report) << '\n';
  std::cout << std::fixed << std::setprecision(4) << "ne_baseline=" << report.ne_baseline
            << " ne_treatment=" << report.ne_treatment << " ne_gain=" << report.ne_gain
            << " attr_volume_ratio=" << report.attr_volume_ratio << "\n";
  std::cerr << "gating throughput: " << std::setprecision(0) << report.gate_events_per_sec
            << " events/s (informational)\n";
  return 0;
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> reports;
  std::vector<std::string> names;
  std::string events;
  std::string out_dir = "report";
};

std::string pct(double ratio) {
  std::ostringstream s;
  s << std::showpos << std::fixed << std::setprecision(2) << (1.0 - ratio) * 100.0 << "%";
  return s.str();
}

int cmd_report(const Globals& g, const ReportArgs& a) {
  const RunConfig cfg = load_config(g);
  const fs::path out_dir = resolve(g, a.out_dir);
  fs::create_directories(out_dir);

  std::ostringstream table;
  table << std::left << std::setw(34) << "Experiment" << std::right << std::setw(10) << "NE Gain"
        << std::setw(12) << "NE base" << std::setw(12) << "NE treat" << std::setw(16)
        << "Attr vol. cut" << std::setw(16) << "Byte vol. cut" << "\n";
  table << std::string(100, '-') << "\n";
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    auto in = open_in(resolve(g, a.reports[i]));
    std::stringstream buf;
    buf << in.rdbuf();
    const auto r = parse_report_json(buf.str());
    const std::string name =
        i < a.names.size() ? a.names[i] : fs::path(a.reports[i]).stem().string();
    table << std::left << std::setw(34) << name << std::right << std::fixed << std::setprecision(4)
          << std::setw(10) << r.ne_gain << std::setw(12) << r.ne_baseline << std::setw(12)
          << r.ne_treatment << std::setw(16) << pct(r.attr_volume_ratio) << std::setw(16)
          << pct(r.byte_volume_ratio) << "\n";
    for (const auto& [seg, m] : r.per_segment) {
      table << std::left << std::setw(34) << ("  " + std::string(to_string(seg)) + " users")
            << std::right << std::setw(10) << m.ne_gain << std::setw(12) << m.ne_baseline
            << std::setw(12) << m.ne_treatment << std::setw(16) << pct(m.attr_volume_ratio)
            << "\n";
    }

    auto curve = open_out(out_dir / ("convergence_" + name + ".csv"));
    curve << "samples,ne_baseline,ne_treatment\n";
    for (const auto& c : r.curve) {
      curve << c.samples << ',' << std::setprecision(6) << c.ne_baseline << ',' << c.ne_treatment
            << '\n';
    }
  }
  table << "NE gain = NE(baseline) - NE(treatment); volume cut = 1 - treatment/baseline.\n";
  std::cout << table.str();
  auto table_out = open_out(out_dir / "table.txt");
  table_out << table.str();

  if (!a.events.empty()) {
    const auto events = denoise_dwell(load_events(resolve(g, a.events)), cfg.denoise);
    const auto labels = window_labels(events, cfg);
    constexpr double kLo = -2.0, kWidth = 0.25;
    constexpr int kBins = 44;
    std::vector<std::int64_t> c1(kBins, 0), c0(kBins, 0);
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (!labels[i]) continue;
      const double x = log_dwell_seconds(*events[i].dwell_ms);
      const int bin = std::clamp(static_cast<int>(std::floor((x - kLo) / kWidth)), 0, kBins - 1);
      (*labels[i] == WindowLabel::kConversion ? c1 : c0)[bin]++;
    }
    auto hist = open_out(out_dir / "dwell_histogram.csv");
    hist << "log_dwell_s_lo,log_dwell_s_hi,count_near_conversion,count_far_from_conversion\n";
    for (int b = 0; b < kBins; ++b) {
      hist << std::setprecision(2) << kLo + b * kWidth << ',' << kLo + (b + 1) * kWidth << ','
           << c1[b] << ',' << c0[b] << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dwellgate: dwell-time user segmentation and feature gating"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--workdir", g.workdir, "Directory relative paths resolve against");
  app.add_option("--config", g.config_path, "YAML run config");

  GenerateArgs gen;
  auto* generate_cmd = app.add_subcommand("generate", "Simulate an event stream with ground truth");
  generate_cmd->add_option("--users", gen.users, "Number of users")->required();
  generate_cmd->add_option("--duration", gen.duration_h, "Duration in hours");
  generate_cmd->add_option("--seed", gen.seed, "Random seed");
  generate_cmd->add_option("--regimes", gen.regimes, "YAML population/regime file");
  generate_cmd->add_option("--out", gen.out, "Events JSONL output");
  generate_cmd->add_option("--truth", gen.truth, "Ground-truth sidecar output");
  generate_cmd->add_option("--delay-max-ms", gen.delay_max_ms, "Max logging delay on impressions");
  generate_cmd->add_option("--outlier-rate", gen.outlier_rate, "Fraction of dwell outliers");

  SegmentArgs seg;
  auto* segment_cmd = app.add_subcommand("segment", "Compute stats and per-epoch segments");
  segment_cmd->add_option("--events", seg.events, "Events JSONL input");
  segment_cmd->add_option("--stats-in", seg.stats_in, "Stats snapshot to resume from");
  segment_cmd->add_option("--stats-out", seg.stats_out, "Stats snapshot output");
  segment_cmd->add_option("--segments-out", seg.segments_out, "Segment table output");
  segment_cmd->add_option("--calibration-out", seg.calibration_out, "Per-epoch calibration output");

  GateArgs gt;
  auto* gate_cmd = app.add_subcommand("gate", "Apply a gating policy to an event stream");
  gate_cmd->add_option("--events", gt.events, "Events JSONL input");
  gate_cmd->add_option("--segments", gt.segments, "Segment table input");
  gate_cmd->add_option("--policy", gt.policy, "Policy file (defaults to the config's policy)");
  gate_cmd->add_option("--out", gt.out, "Gated JSONL output");
  gate_cmd->add_option("--ledger", gt.ledger, "Cost ledger JSON output");

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Compare two gating policies by NE");
  evaluate_cmd->add_option("--events", ev.events, "Events JSONL input");
  evaluate_cmd->add_option("--segments", ev.segments, "Segment table input");
  evaluate_cmd->add_option("--baseline-policy", ev.baseline_policy, "Baseline policy (identity if omitted)");
  evaluate_cmd->add_option("--policy", ev.policy, "Treatment policy (defaults to the config's policy)");
  evaluate_cmd->add_option("--truth", ev.truth, "Use ground-truth labels from this sidecar");
  evaluate_cmd->add_option("--out", ev.out, "NEReport JSON output");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Render tables and plot data");
  report_cmd->add_option("--reports", rep.reports, "NEReport JSON files")->required();
  report_cmd->add_option("--names", rep.names, "Row names, one per report");
  report_cmd->add_option("--events", rep.events, "Events for the dwell histogram");
  report_cmd->add_option("--out-dir", rep.out_dir, "Output directory for CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*generate_cmd) return cmd_generate(g, gen);
    if (*segment_cmd) return cmd_segment(g, seg);
    if (*gate_cmd) return cmd_gate(g, gt);
    if (*evaluate_cmd) return cmd_evaluate(g, ev);
    if (*report_cmd) return cmd_report(g, rep);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

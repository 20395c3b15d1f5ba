#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dwellgate/errors.hpp"
#include "dwellgate/evaluator.hpp"
#include "dwellgate/event_model.hpp"
#include "dwellgate/feature_gate.hpp"
#include "dwellgate/pipeline.hpp"
#include "dwellgate/segmenter.hpp"
#include "dwellgate/simulator.hpp"
#include "dwellgate/stats_engine.hpp"

namespace py = pybind11;
using namespace dwellgate;

namespace {

EventSource source_arg(const std::string& name) {
  auto s = parse_source(name);
  if (!s) throw SchemaError("unknown source '" + name + "'");
  return *s;
}

Segment segment_arg(const std::string& name) {
  auto s = parse_segment(name);
  if (!s) throw SchemaError("unknown segment '" + name + "'");
  return *s;
}

std::string source_name(EventSource s) { return std::string(to_string(s)); }
std::string segment_name(Segment s) { return std::string(to_string(s)); }

std::optional<int> label_value(const std::optional<WindowLabel>& l) {
  if (!l) return std::nullopt;
  return as_int(*l);
}

}  // namespace

PYBIND11_MODULE(_dwellgate, m) {
  m.doc() = "Dwell-time user segmentation and feature gating";

  auto base = py::register_exception<Error>(m, "Error", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  // events ------------------------------------------------------------------
  py::class_<Event>(m, "Event")
      .def(py::init<>())
      .def_readwrite("user_id", &Event::user_id)
      .def_property(
          "source", [](const Event& e) { return source_name(e.source); },
          [](Event& e, const std::string& s) { e.source = source_arg(s); })
      .def_readwrite("timestamp_ms", &Event::timestamp_ms)
      .def_readwrite("dwell_ms", &Event::dwell_ms)
      .def_readwrite("attributes", &Event::attributes)
      .def_readwrite("extended_attributes", &Event::extended_attributes)
      .def_readwrite("conversion_kind", &Event::conversion_kind)
      .def("__eq__", [](const Event& a, const Event& b) { return a == b; })
      .def("__repr__", [](const Event& e) { return "Event(" + serialize_event(e) + ")"; });

  m.def("parse_event", [](const std::string& line) { return parse_event(line); }, py::arg("line"));
  m.def("serialize_event", &serialize_event, py::arg("event"));
  m.def(
      "denoise_dwell",
      [](const std::vector<Event>& events, std::int64_t min_ms, std::int64_t max_ms) {
        return denoise_dwell(events, min_ms, max_ms);
      },
      py::arg("events"), py::arg("min_dwell_ms") = 250, py::arg("max_dwell_ms") = 1'800'000);
  m.def(
      "adjust_label_window",
      [](std::int64_t t, std::int64_t horizon, std::int64_t buffer) {
        const auto w = adjust_label_window(t, horizon, buffer);
        return std::make_pair(w.lo, w.hi);
      },
      py::arg("t_ms"), py::arg("horizon_ms"), py::arg("buffer_ms"));

  // stats -------------------------------------------------------------------
  m.def(
      "label_impression",
      [](std::int64_t t, std::vector<std::int64_t> conversions, std::int64_t horizon, std::int64_t buffer) {
        std::sort(conversions.begin(), conversions.end());
        return as_int(label_impression(t, conversions, horizon, buffer));
      },
      py::arg("t_ms"), py::arg("conversions"), py::arg("horizon_ms") = 300'000, py::arg("buffer_ms") = 0);

  py::class_<UserStats>(m, "UserStats")
      .def(py::init([](const std::string& user_id) {
             UserStats s;
             s.user_id = user_id;
             return s;
           }),
           py::arg("user_id") = "")
      .def_readwrite("user_id", &UserStats::user_id)
      .def_readwrite("n1", &UserStats::n1)
      .def_readwrite("n0", &UserStats::n0)
      .def_readwrite("sum_logd_1", &UserStats::sum_logd_1)
      .def_readwrite("sum_logd_0", &UserStats::sum_logd_0)
      .def_readwrite("sumsq_logd_1", &UserStats::sumsq_logd_1)
      .def_readwrite("sumsq_logd_0", &UserStats::sumsq_logd_0)
      .def_readwrite("horizon_s_ms", &UserStats::horizon_s_ms)
      .def(
          "add", [](UserStats& s, std::int64_t dwell, int label) { s.add(dwell, WindowLabel(label != 0)); },
          py::arg("dwell_ms"), py::arg("label"))
      .def("merge", &UserStats::merge, py::arg("other"))
      .def("__eq__", [](const UserStats& a, const UserStats& b) { return a == b; });

  m.def(
      "correlation",
      [](const UserStats& s, std::int64_t n_min, const std::string& norm) {
        if (norm != "raw" && norm != "s_normalized") throw ConfigError("normalization must be raw or s_normalized");
        return correlation(s, n_min,
                           norm == "raw" ? CorrelationNormalization::kRaw : CorrelationNormalization::kStdNormalized);
      },
      py::arg("stats"), py::arg("n_min") = kDefaultMinSamples, py::arg("normalization") = "raw");

  py::class_<DwellModel>(m, "DwellModel")
      .def_readonly("mu1", &DwellModel::mu1)
      .def_readonly("mu0", &DwellModel::mu0)
      .def_readonly("sigma_pooled", &DwellModel::sigma_pooled)
      .def_readonly("prior1", &DwellModel::prior1)
      .def_readonly("w", &DwellModel::w)
      .def_readonly("b", &DwellModel::b);
  m.def("make_dwell_model", &make_dwell_model, py::arg("mu1"), py::arg("mu0"), py::arg("sigma"), py::arg("prior1"));
  m.def("fit_model", &fit_model, py::arg("stats"), py::arg("n_min") = kDefaultMinSamples);
  m.def("posterior", &posterior, py::arg("model"), py::arg("dwell_ms"));

  // segmentation ------------------------------------------------------------
  m.def(
      "calibrate_epsilon",
      [](const std::vector<double>& corr, double target) {
        const auto c = calibrate_epsilon(corr, target);
        return std::make_pair(c.epsilon, c.achieved_active_fraction);
      },
      py::arg("corr_values"), py::arg("target_active_fraction") = 2.0 / 3.0);
  m.def(
      "assign_segment",
      [](std::optional<double> corr, double eps) { return segment_name(assign_segment(corr, eps)); },
      py::arg("corr_value"), py::arg("epsilon"));

  // gating ------------------------------------------------------------------
  py::class_<GatePolicy>(m, "GatePolicy")
      .def(py::init<>())
      .def("empty", &GatePolicy::empty)
      .def(
          "allows",
          [](const GatePolicy& p, const std::string& seg, const std::string& src) {
            return p.allows(segment_arg(seg), source_arg(src));
          },
          py::arg("segment"), py::arg("source"));
  m.def(
      "parse_policy", [](const std::string& text) { return parse_policy(text, AttributeSchema::defaults()); },
      py::arg("text"));
  m.def(
      "gate",
      [](const Event& e, const std::string& seg, const GatePolicy& p) -> std::optional<Event> {
        auto out = gate(e, segment_arg(seg), p);
        if (auto* g = std::get_if<GatedEvent>(&out)) return std::move(g->event);
        return std::nullopt;
      },
      py::arg("event"), py::arg("segment"), py::arg("policy"));
  m.def(
      "expected_reduction",
      [](const GatePolicy& p, double active, double passive, const std::string& src) {
        return expected_reduction(p, {active, passive}, AttributeSchema::defaults(), source_arg(src));
      },
      py::arg("policy"), py::arg("active_share"), py::arg("passive_share"), py::arg("source") = "ad_impression");

  // evaluation --------------------------------------------------------------
  m.def(
      "normalized_entropy",
      [](const std::vector<int>& y, const std::vector<double>& p) { return normalized_entropy(y, p); },
      py::arg("labels"), py::arg("predictions"));

  // simulation and pipeline -------------------------------------------------
  m.def(
      "simulate",
      [](std::size_t users, double duration_h, std::uint64_t seed, std::int64_t delay_max_ms, double outlier_rate) {
        const auto duration = static_cast<std::int64_t>(duration_h * 3'600'000.0);
        const auto profiles = make_profiles(users, PopulationSpec{}, duration);
        auto stream = inject_logging_artifacts(generate(profiles, duration, seed), delay_max_ms, outlier_rate, seed);
        std::vector<std::optional<int>> labels;
        for (const auto& l : truth_labels(stream.events.size(), stream.truth)) labels.push_back(label_value(l));
        std::map<std::string, std::string> regimes;
        for (const auto& p : stream.profiles) regimes[p.user_id] = std::string(to_string(p.regime_at(0)));
        return py::make_tuple(std::move(stream.events), labels, regimes);
      },
      py::arg("users"), py::arg("duration_h") = 24.0, py::arg("seed") = 1, py::arg("delay_max_ms") = 0,
      py::arg("outlier_rate") = 0.0,
      "Returns (events, truth labels aligned with events, initial regime per user).");

  m.def(
      "segment_events",
      [](const std::vector<Event>& events, const std::string& config_yaml) {
        const auto cfg = parse_run_config(config_yaml);
        const auto run = segment_events(events, cfg);
        py::list rows;
        for (const auto& a : run.assignments) {
          py::dict d;
          d["user_id"] = a.user_id;
          d["epoch"] = a.epoch;
          d["segment"] = segment_name(a.segment);
          d["corr_value"] = a.corr_value;
          rows.append(d);
        }
        return rows;
      },
      py::arg("events"), py::arg("config_yaml") = "");

  m.def(
      "event_segments",
      [](const std::vector<Event>& events, const std::string& config_yaml) {
        const auto cfg = parse_run_config(config_yaml);
        const auto run = segment_events(events, cfg);
        std::vector<std::string> out;
        for (auto s : segments_for(events, SegmentTable(run.assignments), cfg.epoch_ms)) out.push_back(segment_name(s));
        return out;
      },
      py::arg("events"), py::arg("config_yaml") = "", "Segment of every event under the published table.");

  m.def(
      "compare_policies",
      [](const std::vector<Event>& events, const std::vector<std::optional<int>>& labels,
         const std::vector<std::string>& segments, const GatePolicy& baseline, const GatePolicy& treatment,
         int replicas, std::uint64_t seed) {
        std::vector<std::optional<WindowLabel>> l;
        for (const auto& v : labels) l.push_back(v ? std::optional(WindowLabel(*v != 0)) : std::nullopt);
        std::vector<Segment> s;
        for (const auto& name : segments) s.push_back(segment_arg(name));
        EvalConfig cfg;
        cfg.replicas = replicas;
        cfg.seed = seed;
        return report_json(compare_policies({events, l, s}, baseline, treatment, cfg));
      },
      py::arg("events"), py::arg("labels"), py::arg("segments"), py::arg("baseline"), py::arg("treatment"),
      py::arg("replicas") = 3, py::arg("seed") = 0, "Returns the NE report as a JSON string.");
}

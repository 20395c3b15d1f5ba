import json
import math

import pytest

import dwellgate as dg


def test_event_round_trip():
    line = '{"user_id":"u1","source":"ad_impression","timestamp_ms":1000,"dwell_ms":3000,"attributes":{"ad_id":"a9"}}'
    ev = dg.parse_event(line)
    assert ev.user_id == "u1"
    assert ev.source == "ad_impression"
    assert ev.dwell_ms == 3000
    assert ev.attributes == {"ad_id": "a9"}
    assert dg.parse_event(dg.serialize_event(ev)) == ev


def test_errors_map_to_exception_classes():
    with pytest.raises(dg.SchemaError):
        dg.parse_event('{"user_id":"u1","source":"ad_impression","timestamp_ms":1000}')
    with pytest.raises(dg.ParseError):
        dg.parse_event("{not json")
    with pytest.raises(ValueError):
        dg.make_dwell_model(1.0, 0.0, 0.0, 0.5)


def test_window_label():
    assert dg.label_impression(100_000, [250_000], 300_000, 0) == 1
    assert dg.label_impression(100_000, [450_000], 300_000, 0) == 0
    assert dg.label_impression(100_000, [50_000], 300_000, 60_000) == 1
    assert dg.adjust_label_window(100_000, 300_000, 60_000) == (40_000, 400_000)


def test_stats_and_model():
    s = dg.UserStats("u")
    for _ in range(25):
        s.add(2000, 1)
        s.add(1000, 0)
    assert s.n1 == 25 and s.n0 == 25
    assert dg.correlation(s) == pytest.approx(math.log(2.0))
    assert dg.correlation(s, n_min=30) is None
    m = dg.make_dwell_model(1.0, 0.0, 1.0, 0.5)
    assert (m.w, m.b) == pytest.approx((1.0, -0.5))
    assert dg.posterior(m, math.floor(math.exp(0.5) * 1000 + 0.5)) == pytest.approx(0.5, abs=1e-3)


def test_segmentation_helpers():
    eps, frac = dg.calibrate_epsilon([0.1, 0.2, 0.3], 2 / 3)
    assert eps == 0.1
    assert frac == pytest.approx(2 / 3)
    assert dg.assign_segment(-0.8, 0.3) == "active"
    assert dg.assign_segment(None, 0.3) == "unknown"


def test_policy_and_gate():
    policy = dg.parse_policy("removals:\n  active:\n    ad_impression: [attr_08, attr_09, attr_10, attr_11]\n")
    ev = dg.Event()
    ev.user_id = "u"
    ev.source = "ad_impression"
    ev.dwell_ms = 4000
    ev.attributes = {f"attr_{i:02d}": "c1" for i in range(1, 12)}
    ev.extended_attributes = {"boost_ad_01": 1}
    out = dg.gate(ev, "active", policy)
    assert len(out.attributes) == 7
    assert out.extended_attributes == {}
    assert dg.expected_reduction(policy, 2 / 3, 1 / 3) == pytest.approx(4 / 11 * 2 / 3)
    with pytest.raises(dg.ConfigError, match="attr_99"):
        dg.parse_policy("removals:\n  active:\n    ad_impression: [attr_99]\n")


def test_normalized_entropy():
    assert dg.normalized_entropy([1, 0], [0.9, 0.1]) == pytest.approx(0.1520, abs=1e-3)
    assert dg.normalized_entropy([0, 0], [0.2, 0.3]) is None


def test_pipeline_end_to_end():
    events, labels, regimes = dg.simulate(30, duration_h=12, seed=3)
    assert len(events) == len(labels)
    rows = dg.segment_events(events, "epoch_ms: 43200000\n")
    assert {r["user_id"] for r in rows} == set(regimes)
    negative = [r for r in rows if regimes[r["user_id"]] == "negative"]
    assert all(r["segment"] == "active" for r in negative)

    segments = dg.event_segments(events, "epoch_ms: 43200000\n")
    boost = dg.parse_policy("boosts:\n  active:\n    ad_impression: [boost_ad_01]\n")
    report = json.loads(dg.compare_policies(events, labels, segments, dg.GatePolicy(), boost, replicas=1))
    assert report["ne_gain"] > 0
    assert report["attr_volume_ratio"] > 1
    again = json.loads(dg.compare_policies(events, labels, segments, dg.GatePolicy(), boost, replicas=1))
    assert again == report

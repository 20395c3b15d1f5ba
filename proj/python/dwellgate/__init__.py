"""Dwell-time user segmentation and feature gating."""

from ._dwellgate import (
    ConfigError,
    DwellModel,
    Error,
    Event,
    GatePolicy,
    ParseError,
    RangeError,
    SchemaError,
    UserStats,
    adjust_label_window,
    assign_segment,
    calibrate_epsilon,
    compare_policies,
    correlation,
    denoise_dwell,
    event_segments,
    expected_reduction,
    fit_model,
    gate,
    label_impression,
    make_dwell_model,
    normalized_entropy,
    parse_event,
    parse_policy,
    posterior,
    segment_events,
    serialize_event,
    simulate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

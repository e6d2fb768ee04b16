"""Offline figure rendering for discomm run artifacts."""

from .render import (
    SchemaError,
    amplitude_figure,
    histogram_figure,
    load_metrics,
    load_protocol,
    protocol_figure,
    returns_figure,
    save_figure,
)

__all__ = [
    "SchemaError",
    "amplitude_figure",
    "histogram_figure",
    "load_metrics",
    "load_protocol",
    "protocol_figure",
    "returns_figure",
    "save_figure",
]

"""Tracking loop, templates, metrics, data I/O and the CLI."""

from .config import ModelConfig, TrackerConfig
from .metrics import aggregate_means, precision_metric, success_metric
from .synthetic import SynthConfig, generate_synthetic
from .templates import make_template
from .tracker import FrameResult, Sequence, TrackResult, track_sequence

__all__ = [
    "ModelConfig",
    "TrackerConfig",
    "aggregate_means",
    "precision_metric",
    "success_metric",
    "SynthConfig",
    "generate_synthetic",
    "make_template",
    "FrameResult",
    "Sequence",
    "TrackResult",
    "track_sequence",
]

"""Narrations-as-queries toolkit.

Turns timestamped video narrations into temporal-window query supervision,
generates a synthetic narrated-video benchmark, trains a small span
localizer in two stages, and evaluates recall@k at IoU thresholds with
stratified breakdowns.
"""

from .annotations import (
    Narration,
    NaqSample,
    NlqSample,
    ParseError,
    TemporalWindow,
    VideoTimeline,
    normalize_text,
)
from .trj import TrjConfig, clamp_window, compute_alpha, compute_beta, jitter_window, seed_window
from .naqgen import NaqDataset, generate_naq, subsample
from .metrics import EvalReport, Prediction, evaluate, interval_iou, recall_at_k

__all__ = [
    "Narration",
    "NaqSample",
    "NlqSample",
    "ParseError",
    "TemporalWindow",
    "VideoTimeline",
    "normalize_text",
    "TrjConfig",
    "clamp_window",
    "compute_alpha",
    "compute_beta",
    "jitter_window",
    "seed_window",
    "NaqDataset",
    "generate_naq",
    "subsample",
    "EvalReport",
    "Prediction",
    "evaluate",
    "interval_iou",
    "recall_at_k",
]

__version__ = "0.1.0"

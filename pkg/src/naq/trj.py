"""Temporal response jittering: narration timestamps -> response windows.

A narration at time ``t`` first receives a seed window
``[t - beta / (2 * alpha), t + beta / (2 * alpha)]`` where ``beta`` is the
video's mean gap between consecutive narrations and ``alpha`` the average of
those means across videos; the ratio is read as seconds. The seed is then
randomly expanded and shifted: with half-width ``D`` and center ``c``, draw
``s`` uniform on [1, S] and ``dt`` uniform on [-(s-1)*D, (s-1)*D] and emit
``[(c - dt) - s*D, (c - dt) + s*D]``, which always contains the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .annotations import TemporalWindow


@dataclass(frozen=True)
class TrjConfig:
    """Jittering parameters.

    ``alpha_sec`` may be left None, in which case the dataset builder derives
    it from the corpus at hand (mean of the per-video gap means).
    """

    scale_max: float = 5.0
    alpha_sec: float | None = None
    clamp_to_video: bool = True

    def __post_init__(self):
        if not (self.scale_max >= 1.0 and math.isfinite(self.scale_max)):
            raise ValueError(f"scale_max must be >= 1, got {self.scale_max}")
        if self.alpha_sec is not None and not (self.alpha_sec > 0):
            raise ValueError(f"alpha_sec must be > 0, got {self.alpha_sec}")


@dataclass(frozen=True)
class JitterDraw:
    """The random quantities behind one jittered window."""

    s: float
    delta_t: float
    t_max: float

    def __post_init__(self):
        if self.s < 1.0:
            raise ValueError(f"expansion factor {self.s} < 1")
        if abs(self.delta_t) > self.t_max:
            raise ValueError(f"|delta_t|={abs(self.delta_t)} exceeds t_max={self.t_max}")


def compute_beta(timestamps: list[float]) -> float:
    """Mean gap between consecutive timestamps of one video.

    Requires a sorted list with at least two entries.
    """
    if len(timestamps) < 2:
        raise ValueError(f"insufficient narrations: need >= 2, got {len(timestamps)}")
    gaps = [b - a for a, b in zip(timestamps, timestamps[1:])]
    if any(g < 0 for g in gaps):
        raise ValueError("timestamps not sorted")
    return sum(gaps) / len(gaps)


def compute_alpha(betas: list[float]) -> float:
    """Mean of the per-video gap means; undefined betas are excluded by the caller."""
    if not betas:
        raise ValueError("cannot average an empty list of betas")
    if any(b < 0 for b in betas):
        raise ValueError("negative beta")
    return sum(betas) / len(betas)


def seed_window(t_i: float, beta_j: float, alpha: float) -> TemporalWindow:
    """Seed window centered on a narration timestamp, half-width beta/(2*alpha)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if t_i < 0:
        raise ValueError(f"negative timestamp {t_i}")
    half = beta_j / (2.0 * alpha)
    return TemporalWindow(t_i - half, t_i + half)


def jitter_window(
    seed: TemporalWindow, cfg: TrjConfig, rng: np.random.Generator
) -> tuple[TemporalWindow, JitterDraw]:
    """Randomized expansion and translation of a seed window.

    Consumes exactly two uniforms from ``rng`` (first for the expansion
    factor, then for the translation). The returned window always contains
    the seed; with scale_max == 1 it is the seed itself.
    """
    half = (seed.end_sec - seed.start_sec) / 2.0
    center = (seed.start_sec + seed.end_sec) / 2.0
    u = float(rng.random())
    s = 1.0 + u * (cfg.scale_max - 1.0)
    t_max = (s - 1.0) * half
    v = float(rng.random())
    delta_t = (2.0 * v - 1.0) * t_max
    if s == 1.0:
        return seed, JitterDraw(1.0, 0.0, 0.0)
    shifted = center - delta_t
    # Guard against float rounding: the seed is contained by construction,
    # keep it contained bit-exactly.
    start = min(shifted - s * half, seed.start_sec)
    end = max(shifted + s * half, seed.end_sec)
    return TemporalWindow(start, end), JitterDraw(s, delta_t, t_max)


def clamp_window(w: TemporalWindow, duration: float) -> tuple[TemporalWindow, bool]:
    """Clamp a window to [0, duration].

    Returns the clamped window and a degenerate flag; windows entirely
    outside the video collapse to a zero-width window at the nearer boundary.
    """
    if duration <= 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    start = max(0.0, w.start_sec)
    end = min(duration, w.end_sec)
    if start > end:
        edge = 0.0 if w.end_sec < 0 else duration
        return TemporalWindow(edge, edge), True
    return TemporalWindow(start, end), start == end

"""Synthetic narrated-video corpus generator.

Each video is a timeline of non-overlapping events, one event roughly every
``narration_period_steps`` synthetic seconds, each spanning a couple of
seconds (about 2% of the video by default). Every event emits a declarative
narration at its midpoint ("C <verb> the <object> in the <place>"), giving
the configured narration density. Per-timestep features are noisy embeddings
of the active event's tokens from a seed-fixed embedding table, plus two
phase channels that ramp across the event (a span head has no other way to
tell an event's first step from its last; see notes in the repo docs).
Interrogative queries are instantiated from a fixed template set over a
sparse, popularity-weighted subset of events, so that object query counts
follow a long tail while every object keeps dense narration coverage.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import annotations as ann
from . import trj
from .naqgen import fnv1a64

QUERY_TEMPLATES = (
    "Where is X before/after Y?",
    "Where did I put X?",
    "Where is X?",
    "What did I put in X?",
    "How many X's?",
    "In what location did I see X?",
    "What X did I Y?",
    "What X is Y?",
    "State?",
    "Who did I interact with during Y?",
)

# Slots each template needs from an event: X = object, Y = verb, P = place.
_TEMPLATE_SLOTS = {
    "Where is X before/after Y?": ("object", "verb"),
    "Where did I put X?": ("object",),
    "Where is X?": ("object",),
    "What did I put in X?": ("object",),
    "How many X's?": ("object",),
    "In what location did I see X?": ("object",),
    "What X did I Y?": ("object", "verb"),
    "What X is Y?": ("object", "place"),
    "State?": ("object",),
    "Who did I interact with during Y?": ("verb",),
}


@dataclass(frozen=True)
class WorldConfig:
    """Knobs of the synthetic corpus; defaults target the desk-scale study.

    Defaults keep the response-width-to-video ratio near 0.02 and the
    narration density near 13 sentences per 60 steps (1 step = 1 synthetic
    second). Train queries are deliberately scarce (``max_train_queries``)
    while val/test use a denser spacing for stable evaluation.
    """

    n_videos: int = 960
    steps_per_video: int = 128
    n_verbs: int = 30
    n_objects: int = 100
    n_places: int = 15
    object_zipf_exponent: float = 1.5
    narration_period_steps: float = 4.6
    response_width_steps_mean: float = 2.56
    query_templates: tuple[str, ...] = QUERY_TEMPLATES
    split_fractions: tuple[float, float, float] = (0.75, 0.15, 0.10)
    feature_dim: int = 32
    phase_dims: int = 2
    noise_scale: float = 0.1
    query_spacing_steps: float = 84.0
    eval_query_spacing_steps: float = 42.0
    max_train_queries: int | None = 200
    seed: int = 11

    def __post_init__(self):
        if self.n_videos < 1 or self.steps_per_video < 8:
            raise ValueError("need at least one video of at least 8 steps")
        if min(self.n_verbs, self.n_objects, self.n_places) < 1:
            raise ValueError("empty vocabulary")
        unknown = [t for t in self.query_templates if t not in _TEMPLATE_SLOTS]
        if unknown:
            raise ValueError(f"unknown query templates: {unknown}")
        if not self.query_templates:
            raise ValueError("query_templates must not be empty")
        total = sum(self.split_fractions)
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions):
            raise ValueError("split_fractions must be three non-negative numbers")
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"split fractions must sum to 1, got {total}")
        if self.response_width_steps_mean < 1:
            raise ValueError("response width mean must be >= 1 step")
        if self.narration_period_steps < self.response_width_steps_mean + 1:
            raise ValueError(
                "narration_period_steps must exceed response_width_steps_mean + 1 "
                "so events stay non-overlapping"
            )
        if not 0 <= self.phase_dims < self.feature_dim:
            raise ValueError("phase_dims must leave room for content dimensions")


@dataclass(frozen=True)
class Event:
    """A contiguous activity with its ground-truth temporal extent."""

    verb: str | None
    object: str | None
    place: str | None
    window: ann.TemporalWindow


@dataclass
class SynthCorpus:
    videos: list[ann.VideoTimeline]
    narrations: list[ann.Narration]
    nlq: list[ann.NlqSample]
    events: dict[str, list[Event]]
    object_counts: dict[str, int]
    config: WorldConfig

    def split_nlq(self, split: str) -> list[ann.NlqSample]:
        return [s for s in self.nlq if s.split == split]


def verb_token(i: int) -> str:
    return f"verb{i:02d}"


def object_token(i: int) -> str:
    return f"object{i:03d}"


def place_token(i: int) -> str:
    return f"place{i:02d}"


def pluralize(token: str) -> str:
    if token.endswith(("s", "x", "z", "ch", "sh")):
        return token + "es"
    return token + "s"


def render_narration(event: Event) -> str:
    """Declarative sentence describing an event, tokens kept verbatim."""
    return f"C {event.verb} the {event.object} in the {event.place}"


def render_query(
    event: Event,
    template: str,
    *,
    video_uid: str = "v0",
    split: str = "train",
    query_id: str | None = None,
) -> ann.NlqSample:
    """Instantiate a query template over an event; window = event window."""
    slots = _TEMPLATE_SLOTS.get(template)
    if slots is None:
        raise ValueError(f"unknown template {template!r}")
    values = {name: getattr(event, name) for name in slots}
    missing = [name for name, value in values.items() if not value]
    if missing:
        raise ValueError(f"template {template!r} needs event slot(s) {missing}")
    obj, verb, place = event.object, event.verb, event.place
    texts = {
        "Where is X before/after Y?": f"Where is the {obj} before the {verb}?",
        "Where did I put X?": f"Where did I put the {obj}?",
        "Where is X?": f"Where is the {obj}?",
        "What did I put in X?": f"What did I put in the {obj}?",
        "How many X's?": f"How many {pluralize(obj)}?" if obj else "",
        "In what location did I see X?": f"In what location did I see the {obj}?",
        "What X did I Y?": f"What {obj} did I {verb}?",
        "What X is Y?": f"What {obj} is in the {place}?",
        "State?": f"What is the state of the {obj}?",
        "Who did I interact with during Y?": f"Who did I interact with during the {verb}?",
    }
    return ann.NlqSample(
        video_uid=video_uid,
        query=texts[template],
        window=event.window,
        split=split,
        template=template,
        object=obj if "object" in slots else None,
        query_id=query_id,
    )


def _split_counts(cfg: WorldConfig) -> tuple[int, int, int]:
    n_train = int(round(cfg.split_fractions[0] * cfg.n_videos))
    n_val = int(round(cfg.split_fractions[1] * cfg.n_videos))
    n_val = min(n_val, cfg.n_videos - n_train)
    return n_train, n_val, cfg.n_videos - n_train - n_val


def _tile_events(cfg: WorldConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Non-overlapping (start, width) pairs covering a sparse event timeline."""
    width_mean = cfg.response_width_steps_mean
    gap_mean = cfg.narration_period_steps - width_mean
    max_events = min(cfg.n_verbs, cfg.n_objects)

    def draw(mean: float) -> int:
        base = int(mean)
        return base + (1 if rng.random() < mean - base else 0)

    spans = []
    start = int(rng.integers(0, max(1, int(gap_mean)) + 1))
    while len(spans) < max_events:
        width = max(1, draw(width_mean))
        if start + width > cfg.steps_per_video:
            break
        spans.append((start, width))
        start += width + max(1, draw(gap_mean))
    return spans


def generate_world(cfg: WorldConfig) -> SynthCorpus:
    """Deterministically build the corpus: videos, features, narrations, queries."""
    expected_events = int(cfg.steps_per_video / cfg.narration_period_steps)
    if expected_events > min(cfg.n_verbs, cfg.n_objects):
        raise ValueError(
            f"vocab too small for {expected_events} distinct events per video: "
            f"have {cfg.n_verbs} verbs and {cfg.n_objects} objects"
        )

    content_dim = cfg.feature_dim - cfg.phase_dims
    emb_rng = np.random.default_rng(fnv1a64(cfg.seed, "embeddings"))
    n_tokens = cfg.n_verbs + cfg.n_objects + cfg.n_places
    table = emb_rng.standard_normal((n_tokens, content_dim))
    table /= np.linalg.norm(table, axis=1, keepdims=True)

    ranks = np.arange(1, cfg.n_objects + 1, dtype=np.float64)
    zipf_p = ranks ** (-cfg.object_zipf_exponent)
    zipf_p /= zipf_p.sum()

    n_train, n_val, n_test = _split_counts(cfg)
    split_of = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    order = np.random.default_rng(fnv1a64(cfg.seed, "splits")).permutation(cfg.n_videos)
    splits = [""] * cfg.n_videos
    for slot, video_idx in enumerate(order):
        splits[video_idx] = split_of[slot]

    videos: list[ann.VideoTimeline] = []
    narrations: list[ann.Narration] = []
    nlq: list[ann.NlqSample] = []
    events_by_video: dict[str, list[Event]] = {}
    noise_sigma = cfg.noise_scale / np.sqrt(cfg.feature_dim)

    for i in range(cfg.n_videos):
        uid = f"video{i:04d}"
        split = splits[i]
        rng = np.random.default_rng(fnv1a64(cfg.seed, "video", i))
        spans = _tile_events(cfg, rng)
        n_events = len(spans)
        verb_ids = rng.choice(cfg.n_verbs, size=n_events, replace=False)
        object_ids = rng.choice(cfg.n_objects, size=n_events, replace=False, p=zipf_p)
        place_ids = rng.integers(0, cfg.n_places, size=n_events)

        features = rng.standard_normal((cfg.steps_per_video, cfg.feature_dim))
        features *= noise_sigma
        events: list[Event] = []
        video_narrations: list[ann.Narration] = []
        for k, (start, width) in enumerate(spans):
            event = Event(
                verb=verb_token(int(verb_ids[k])),
                object=object_token(int(object_ids[k])),
                place=place_token(int(place_ids[k])),
                window=ann.TemporalWindow(float(start), float(start + width)),
            )
            events.append(event)
            rows = (
                table[int(verb_ids[k])]
                + table[cfg.n_verbs + int(object_ids[k])]
                + table[cfg.n_verbs + cfg.n_objects + int(place_ids[k])]
            ) / 3.0
            features[start : start + width, : content_dim] += rows
            if cfg.phase_dims:
                phase = (np.arange(width) + 0.5) / width
                features[start : start + width, content_dim] += 1.0 - phase
                if cfg.phase_dims > 1:
                    features[start : start + width, content_dim + 1] += phase
            video_narrations.append(
                ann.Narration(uid, start + width / 2.0, render_narration(event), k)
            )

        events_by_video[uid] = events
        narrations.extend(video_narrations)
        times = [n.timestamp_sec for n in video_narrations]
        videos.append(
            ann.VideoTimeline(
                video_uid=uid,
                duration_sec=float(cfg.steps_per_video),
                narrations=video_narrations,
                beta_sec=trj.compute_beta(times) if len(times) >= 2 else None,
                features=features.astype(np.float32),
                split=split,
            )
        )

        spacing = (
            cfg.query_spacing_steps if split == "train" else cfg.eval_query_spacing_steps
        )
        n_queries = max(1, int(round(cfg.steps_per_video / spacing)))
        n_queries = min(n_queries, n_events)
        if n_queries == 0:
            continue
        qrng = np.random.default_rng(fnv1a64(cfg.seed, "queries", i))
        weights = zipf_p[object_ids]
        weights = weights / weights.sum()
        chosen = qrng.choice(n_events, size=n_queries, replace=False, p=weights)
        for j, event_idx in enumerate(sorted(int(c) for c in chosen)):
            template = cfg.query_templates[int(qrng.integers(len(cfg.query_templates)))]
            nlq.append(
                render_query(
                    events[event_idx],
                    template,
                    video_uid=uid,
                    split=split,
                    query_id=f"{uid}:q{j}",
                )
            )

    if cfg.max_train_queries is not None:
        train_positions = [idx for idx, s in enumerate(nlq) if s.split == "train"]
        if len(train_positions) > cfg.max_train_queries:
            cap_rng = np.random.default_rng(fnv1a64(cfg.seed, "traincap"))
            keep = cap_rng.permutation(len(train_positions))[: cfg.max_train_queries]
            kept = {train_positions[k] for k in keep}
            nlq = [s for idx, s in enumerate(nlq) if s.split != "train" or idx in kept]

    object_counts: dict[str, int] = {}
    for s in nlq:
        if s.split == "train" and s.object is not None:
            object_counts[s.object] = object_counts.get(s.object, 0) + 1

    return SynthCorpus(
        videos=videos,
        narrations=narrations,
        nlq=nlq,
        events=events_by_video,
        object_counts=object_counts,
        config=cfg,
    )


def config_digest(cfg: WorldConfig) -> str:
    return hashlib.sha256(
        json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    ).hexdigest()


def save_world(corpus: SynthCorpus, out_dir: str | Path) -> Path:
    """Write videos/narrations/nlq jsonl files, NAQF features and a manifest."""
    out_dir = Path(out_dir)
    features_dir = out_dir / "features"
    features_dir.mkdir(parents=True, exist_ok=True)
    ann.write_jsonl(out_dir / "videos.jsonl", ann.write_videos, corpus.videos)
    ann.write_jsonl(out_dir / "narrations.jsonl", ann.write_narrations, corpus.narrations)
    ann.write_jsonl(out_dir / "nlq.jsonl", ann.write_nlq, corpus.nlq)
    for video in corpus.videos:
        if video.features is not None:
            ann.write_features(features_dir / f"{video.video_uid}.naqf", video.features)
    manifest = {
        "config": asdict(corpus.config),
        "config_digest": config_digest(corpus.config),
        "n_videos": len(corpus.videos),
        "n_narrations": len(corpus.narrations),
        "n_queries": {
            split: len(corpus.split_nlq(split)) for split in ann.SPLITS
        },
        "object_counts": {k: corpus.object_counts[k] for k in sorted(corpus.object_counts)},
    }
    with open(out_dir / "world_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir

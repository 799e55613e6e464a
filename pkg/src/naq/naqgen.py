"""Build narration-query datasets from a corpus of narrated videos.

Every retained narration contributes one sample: its normalized text becomes
the query and its jittered seed window becomes the response. Randomness is
derived per narration from a 64-bit FNV-1a hash of (global seed, video_uid,
narration index), so generation is order-independent across videos and
embarrassingly parallel in principle.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import annotations as ann
from . import trj

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(*parts: int | str | float) -> int:
    """64-bit FNV-1a hash over length-prefixed encodings of the parts."""
    h = _FNV_OFFSET
    for part in parts:
        if isinstance(part, bool):
            raise TypeError("ambiguous bool part")
        if isinstance(part, int):
            data = (part & _MASK64).to_bytes(8, "little")
        elif isinstance(part, float):
            data = repr(part).encode("utf-8")
        else:
            data = part.encode("utf-8")
        for byte in len(data).to_bytes(4, "little") + data:
            h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def corpus_digest(corpus: list[ann.VideoTimeline]) -> str:
    """SHA-256 over a canonical rendering of video metadata and narrations."""
    sha = hashlib.sha256()
    for video in sorted(corpus, key=lambda v: v.video_uid):
        sha.update(
            json.dumps(
                [
                    video.video_uid,
                    video.duration_sec,
                    [[n.timestamp_sec, n.text] for n in video.narrations],
                ]
            ).encode("utf-8")
        )
        sha.update(b"\n")
    return sha.hexdigest()


@dataclass(frozen=True)
class GenProvenance:
    global_seed: int
    scale_max: float
    alpha_sec: float
    clamp_to_video: bool
    corpus_digest: str
    subsample_fraction: float | None = None
    subsample_seed: int | None = None


@dataclass
class NaqDataset:
    samples: list[ann.NaqSample]
    provenance: GenProvenance
    counts: dict[str, int] = field(default_factory=dict)
    n_dropped: int = 0
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if sum(self.counts.values()) != len(self.samples):
            raise ValueError("per-video counts do not sum to the sample count")


def resolve_alpha(corpus: list[ann.VideoTimeline], cfg: trj.TrjConfig) -> float:
    """Alpha from the config when set, otherwise derived from this corpus."""
    if cfg.alpha_sec is not None:
        return cfg.alpha_sec
    betas = []
    for video in corpus:
        times = [n.timestamp_sec for n in video.narrations]
        if len(times) >= 2:
            betas.append(trj.compute_beta(times))
    if not betas:
        raise ValueError(
            "alpha underivable: no video has two or more narrations and "
            "TrjConfig.alpha_sec is not set"
        )
    return trj.compute_alpha(betas)


def generate_naq(
    corpus: list[ann.VideoTimeline], cfg: trj.TrjConfig, global_seed: int
) -> NaqDataset:
    """Convert every usable narration in the corpus into a query sample.

    Per narration: normalize the text, build the seed window, jitter it with
    a sub-seeded generator, clamp to the video (when configured) and drop
    zero-width results. Videos with a single narration use the global alpha
    in place of their undefined gap mean. Output is sorted by
    (video_uid, narration_index) and is a pure function of
    (corpus, cfg, global_seed).
    """
    if not corpus:
        raise ValueError("empty corpus")
    alpha = resolve_alpha(corpus, cfg)

    samples: list[ann.NaqSample] = []
    counts: dict[str, int] = {}
    dropped = 0
    for video in sorted(corpus, key=lambda v: v.video_uid):
        times = [n.timestamp_sec for n in video.narrations]
        beta = trj.compute_beta(times) if len(times) >= 2 else alpha
        kept = 0
        for narration in video.narrations:
            query = ann.normalize_text(narration.text)
            if not query:
                dropped += 1
                continue
            seed = trj.seed_window(narration.timestamp_sec, beta, alpha)
            rng = np.random.default_rng(
                fnv1a64(global_seed, video.video_uid, narration.index)
            )
            window, _ = trj.jitter_window(seed, cfg, rng)
            if cfg.clamp_to_video:
                window, degenerate = trj.clamp_window(window, video.duration_sec)
                if degenerate:
                    dropped += 1
                    continue
            if window.end_sec <= window.start_sec:
                dropped += 1
                continue
            samples.append(
                ann.NaqSample(video.video_uid, query, window, narration.index)
            )
            kept += 1
        if kept:
            counts[video.video_uid] = kept

    notes: list[str] = []
    if not samples:
        notes.append("all narrations were dropped; dataset is empty")
        warnings.warn(notes[-1], stacklevel=2)
    return NaqDataset(
        samples=samples,
        provenance=GenProvenance(
            global_seed=global_seed,
            scale_max=cfg.scale_max,
            alpha_sec=alpha,
            clamp_to_video=cfg.clamp_to_video,
            corpus_digest=corpus_digest(corpus),
        ),
        counts=counts,
        n_dropped=dropped,
        warnings=notes,
    )


def subsample(dataset: NaqDataset, fraction: float, seed: int) -> NaqDataset:
    """Uniform sample without replacement of floor(fraction * N) items.

    Implemented as a prefix of a single seeded permutation, so subsamples are
    nested: subsample(f1) is a subset of subsample(f2) whenever f1 <= f2 and
    the seed matches. fraction=1 returns the dataset unchanged.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if fraction == 1.0:
        return dataset
    n_keep = int(fraction * len(dataset.samples))
    order = np.random.default_rng(seed).permutation(len(dataset.samples))
    keep = np.sort(order[:n_keep])
    samples = [dataset.samples[i] for i in keep]
    counts: dict[str, int] = {}
    for s in samples:
        counts[s.video_uid] = counts.get(s.video_uid, 0) + 1
    return NaqDataset(
        samples=samples,
        provenance=replace(
            dataset.provenance, subsample_fraction=fraction, subsample_seed=seed
        ),
        counts=counts,
        n_dropped=dataset.n_dropped,
        warnings=list(dataset.warnings),
    )


def manifest_dict(dataset: NaqDataset) -> dict:
    prov = dataset.provenance
    return {
        "global_seed": prov.global_seed,
        "scale_max": prov.scale_max,
        "alpha_sec": prov.alpha_sec,
        "clamp_to_video": prov.clamp_to_video,
        "corpus_digest": prov.corpus_digest,
        "subsample_fraction": prov.subsample_fraction,
        "subsample_seed": prov.subsample_seed,
        "n_samples": len(dataset.samples),
        "n_dropped": dataset.n_dropped,
        "warnings": dataset.warnings,
        "counts": {uid: dataset.counts[uid] for uid in sorted(dataset.counts)},
    }


def save_naq(dataset: NaqDataset, out_dir: str | Path) -> Path:
    """Write naq.jsonl plus its generation manifest; returns the jsonl path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    naq_path = out_dir / "naq.jsonl"
    ann.write_jsonl(naq_path, ann.write_naq, dataset.samples)
    with open(out_dir / "naq_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest_dict(dataset), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return naq_path


def load_corpus(
    videos_path: str | Path,
    narrations_path: str | Path,
    features_dir: str | Path | None = None,
) -> list[ann.VideoTimeline]:
    """Assemble timelines from videos.jsonl + narrations.jsonl (+ features)."""
    videos = ann.parse_videos(ann.read_jsonl(videos_path))
    narrations = ann.parse_narrations(ann.read_jsonl(narrations_path))
    by_uid: dict[str, list[ann.Narration]] = {}
    for narration in narrations:
        by_uid.setdefault(narration.video_uid, []).append(narration)
    known = {v.video_uid for v in videos}
    unknown = sorted(set(by_uid) - known)
    if unknown:
        raise ValueError(f"narrations reference unknown videos: {unknown[:5]}")
    out = []
    for video in sorted(videos, key=lambda v: v.video_uid):
        narrs = by_uid.get(video.video_uid, [])
        times = [n.timestamp_sec for n in narrs]
        beta = trj.compute_beta(times) if len(times) >= 2 else None
        features = None
        if features_dir is not None:
            path = Path(features_dir) / f"{video.video_uid}.naqf"
            if path.exists():
                features = ann.read_features(path)
        out.append(
            ann.VideoTimeline(
                video_uid=video.video_uid,
                duration_sec=video.duration_sec,
                narrations=narrs,
                beta_sec=beta,
                features=features,
                split=video.split,
            )
        )
    return out

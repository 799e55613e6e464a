"""Canonical data model and file I/O for narrations, queries and videos.

All corpus files are JSON-per-line text files with fixed field order so that
identical inputs always serialize to identical bytes:

* ``narrations.jsonl``: ``{"video_uid", "timestamp_sec", "narration_text"}``
* ``nlq.jsonl``: ``{"video_uid", "query", "start_sec", "end_sec", "split"}``
  plus optional ``"template"``, ``"object"``, ``"query_id"``
* ``naq.jsonl``: ``{"video_uid", "query", "start_sec", "end_sec",
  "narration_index", "source": "naq"}``
* ``videos.jsonl``: ``{"video_uid", "duration_sec"}`` plus optional
  ``"split"``, ``"feature_file"``

Per-video feature matrices use the ``NAQF`` binary layout: the 4 magic bytes
``NAQF``, two little-endian uint32 giving the number of timesteps ``T`` and
the feature dimension ``d``, then ``T * d`` little-endian float32 values in
row-major order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np

SPLITS = ("train", "val", "test")

FEATURE_MAGIC = b"NAQF"


class ParseError(ValueError):
    """Raised for malformed or rejected records; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class TemporalWindow:
    """Closed interval [start_sec, end_sec] on a video timeline.

    Values may be negative before clamping; clamped windows are >= 0.
    """

    start_sec: float
    end_sec: float

    def __post_init__(self):
        if not (math.isfinite(self.start_sec) and math.isfinite(self.end_sec)):
            raise ValueError(f"non-finite window [{self.start_sec}, {self.end_sec}]")
        if self.start_sec > self.end_sec:
            raise ValueError(f"inverted window [{self.start_sec}, {self.end_sec}]")

    @property
    def width(self) -> float:
        return self.end_sec - self.start_sec

    @property
    def center(self) -> float:
        return (self.start_sec + self.end_sec) / 2.0


@dataclass(frozen=True)
class Narration:
    """One timestamped free-form sentence tied to a video."""

    video_uid: str
    timestamp_sec: float
    text: str
    index: int = 0

    def __post_init__(self):
        if self.timestamp_sec < 0:
            raise ValueError(f"negative timestamp {self.timestamp_sec}")
        if not self.text:
            raise ValueError("empty narration text")


@dataclass(frozen=True)
class NlqSample:
    """One (video, query, response window) supervision record."""

    video_uid: str
    query: str
    window: TemporalWindow
    split: str
    template: str | None = None
    object: str | None = None
    query_id: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}, expected one of {SPLITS}")


@dataclass(frozen=True)
class NaqSample:
    """A narration converted into a query with an inferred response window."""

    video_uid: str
    query: str
    window: TemporalWindow
    narration_index: int

    def __post_init__(self):
        if self.window.end_sec <= self.window.start_sec:
            raise ValueError("zero-width response window rejected at emit time")
        if not self.query:
            raise ValueError("empty query text")


@dataclass
class VideoTimeline:
    """Per-video metadata: duration, sorted narrations, mean narration gap."""

    video_uid: str
    duration_sec: float
    narrations: list[Narration] = field(default_factory=list)
    beta_sec: float | None = None
    features: np.ndarray | None = None
    split: str | None = None

    def __post_init__(self):
        if self.duration_sec <= 0:
            raise ValueError(f"non-positive duration for {self.video_uid}")
        times = [n.timestamp_sec for n in self.narrations]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError(f"narrations of {self.video_uid} not sorted by timestamp")
        if times and times[-1] > self.duration_sec:
            raise ValueError(
                f"narration at {times[-1]}s beyond duration {self.duration_sec}s "
                f"of {self.video_uid}"
            )
        if self.beta_sec is not None and self.beta_sec < 0:
            raise ValueError("negative beta_sec")


def normalize_text(raw: str) -> str:
    """Strip '#'-tagged annotation tokens and collapse whitespace.

    Total function: returns "" when nothing remains (e.g. for "#unsure").
    """
    kept = [tok for tok in raw.split() if not tok.startswith("#")]
    return " ".join(kept)


def _get(record: dict, key: str, line_no: int):
    try:
        return record[key]
    except KeyError:
        raise ParseError(f"missing field {key!r}", line_no) from None


def _json_lines(lines: Iterable[str]) -> Iterable[tuple[int, dict]]:
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line_no) from None
        if not isinstance(record, dict):
            raise ParseError("record is not a JSON object", line_no)
        yield line_no, record


def parse_narrations(lines: Iterable[str]) -> list[Narration]:
    """Parse a narrations.jsonl stream into per-video sorted narrations.

    Records are grouped by video (groups ordered by video_uid), sorted by
    timestamp within each video, and assigned 0-based indices after sorting.
    Ties on timestamp are ordered by text so the output is independent of the
    input permutation; narrations with identical timestamps are kept, not
    deduplicated. Narrations whose normalized text is empty (pure annotation
    tags such as "#unsure") are dropped at ingestion.

    Raises ParseError (with the line number) for malformed records or
    negative timestamps.
    """
    raw: list[tuple[str, float, str]] = []
    for line_no, record in _json_lines(lines):
        video_uid = str(_get(record, "video_uid", line_no))
        timestamp = _get(record, "timestamp_sec", line_no)
        text = str(_get(record, "narration_text", line_no))
        if not isinstance(timestamp, (int, float)) or isinstance(timestamp, bool):
            raise ParseError(f"timestamp_sec must be a number, got {timestamp!r}", line_no)
        timestamp = float(timestamp)
        if not math.isfinite(timestamp):
            raise ParseError(f"non-finite timestamp_sec {timestamp!r}", line_no)
        if timestamp < 0:
            raise ParseError(f"negative timestamp_sec {timestamp}", line_no)
        if not normalize_text(text):
            continue
        raw.append((video_uid, timestamp, text))

    raw.sort(key=lambda r: (r[0], r[1], r[2]))
    out: list[Narration] = []
    index = 0
    prev_uid: str | None = None
    for video_uid, timestamp, text in raw:
        if video_uid != prev_uid:
            index = 0
            prev_uid = video_uid
        out.append(Narration(video_uid, timestamp, text, index))
        index += 1
    return out


def parse_nlq(
    lines: Iterable[str],
    durations: Mapping[str, float] | None = None,
) -> list[NlqSample]:
    """Parse an nlq.jsonl stream into validated samples.

    When a ``durations`` table is supplied, each window is checked against
    the owning video's duration. Inverted windows and unknown split literals
    are rejected with a ParseError carrying the line number.
    """
    out: list[NlqSample] = []
    for line_no, record in _json_lines(lines):
        video_uid = str(_get(record, "video_uid", line_no))
        query = str(_get(record, "query", line_no))
        start = float(_get(record, "start_sec", line_no))
        end = float(_get(record, "end_sec", line_no))
        split = _get(record, "split", line_no)
        if start > end:
            raise ParseError(f"inverted window [{start}, {end}]", line_no)
        if split not in SPLITS:
            raise ParseError(f"unknown split {split!r}", line_no)
        if durations is not None:
            if video_uid not in durations:
                raise ParseError(f"unknown video {video_uid!r}", line_no)
            duration = durations[video_uid]
            if start < 0 or end > duration:
                raise ParseError(
                    f"window [{start}, {end}] outside video duration {duration}", line_no
                )
        template = record.get("template")
        obj = record.get("object")
        query_id = record.get("query_id")
        out.append(
            NlqSample(
                video_uid=video_uid,
                query=query,
                window=TemporalWindow(start, end),
                split=split,
                template=None if template is None else str(template),
                object=None if obj is None else str(obj),
                query_id=None if query_id is None else str(query_id),
            )
        )
    return out


def parse_naq(lines: Iterable[str]) -> list[NaqSample]:
    """Parse a naq.jsonl stream (the inverse of write_naq)."""
    out: list[NaqSample] = []
    for line_no, record in _json_lines(lines):
        start = float(_get(record, "start_sec", line_no))
        end = float(_get(record, "end_sec", line_no))
        if end <= start:
            raise ParseError(f"zero-width or inverted window [{start}, {end}]", line_no)
        out.append(
            NaqSample(
                video_uid=str(_get(record, "video_uid", line_no)),
                query=str(_get(record, "query", line_no)),
                window=TemporalWindow(start, end),
                narration_index=int(_get(record, "narration_index", line_no)),
            )
        )
    return out


def write_naq(samples: Iterable[NaqSample], sink: IO[str]) -> int:
    """Write samples as naq.jsonl, one record per line in fixed field order.

    Returns the number of records written. Output is byte-identical for
    identical input.
    """
    count = 0
    for s in samples:
        record = {
            "video_uid": s.video_uid,
            "query": s.query,
            "start_sec": s.window.start_sec,
            "end_sec": s.window.end_sec,
            "narration_index": s.narration_index,
            "source": "naq",
        }
        sink.write(json.dumps(record) + "\n")
        count += 1
    return count


def write_narrations(narrations: Iterable[Narration], sink: IO[str]) -> int:
    count = 0
    for n in narrations:
        record = {
            "video_uid": n.video_uid,
            "timestamp_sec": n.timestamp_sec,
            "narration_text": n.text,
        }
        sink.write(json.dumps(record) + "\n")
        count += 1
    return count


def write_nlq(samples: Iterable[NlqSample], sink: IO[str]) -> int:
    count = 0
    for s in samples:
        record: dict = {
            "video_uid": s.video_uid,
            "query": s.query,
            "start_sec": s.window.start_sec,
            "end_sec": s.window.end_sec,
            "split": s.split,
        }
        if s.template is not None:
            record["template"] = s.template
        if s.object is not None:
            record["object"] = s.object
        if s.query_id is not None:
            record["query_id"] = s.query_id
        sink.write(json.dumps(record) + "\n")
        count += 1
    return count


def write_videos(videos: Iterable[VideoTimeline], sink: IO[str]) -> int:
    count = 0
    for v in videos:
        record: dict = {"video_uid": v.video_uid, "duration_sec": v.duration_sec}
        if v.split is not None:
            record["split"] = v.split
        sink.write(json.dumps(record) + "\n")
        count += 1
    return count


def parse_videos(lines: Iterable[str]) -> list[VideoTimeline]:
    """Parse a videos.jsonl stream into timelines without narrations."""
    out: list[VideoTimeline] = []
    for line_no, record in _json_lines(lines):
        split = record.get("split")
        if split is not None and split not in SPLITS:
            raise ParseError(f"unknown split {split!r}", line_no)
        out.append(
            VideoTimeline(
                video_uid=str(_get(record, "video_uid", line_no)),
                duration_sec=float(_get(record, "duration_sec", line_no)),
                split=split,
            )
        )
    return out


def write_features(path: str | Path, features: np.ndarray) -> None:
    """Write a T x d feature matrix in the NAQF binary layout."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def read_features(path: str | Path) -> np.ndarray:
    """Read a NAQF feature file back into a float32 array of shape (T, d)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated header")
        t_v, d = struct.unpack("<II", header)
        data = fh.read(4 * t_v * d)
        if len(data) != 4 * t_v * d:
            raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(data, dtype="<f4").reshape(t_v, d).copy()


def read_jsonl(path: str | Path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.readlines()


def write_jsonl(path: str | Path, writer, items) -> int:
    """Write items with one of the write_* functions; returns the count."""
    with open(path, "w", encoding="utf-8") as fh:
        return writer(items, fh)

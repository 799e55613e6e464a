"""Interval IoU, recall@k at IoU thresholds, and stratified evaluation reports.

The headline table is recall@k for k in {1, 5} at IoU thresholds {0.3, 0.5},
reported as percentages, plus their R@1 average ("mean R@1"). Reports can be
broken down by arbitrary query strata (e.g. query template or object shot
tier) and serialized to a fixed-schema CSV.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping

from .annotations import ParseError, TemporalWindow, _json_lines

K_VALUES = (1, 5)
IOU_THRESHOLDS = (0.3, 0.5)

REPORT_CSV_COLUMNS = ("stratum", "metric", "value", "n_queries")


@dataclass(frozen=True)
class Prediction:
    """Ranked candidate windows for one query, best first."""

    query_id: str
    windows: tuple[TemporalWindow, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.windows) < 1:
            raise ValueError(f"{self.query_id}: prediction list is empty")
        if len(self.windows) != len(self.scores):
            raise ValueError(f"{self.query_id}: windows/scores length mismatch")
        if any(b > a for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError(f"{self.query_id}: scores increase with rank")


@dataclass(frozen=True)
class ShotTier:
    """Object grouping by training-query count; bounds are inclusive."""

    name: str
    min_count: int
    max_count: int | None

    def contains(self, count: int) -> bool:
        if count < self.min_count:
            return False
        return self.max_count is None or count <= self.max_count


LOW_SHOT = ShotTier("low", 2, 10)
MID_SHOT = ShotTier("mid", 11, 50)
HIGH_SHOT = ShotTier("high", 51, None)
SHOT_TIERS = (LOW_SHOT, MID_SHOT, HIGH_SHOT)


@dataclass
class EvalReport:
    """Recall table over k x IoU cells plus the R@1 average, in percent."""

    recall: dict[tuple[int, float], float]
    mean_r1: float
    n_queries: int
    strata: dict[str, "EvalReport"] = field(default_factory=dict)

    def cell(self, k: int, m: float) -> float:
        return self.recall[(k, m)]


def interval_iou(a: TemporalWindow, b: TemporalWindow) -> float:
    """Intersection over union of two 1-D intervals; 0 when the union is empty."""
    inter = min(a.end_sec, b.end_sec) - max(a.start_sec, b.start_sec)
    if inter <= 0:
        return 0.0
    union = a.width + b.width - inter
    if union <= 0:
        return 0.0
    return inter / union


def _check_ground_truth(
    preds: Iterable[Prediction], gt: Mapping[str, TemporalWindow]
) -> None:
    missing = sorted({p.query_id for p in preds} - set(gt))
    if missing:
        raise KeyError(f"predictions without ground truth: {missing[:10]}")


def recall_at_k(
    preds: list[Prediction],
    gt: Mapping[str, TemporalWindow],
    k: int,
    m: float,
) -> float:
    """Percentage of queries whose top-k candidates contain a window with IoU >= m.

    Lists shorter than k are evaluated as-is. Raises KeyError listing query
    ids that have no ground truth.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _check_ground_truth(preds, gt)
    if not preds:
        raise ValueError("no queries to evaluate")
    hits = 0
    for pred in preds:
        target = gt[pred.query_id]
        if any(interval_iou(w, target) >= m for w in pred.windows[:k]):
            hits += 1
    return 100.0 * hits / len(preds)


def evaluate(
    preds: list[Prediction],
    gt: Mapping[str, TemporalWindow],
    strata: Mapping[str, str] | None = None,
) -> EvalReport:
    """Fill the k x IoU recall table, mean R@1, and optional per-stratum reports."""
    if not preds:
        raise ValueError("no queries to evaluate")
    _check_ground_truth(preds, gt)
    recall = {
        (k, m): recall_at_k(preds, gt, k, m) for k in K_VALUES for m in IOU_THRESHOLDS
    }
    report = EvalReport(
        recall=recall,
        mean_r1=(recall[(1, IOU_THRESHOLDS[0])] + recall[(1, IOU_THRESHOLDS[1])]) / 2.0,
        n_queries=len(preds),
    )
    if strata is not None:
        report.strata = stratify(preds, gt, strata)
    return report


def stratify(
    preds: list[Prediction],
    gt: Mapping[str, TemporalWindow],
    labels: Mapping[str, str],
) -> dict[str, EvalReport]:
    """Per-stratum evaluate() results; unlabeled queries are left out.

    Every labeled query must be present among the predictions.
    """
    present = {p.query_id for p in preds}
    missing = sorted(set(labels) - present)
    if missing:
        raise KeyError(f"labeled queries without predictions: {missing[:10]}")
    groups: dict[str, list[Prediction]] = {}
    for pred in preds:
        stratum = labels.get(pred.query_id)
        if stratum is not None:
            groups.setdefault(stratum, []).append(pred)
    return {name: evaluate(group, gt) for name, group in sorted(groups.items())}


def assign_shot_tier(object_counts: Mapping[str, int]) -> dict[str, ShotTier]:
    """Map each object to its shot tier; counts of 0 or 1 stay unassigned."""
    out: dict[str, ShotTier] = {}
    for obj, count in object_counts.items():
        if count < 0:
            raise ValueError(f"negative count for {obj!r}")
        for tier in SHOT_TIERS:
            if tier.contains(count):
                out[obj] = tier
                break
    return out


def read_predictions(lines: Iterable[str]) -> list[Prediction]:
    """Parse predictions.jsonl: {"query_id", "windows": [{start_sec, end_sec, score}]}."""
    out = []
    for line_no, record in _json_lines(lines):
        try:
            query_id = str(record["query_id"])
            entries = record["windows"]
            windows = tuple(
                TemporalWindow(float(w["start_sec"]), float(w["end_sec"]))
                for w in entries
            )
            scores = tuple(float(w["score"]) for w in entries)
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", line_no) from None
        try:
            out.append(Prediction(query_id, windows, scores))
        except ValueError as exc:
            raise ParseError(str(exc), line_no) from None
    return out


def write_predictions(preds: Iterable[Prediction], sink: IO[str]) -> int:
    count = 0
    for p in preds:
        record = {
            "query_id": p.query_id,
            "windows": [
                {"start_sec": w.start_sec, "end_sec": w.end_sec, "score": s}
                for w, s in zip(p.windows, p.scores)
            ],
        }
        sink.write(json.dumps(record) + "\n")
        count += 1
    return count


def _metric_rows(stratum: str, report: EvalReport):
    for k in K_VALUES:
        for m in IOU_THRESHOLDS:
            yield (stratum, f"R@{k}@{m}", repr(report.cell(k, m)), report.n_queries)
    yield (stratum, "mean_r1", repr(report.mean_r1), report.n_queries)


def write_report_csv(report: EvalReport, sink: IO[str]) -> None:
    """Serialize a report as CSV with columns (stratum, metric, value, n_queries).

    The global rows use stratum "all"; stratified sections follow in sorted
    stratum order. Values keep full float precision so identical reports
    serialize to identical bytes.
    """
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(REPORT_CSV_COLUMNS)
    for row in _metric_rows("all", report):
        writer.writerow(row)
    for name in sorted(report.strata):
        for row in _metric_rows(name, report.strata[name]):
            writer.writerow(row)


def save_report_csv(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_report_csv(report, fh)

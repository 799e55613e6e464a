"""Two-stage training for the span localizer.

Stage 1 trains on the shuffled concatenation of the query-augmentation set
and the task's own training queries with a large batch and learning rate;
stage 2 finetunes on the task queries alone at a lower rate. Both stages run
plain SGD (optional momentum, 0 by default), evaluate on the validation set
at a fixed cadence, early-stop once the validation mean R@1 stops improving,
and return the parameters of the best validation epoch rather than the last.

Master parameters stay float64; the batched forward/backward runs in a
configurable compute dtype (float32 by default) for single-core speed. Runs
are bit-reproducible given identical datasets, config and seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np

from . import localizer as loc
from . import metrics
from .annotations import NaqSample, NlqSample, TemporalWindow
from .naqgen import fnv1a64


@dataclass(frozen=True)
class TrainConfig:
    stage1_batch_size: int = 256
    stage1_learning_rate: float = 0.05
    stage1_max_epochs: int = 200
    stage2_batch_size: int = 32
    stage2_learning_rate: float = 0.005
    stage2_max_epochs: int = 30
    stage2_enabled: bool = True
    patience: int = 6
    eval_every: int = 1
    momentum: float = 0.0
    seed: int = 0
    mix: tuple[str, ...] = ("nlq", "naq")
    topk: int = 5
    max_len_steps: int = 8
    compute_dtype: str = "float32"

    def __post_init__(self):
        if self.stage1_learning_rate <= 0 or self.stage2_learning_rate <= 0:
            raise ValueError("learning rates must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if min(self.stage1_batch_size, self.stage2_batch_size) < 1:
            raise ValueError("batch sizes must be >= 1")
        if min(self.stage1_max_epochs, self.stage2_max_epochs) < 1:
            raise ValueError("max epochs must be >= 1")
        if not set(self.mix) <= {"nlq", "naq"}:
            raise ValueError(f"mix entries must be 'nlq'/'naq', got {self.mix}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.compute_dtype not in ("float32", "float64"):
            raise ValueError("compute_dtype must be float32 or float64")

    @property
    def dtype(self):
        return np.float32 if self.compute_dtype == "float32" else np.float64


@dataclass(frozen=True)
class TrainingExample:
    video_uid: str
    token_ids: tuple[int, ...]
    target: loc.SpanTarget


@dataclass(frozen=True)
class EvalQuery:
    query_id: str
    video_uid: str
    token_ids: tuple[int, ...]
    window: TemporalWindow
    template: str | None = None
    object: str | None = None


@dataclass
class EvalSet:
    """Validation/test queries with their stacked video features."""

    queries: list[EvalQuery]
    stacked_features: np.ndarray  # (n_queries, T, d)
    step_sec: float = 1.0

    @property
    def ground_truth(self) -> dict[str, TemporalWindow]:
        return {q.query_id: q.window for q in self.queries}


@dataclass
class EvalPoint:
    epoch: int
    loss: float
    report: metrics.EvalReport


@dataclass
class TrainHistory:
    evals: list[EvalPoint] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = "disabled"

    @property
    def best_mean_r1(self) -> float:
        return max(p.report.mean_r1 for p in self.evals)


def build_examples(
    samples: Sequence[NlqSample | NaqSample],
    vocab: loc.Vocabulary,
    features: Mapping[str, np.ndarray],
    step_sec: float = 1.0,
) -> list[TrainingExample]:
    """Map supervision records onto token ids and step-index span targets."""
    out = []
    for sample in samples:
        video = features.get(sample.video_uid)
        if video is None:
            raise KeyError(f"no features for video {sample.video_uid!r}")
        ids = vocab.encode(sample.query)
        if not ids:
            raise ValueError(f"query {sample.query!r} has no content tokens")
        out.append(
            TrainingExample(
                video_uid=sample.video_uid,
                token_ids=tuple(ids),
                target=loc.SpanTarget.from_window(sample.window, video.shape[0], step_sec),
            )
        )
    return out


def build_eval_set(
    samples: Sequence[NlqSample],
    vocab: loc.Vocabulary,
    features: Mapping[str, np.ndarray],
    step_sec: float = 1.0,
    dtype=np.float32,
) -> EvalSet:
    queries = []
    arrays = []
    for sample in samples:
        if sample.query_id is None:
            raise ValueError("evaluation samples need query_id set")
        video = features.get(sample.video_uid)
        if video is None:
            raise KeyError(f"no features for video {sample.video_uid!r}")
        ids = vocab.encode(sample.query)
        if not ids:
            raise ValueError(f"query {sample.query!r} has no content tokens")
        queries.append(
            EvalQuery(
                query_id=sample.query_id,
                video_uid=sample.video_uid,
                token_ids=tuple(ids),
                window=sample.window,
                template=sample.template,
                object=sample.object,
            )
        )
        arrays.append(np.asarray(video, dtype=dtype))
    if not queries:
        raise ValueError("empty evaluation set")
    return EvalSet(queries=queries, stacked_features=np.stack(arrays), step_sec=step_sec)


def predict(
    params: loc.ModelParams, eval_set: EvalSet, k: int, max_len_steps: int, dtype=np.float32
) -> list[metrics.Prediction]:
    """Ranked top-k span predictions for every query in the eval set."""
    ps, pe = loc.batch_forward_probs(
        params,
        eval_set.stacked_features,
        [q.token_ids for q in eval_set.queries],
        dtype=dtype,
    )
    out = []
    for idx, query in enumerate(eval_set.queries):
        spans = loc.predict_topk(
            (ps[idx], pe[idx]), k=k, max_len_steps=max_len_steps, step_sec=eval_set.step_sec
        )
        out.append(
            metrics.Prediction(
                query_id=query.query_id,
                windows=tuple(w for w, _ in spans),
                scores=tuple(s for _, s in spans),
            )
        )
    return out


def evaluate_model(
    params: loc.ModelParams,
    eval_set: EvalSet,
    cfg: TrainConfig,
    strata: Mapping[str, str] | None = None,
) -> metrics.EvalReport:
    preds = predict(params, eval_set, cfg.topk, cfg.max_len_steps, dtype=cfg.dtype)
    return metrics.evaluate(preds, eval_set.ground_truth, strata=strata)


def early_stop(mean_r1_history: Sequence[float], patience: int) -> bool:
    """True iff no new best value appeared in the last `patience` entries."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if not mean_r1_history:
        raise ValueError("need at least one recorded eval")
    best_idx = int(np.argmax(mean_r1_history))  # first occurrence of the best
    return (len(mean_r1_history) - 1 - best_idx) >= patience


def _sgd_update(params: loc.ModelParams, grads: loc.ModelParams, velocity, lr, momentum):
    for name in loc.PARAM_FIELDS:
        p = getattr(params, name)
        g = getattr(grads, name)
        if momentum > 0.0:
            v = velocity[name]
            v *= momentum
            v -= lr * g
            p += v
        else:
            p -= lr * g


def _run_sgd(
    params: loc.ModelParams,
    examples: list[TrainingExample],
    features: Mapping[str, np.ndarray],
    val: EvalSet,
    cfg: TrainConfig,
    batch_size: int,
    lr: float,
    max_epochs: int,
    rng: np.random.Generator,
) -> tuple[loc.ModelParams, TrainHistory]:
    if not examples:
        raise ValueError("empty training set")
    params = params.copy()
    dtype = cfg.dtype
    feature_cache = {uid: np.asarray(arr, dtype=dtype) for uid, arr in features.items()}
    velocity = {name: np.zeros_like(getattr(params, name)) for name in loc.PARAM_FIELDS}

    history = TrainHistory(stop_reason="max_epochs")
    best_params = params.copy()
    best_r1 = -np.inf
    n = len(examples)
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, batch_size):
            batch = [examples[i] for i in order[lo : lo + batch_size]]
            feats = np.stack([feature_cache[ex.video_uid] for ex in batch])
            _, grads, per_sample = loc.batch_loss_and_grads(
                params,
                feats,
                [ex.token_ids for ex in batch],
                np.array([ex.target.start for ex in batch]),
                np.array([ex.target.end for ex in batch]),
                dtype=dtype,
            )
            loss_sum += float(per_sample.sum())
            _sgd_update(params, grads, velocity, lr, cfg.momentum)
        epoch_loss = loss_sum / n
        history.losses.append(epoch_loss)

        if epoch % cfg.eval_every == 0 or epoch == max_epochs:
            report = evaluate_model(params, val, cfg)
            history.evals.append(EvalPoint(epoch, epoch_loss, report))
            if report.mean_r1 > best_r1:
                best_r1 = report.mean_r1
                best_params = params.copy()
                history.best_epoch = epoch
            if early_stop([p.report.mean_r1 for p in history.evals], cfg.patience):
                history.stop_reason = "early_stop"
                break
    if not history.evals:
        report = evaluate_model(params, val, cfg)
        history.evals.append(EvalPoint(max_epochs, history.losses[-1], report))
        history.best_epoch = max_epochs
        best_params = params.copy()
    return best_params, history


def train_stage1(
    params: loc.ModelParams,
    nlq_train: list[TrainingExample],
    naq_data: list[TrainingExample],
    val: EvalSet,
    features: Mapping[str, np.ndarray],
    cfg: TrainConfig,
) -> tuple[loc.ModelParams, TrainHistory]:
    """Joint large-batch training on the configured dataset mix.

    With empty augmentation data this is exactly task-only training, which
    serves as the baseline arm.
    """
    combined: list[TrainingExample] = []
    if "nlq" in cfg.mix:
        combined.extend(nlq_train)
    if "naq" in cfg.mix:
        combined.extend(naq_data)
    if not combined:
        raise ValueError("stage 1 has no training data (check cfg.mix and inputs)")
    rng = np.random.default_rng(fnv1a64(cfg.seed, "stage1"))
    return _run_sgd(
        params,
        combined,
        features,
        val,
        cfg,
        batch_size=cfg.stage1_batch_size,
        lr=cfg.stage1_learning_rate,
        max_epochs=cfg.stage1_max_epochs,
        rng=rng,
    )


def finetune_stage2(
    params: loc.ModelParams,
    nlq_train: list[TrainingExample],
    val: EvalSet,
    features: Mapping[str, np.ndarray],
    cfg: TrainConfig,
) -> tuple[loc.ModelParams, TrainHistory]:
    """Task-only finetuning at the lower stage-2 rate; a no-op when disabled."""
    if not cfg.stage2_enabled:
        return params, TrainHistory(stop_reason="disabled")
    if not nlq_train:
        raise ValueError("stage 2 enabled but the task training set is empty")
    rng = np.random.default_rng(fnv1a64(cfg.seed, "stage2"))
    return _run_sgd(
        params,
        nlq_train,
        features,
        val,
        cfg,
        batch_size=cfg.stage2_batch_size,
        lr=cfg.stage2_learning_rate,
        max_epochs=cfg.stage2_max_epochs,
        rng=rng,
    )


HISTORY_CSV_COLUMNS = ("epoch", "loss", "R@1@0.3", "R@5@0.3", "R@1@0.5", "R@5@0.5", "mean_r1")


def write_history_csv(history: TrainHistory, sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(HISTORY_CSV_COLUMNS)
    for point in history.evals:
        r = point.report
        writer.writerow(
            [
                point.epoch,
                repr(point.loss),
                repr(r.cell(1, 0.3)),
                repr(r.cell(5, 0.3)),
                repr(r.cell(1, 0.5)),
                repr(r.cell(5, 0.5)),
                repr(r.mean_r1),
            ]
        )

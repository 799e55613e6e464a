"""Minimal span-prediction localizer over per-timestep video features.

A query is the mean embedding of its content tokens. Each video timestep is
fused with the query through one tanh layer over [v_t ; q ; v_t * q]; two
linear heads read start and end logits per timestep, normalized into span
distributions with stable softmaxes. Spans are extracted by enumerating all
(i, j) pairs with i <= j < i + max_len and ranking the probability product,
ties broken by smaller i then smaller j.

Parameters are float64 at rest and in the reference single-example ops; the
batched helpers accept a compute dtype so the trainer can run in float32.
Checkpoints use the ``NAQM`` container: 4 magic bytes, a little-endian
uint32 tensor count, then per tensor a uint32 name length, the UTF-8 name,
a uint32 rank, uint64 dims, and the float64 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .annotations import TemporalWindow

CHECKPOINT_MAGIC = b"NAQM"

# Closed-class scaffolding words of narrations and query templates; excluded
# from query encodings so only content tokens carry signal.
STOPWORDS = frozenset(
    {
        "c", "the", "a", "an", "i", "did", "do", "is", "was", "what", "where",
        "who", "how", "many", "in", "on", "at", "of", "to", "state", "location",
        "interact", "with", "while", "during", "before", "after", "put", "see", "my",
    }
)


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation splits, underscores survive."""
    cleaned = "".join(
        ch if (ch.isalnum() or ch == "_" or ch == " ") else " " for ch in text.lower()
    )
    return cleaned.split()


class Vocabulary:
    """Content-token index shared by queries and narrations.

    Plural surface forms fold onto their singular when the singular occurs
    anywhere in the corpus, so "How many funnels?" shares its object token
    with "C lifts the funnel ...".
    """

    def __init__(self, tokens: Sequence[str]):
        self.tokens = tuple(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    @staticmethod
    def _stem(token: str, known: set[str]) -> str:
        if token in known:
            return token
        if token.endswith("es") and token[:-2] in known:
            return token[:-2]
        if token.endswith("s") and token[:-1] in known:
            return token[:-1]
        return token

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: set[str] = set()
        for text in texts:
            seen.update(t for t in tokenize(text) if t not in STOPWORDS)
        kept = sorted(t for t in seen if cls._stem(t, seen - {t}) == t)
        return cls(kept)

    def encode(self, text: str) -> list[int]:
        """Content-token ids for a text; unknown tokens raise ValueError."""
        known = set(self.index)
        ids = []
        for token in tokenize(text):
            if token in STOPWORDS:
                continue
            stemmed = self._stem(token, known)
            if stemmed not in self.index:
                raise ValueError(f"token {token!r} not in vocabulary")
            ids.append(self.index[stemmed])
        return ids

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(list(self.tokens), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))


@dataclass
class ModelParams:
    """All learned tensors, kept in float64."""

    embeddings: np.ndarray  # (vocab, d)
    fusion_w: np.ndarray  # (d, 3d)
    fusion_b: np.ndarray  # (d,)
    start_w: np.ndarray  # (d,)
    end_w: np.ndarray  # (d,)

    def __post_init__(self):
        d = self.fusion_b.shape[0]
        expected = {
            "embeddings": (self.embeddings.shape[0], d),
            "fusion_w": (d, 3 * d),
            "fusion_b": (d,),
            "start_w": (d,),
            "end_w": (d,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def dim(self) -> int:
        return self.fusion_b.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.embeddings.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            **{f.name: getattr(self, f.name).astype(dtype) for f in fields(self)}
        )


PARAM_FIELDS = tuple(f.name for f in fields(ModelParams))


def init_params(vocab_size: int, dim: int, seed: int, scale: float = 0.1) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(
        embeddings=rng.standard_normal((vocab_size, dim)) * scale,
        fusion_w=rng.standard_normal((dim, 3 * dim)) * scale,
        fusion_b=np.zeros(dim),
        start_w=rng.standard_normal(dim) * scale,
        end_w=rng.standard_normal(dim) * scale,
    )


def zero_grads(params: ModelParams) -> ModelParams:
    return ModelParams(
        **{name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}
    )


@dataclass(frozen=True)
class SpanDistribution:
    """Per-timestep start/end logits and their normalized probabilities."""

    start_logits: np.ndarray
    end_logits: np.ndarray
    start_probs: np.ndarray
    end_probs: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.start_logits.shape[0]


@dataclass(frozen=True)
class SpanTarget:
    """Inclusive start/end step indices of a supervision window."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad span target ({self.start}, {self.end})")

    @classmethod
    def from_window(
        cls, window: TemporalWindow, n_steps: int, step_sec: float = 1.0
    ) -> "SpanTarget":
        """Floor the start, ceil the end to step boundaries, clip into range.

        The resulting inclusive step span always covers the source window.
        """
        start = int(np.floor(window.start_sec / step_sec))
        end = int(np.ceil(window.end_sec / step_sec)) - 1
        start = min(max(start, 0), n_steps - 1)
        end = min(max(end, start), n_steps - 1)
        return cls(start, end)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    out = np.exp(shifted)
    out /= out.sum(axis=axis, keepdims=True)
    return out


def encode_query(token_ids: Sequence[int], params: ModelParams) -> np.ndarray:
    """Mean embedding of the query's content tokens (stop tokens already removed)."""
    if len(token_ids) == 0:
        raise ValueError("cannot encode an empty token list")
    ids = np.asarray(token_ids, dtype=np.intp)
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise ValueError(f"token id out of range for vocab of {params.vocab_size}")
    return params.embeddings[ids].mean(axis=0)


def _fuse(features: np.ndarray, query_vec: np.ndarray, params: ModelParams):
    """Hidden states and logits for one video; shapes (T, d) and (T,)."""
    if features.ndim != 2 or features.shape[1] != params.dim:
        raise ValueError(
            f"features shape {features.shape} incompatible with model dim {params.dim}"
        )
    if query_vec.shape != (params.dim,):
        raise ValueError(f"query vector shape {query_vec.shape} != ({params.dim},)")
    vq = features * query_vec
    z = np.concatenate(
        [features, np.broadcast_to(query_vec, features.shape), vq], axis=1
    )
    h = np.tanh(z @ params.fusion_w.T + params.fusion_b)
    return z, h, h @ params.start_w, h @ params.end_w


def forward(
    features: np.ndarray, query_vec: np.ndarray, params: ModelParams
) -> SpanDistribution:
    """Span distribution over the timesteps of one video."""
    _, _, start_logits, end_logits = _fuse(
        np.asarray(features, dtype=np.float64), np.asarray(query_vec, dtype=np.float64), params
    )
    return SpanDistribution(
        start_logits=start_logits,
        end_logits=end_logits,
        start_probs=softmax(start_logits),
        end_probs=softmax(end_logits),
    )


def loss_and_grad(
    params: ModelParams,
    features: np.ndarray,
    token_ids: Sequence[int],
    target: SpanTarget,
) -> tuple[float, ModelParams]:
    """Negative log-likelihood of the target span and analytic gradients.

    loss = -log p_start(target.start) - log p_end(target.end); gradients are
    returned with ModelParams shapes for every parameter tensor.
    """
    loss, grads, _ = batch_loss_and_grads(
        params,
        np.asarray(features, dtype=np.float64)[None],
        [list(token_ids)],
        np.array([target.start]),
        np.array([target.end]),
        dtype=np.float64,
    )
    return loss, grads


def batch_loss_and_grads(
    params: ModelParams,
    features: np.ndarray,
    token_ids: Sequence[Sequence[int]],
    starts: np.ndarray,
    ends: np.ndarray,
    dtype=np.float64,
) -> tuple[float, ModelParams, np.ndarray]:
    """Mean span loss and gradients over a batch; fixed reduction order.

    features: (B, T, d); token_ids: per-sample content-token ids;
    starts/ends: inclusive target indices. Returns (loss, grads, per-sample
    losses). The compute dtype is a knob; gradients come back float64.
    """
    b, t, d = features.shape
    if d != params.dim:
        raise ValueError(f"feature dim {d} != model dim {params.dim}")
    starts = np.asarray(starts)
    ends = np.asarray(ends)
    if starts.shape != (b,) or ends.shape != (b,):
        raise ValueError("starts/ends must have one entry per sample")
    if (
        starts.min() < 0
        or ends.min() < 0
        or starts.max() >= t
        or ends.max() >= t
        or np.any(starts > ends)
    ):
        raise ValueError("span target out of range")

    p = params if params.embeddings.dtype == dtype else params.astype(dtype)
    v = features.astype(dtype, copy=False)
    q = np.empty((b, d), dtype=dtype)
    for idx, ids in enumerate(token_ids):
        if len(ids) == 0:
            raise ValueError(f"sample {idx}: empty token list")
        q[idx] = p.embeddings[np.asarray(ids, dtype=np.intp)].mean(axis=0)

    vq = v * q[:, None, :]
    z = np.concatenate([v, np.broadcast_to(q[:, None, :], v.shape), vq], axis=2)
    zf = z.reshape(b * t, 3 * d)
    h = np.tanh(zf @ p.fusion_w.T + p.fusion_b)
    ls = (h @ p.start_w).reshape(b, t)
    le = (h @ p.end_w).reshape(b, t)

    rows = np.arange(b)
    ls_shift = ls - ls.max(axis=1, keepdims=True)
    le_shift = le - le.max(axis=1, keepdims=True)
    lse_s = np.log(np.exp(ls_shift).sum(axis=1))
    lse_e = np.log(np.exp(le_shift).sum(axis=1))
    per_sample = (lse_s - ls_shift[rows, starts]) + (lse_e - le_shift[rows, ends])
    loss = float(per_sample.mean())

    ps = np.exp(ls_shift)
    ps /= ps.sum(axis=1, keepdims=True)
    pe = np.exp(le_shift)
    pe /= pe.sum(axis=1, keepdims=True)
    gs = ps
    gs[rows, starts] -= 1.0
    gs /= b
    ge = pe
    ge[rows, ends] -= 1.0
    ge /= b

    gs_flat = gs.reshape(b * t)
    ge_flat = ge.reshape(b * t)
    d_start = h.T @ gs_flat
    d_end = h.T @ ge_flat
    dh = np.outer(gs_flat, p.start_w) + np.outer(ge_flat, p.end_w)
    da = dh * (1.0 - h * h)
    d_w = da.T @ zf
    d_b = da.sum(axis=0)
    dz = (da @ p.fusion_w).reshape(b, t, 3 * d)
    dq = dz[:, :, d : 2 * d].sum(axis=1) + (dz[:, :, 2 * d :] * v).sum(axis=1)

    d_emb = np.zeros_like(params.embeddings)
    for idx, ids in enumerate(token_ids):
        arr = np.asarray(ids, dtype=np.intp)
        np.add.at(d_emb, arr, (dq[idx] / len(ids)).astype(np.float64))

    grads = ModelParams(
        embeddings=d_emb,
        fusion_w=d_w.astype(np.float64),
        fusion_b=d_b.astype(np.float64),
        start_w=d_start.astype(np.float64),
        end_w=d_end.astype(np.float64),
    )
    return loss, grads, per_sample.astype(np.float64)


def batch_forward_probs(
    params: ModelParams,
    features: np.ndarray,
    token_ids: Sequence[Sequence[int]],
    dtype=np.float64,
) -> tuple[np.ndarray, np.ndarray]:
    """Start/end probabilities for a batch; shapes (B, T)."""
    b, t, d = features.shape
    p = params if params.embeddings.dtype == dtype else params.astype(dtype)
    v = features.astype(dtype, copy=False)
    q = np.empty((b, d), dtype=dtype)
    for idx, ids in enumerate(token_ids):
        if len(ids) == 0:
            raise ValueError(f"sample {idx}: empty token list")
        q[idx] = p.embeddings[np.asarray(ids, dtype=np.intp)].mean(axis=0)
    vq = v * q[:, None, :]
    z = np.concatenate([v, np.broadcast_to(q[:, None, :], v.shape), vq], axis=2)
    h = np.tanh(z.reshape(b * t, 3 * d) @ p.fusion_w.T + p.fusion_b)
    ls = (h @ p.start_w).reshape(b, t)
    le = (h @ p.end_w).reshape(b, t)
    return softmax(ls, axis=1), softmax(le, axis=1)


def predict_topk(
    dist_or_probs,
    k: int,
    max_len_steps: int,
    step_sec: float = 1.0,
) -> list[tuple[TemporalWindow, float]]:
    """Best k spans by start*end probability under a length cap.

    Accepts a SpanDistribution or a (start_probs, end_probs) pair. Candidate
    spans are all (i, j) with i <= j <= i + max_len_steps - 1; ranking ties
    break toward smaller i, then smaller j. Step spans convert to seconds as
    [i * step_sec, (j + 1) * step_sec].
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_len_steps < 1:
        raise ValueError("max_len_steps must be >= 1")
    if isinstance(dist_or_probs, SpanDistribution):
        ps, pe = dist_or_probs.start_probs, dist_or_probs.end_probs
    else:
        ps, pe = dist_or_probs
    t = ps.shape[0]
    i_parts, j_parts, score_parts = [], [], []
    for offset in range(min(max_len_steps, t)):
        n = t - offset
        idx = np.arange(n)
        i_parts.append(idx)
        j_parts.append(idx + offset)
        score_parts.append(ps[:n] * pe[offset:])
    i_all = np.concatenate(i_parts)
    j_all = np.concatenate(j_parts)
    scores = np.concatenate(score_parts)
    order = np.lexsort((j_all, i_all, -scores))[:k]
    return [
        (
            TemporalWindow(float(i_all[o] * step_sec), float((j_all[o] + 1) * step_sec)),
            float(scores[o]),
        )
        for o in order
    ]


def save_params(path: str | Path, params: ModelParams) -> None:
    """Write a NAQM checkpoint (named float64 tensors, little-endian)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(PARAM_FIELDS)))
        for name in PARAM_FIELDS:
            arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_params(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a NAQM checkpoint")
        (count,) = struct.unpack("<I", fh.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            data = fh.read(8 * n_items)
            if len(data) != 8 * n_items:
                raise ValueError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    missing = set(PARAM_FIELDS) - set(tensors)
    if missing:
        raise ValueError(f"{path}: checkpoint missing tensors {sorted(missing)}")
    return ModelParams(**{name: tensors[name] for name in PARAM_FIELDS})

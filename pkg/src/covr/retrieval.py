"""Exact cosine top-K search over a target embedding store."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .embeddings import EmbeddingStore
from .errors import InputError, ShapeError

RENORM_TOL = 1e-3
QUERY_NORM_TOL = 1e-4


@dataclass
class RetrievalResult:
    """Ranked ``(id, score)`` pairs, best first, ties by ascending id."""

    entries: list[tuple[str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]


@dataclass(frozen=True)
class Index:
    dim: int
    ids: tuple[str, ...]
    matrix: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def build_index(store: EmbeddingStore) -> Index:
    """Normalize every stored vector and freeze them into a search matrix.

    Zero or non-finite rows are rejected, as is any row whose norm after
    renormalization is off from 1 by more than 1e-3 (float overflow or
    underflow in the source data).
    """
    if len(store) == 0:
        raise InputError("cannot index an empty store")
    m = store.vectors.astype(np.float64)
    norms = np.linalg.norm(m, axis=1)
    bad = ~(np.isfinite(norms) & (norms > 0))
    if bad.any():
        raise InputError(f"zero or non-finite vector for id {store.ids[int(np.argmax(bad))]!r}")
    m = m / norms[:, None]
    dev = np.abs(np.linalg.norm(m, axis=1) - 1.0)
    if (dev > RENORM_TOL).any():
        raise InputError(f"vector for id {store.ids[int(np.argmax(dev))]!r} does not renormalize")
    m.flags.writeable = False
    return Index(store.dim, tuple(store.ids), m)


def _check_query(index: Index, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise ShapeError(f"query has dimension {q.shape[0]}, index has {index.dim}")
    if not abs(np.linalg.norm(q) - 1.0) <= QUERY_NORM_TOL:
        raise InputError("query is not unit norm")
    return q


def search_topk(index: Index, query, k: int) -> RetrievalResult:
    """The ``k`` rows with the highest dot product against ``query``, exactly."""
    return search_batch(index, np.atleast_2d(_check_query(index, query)), k)[0]


def search_batch(index: Index, queries: np.ndarray, k: int) -> list[RetrievalResult]:
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    for q in queries:
        _check_query(index, q)
    idx, scores = _kernels.topk(index.matrix, queries, k)
    return [RetrievalResult([(index.ids[i], float(s)) for i, s in zip(row_i, row_s)])
            for row_i, row_s in zip(idx, scores)]


def target_ranks(index: Index, queries: np.ndarray, target_ids: list[str]) -> np.ndarray:
    """0-based position of each query's target in its full ranking."""
    pos = {key: i for i, key in enumerate(index.ids)}
    try:
        rows = np.array([pos[t] for t in target_ids], dtype=np.int64)
    except KeyError as exc:
        raise InputError(f"target id {exc.args[0]!r} is not in the index") from None
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    return _kernels.target_ranks(index.matrix, queries, rows)


def brute_force_rank(store: EmbeddingStore, query) -> RetrievalResult:
    """Full ranking by a naive scalar scan; the oracle for :func:`search_topk`.

    Each row is renormalized and scored with exactly rounded summation,
    then sorted by (-score, id).
    """
    q = [float(x) for x in np.asarray(query, dtype=np.float64).reshape(-1)]
    if len(q) != store.dim:
        raise ShapeError(f"query has dimension {len(q)}, store has {store.dim}")
    if len(store) == 0:
        raise InputError("empty store")
    scored = []
    for key in store.ids:
        v = [float(x) for x in store.get(key)]
        norm = math.sqrt(math.fsum(x * x for x in v))
        if norm == 0.0:
            raise InputError(f"zero vector for id {key!r}")
        scored.append((math.fsum(a * (b / norm) for a, b in zip(q, v)), key))
    scored.sort(key=lambda p: (-p[0], p[1]))
    return RetrievalResult([(key, s) for s, key in scored])

"""Hot loops: search, hard-negative weighting, Adam updates, FNV-1a hashing.

Each kernel has a numba version and a pure-numpy version with identical
semantics. The numba path is used when numba imports cleanly and the
environment variable ``COVR_NO_NUMBA`` is unset or ``0``.

Ranking rule everywhere: higher score first, ties broken by lower row
index. Callers keep rows sorted by id, so row order is id order.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("COVR_NO_NUMBA", "0") in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"

if HAVE_NUMBA and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    # skip probing TBB first; older system TBB builds only produce a warning
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

_threads_applied = False


def set_threads(n: int) -> None:
    """Cap intra-op worker threads (numba backend only)."""
    global _threads_applied
    _threads_applied = True
    if HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _apply_thread_env() -> None:
    if not _threads_applied:
        set_threads(int(os.environ.get("COVR_THREADS", "1") or 1))


# ---------------------------------------------------------------------------
# numpy reference path


def _row_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    # row-wise reduction, not BLAS: identical rows must give identical scores
    return (matrix * query).sum(axis=1)


def topk_numpy(matrix, queries, k):
    n = matrix.shape[0]
    k = min(k, n)
    idx = np.empty((queries.shape[0], k), dtype=np.int64)
    scores = np.empty((queries.shape[0], k))
    for qi in range(queries.shape[0]):
        s = _row_scores(matrix, queries[qi])
        order = np.argsort(-s, kind="stable")[:k]
        idx[qi] = order
        scores[qi] = s[order]
    return idx, scores


def target_ranks_numpy(matrix, queries, targets):
    ranks = np.empty(queries.shape[0], dtype=np.int64)
    rows = np.arange(matrix.shape[0])
    for qi in range(queries.shape[0]):
        s = _row_scores(matrix, queries[qi])
        t = targets[qi]
        st = s[t]
        ranks[qi] = np.count_nonzero((s > st) | ((s == st) & (rows < t)))
    return ranks


def hn_weights_numpy(sim, beta, tau):
    b = sim.shape[0]
    if b == 1:
        return np.ones((1, 1))
    z = beta * sim / tau
    off = ~np.eye(b, dtype=bool)
    m = np.max(np.where(off, z, -np.inf), axis=1, keepdims=True)
    # mask before exp: the unused diagonal may overflow
    e = np.exp(np.where(off, z - m, -np.inf))
    w = (b - 1) * e / e.sum(axis=1, keepdims=True)
    w[~off] = 1.0
    return w


def adam_update_numpy(p, g, m, v, lr, b1, b2, eps, c1, c2):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64_python(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


# ---------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def topk_numba(matrix, queries, k):
        n, d = matrix.shape
        nq = queries.shape[0]
        k = min(k, n)
        idx = np.empty((nq, k), dtype=np.int64)
        scores = np.empty((nq, k))
        for qi in prange(nq):
            q = queries[qi]
            best_s = np.empty(k)
            best_i = np.empty(k, dtype=np.int64)
            filled = 0
            for j in range(n):
                s = 0.0
                for c in range(d):
                    s += matrix[j, c] * q[c]
                # j only increases, so an equal score never displaces an earlier row
                if filled == k and s <= best_s[k - 1]:
                    continue
                pos = filled if filled < k else k - 1
                while pos > 0 and best_s[pos - 1] < s:
                    best_s[pos] = best_s[pos - 1]
                    best_i[pos] = best_i[pos - 1]
                    pos -= 1
                best_s[pos] = s
                best_i[pos] = j
                if filled < k:
                    filled += 1
            idx[qi] = best_i
            scores[qi] = best_s
        return idx, scores

    @njit(cache=True, parallel=True)
    def target_ranks_numba(matrix, queries, targets):
        n, d = matrix.shape
        nq = queries.shape[0]
        ranks = np.empty(nq, dtype=np.int64)
        for qi in prange(nq):
            q = queries[qi]
            s = np.empty(n)
            for j in range(n):
                acc = 0.0
                for c in range(d):
                    acc += matrix[j, c] * q[c]
                s[j] = acc
            t = targets[qi]
            st = s[t]
            r = 0
            for j in range(n):
                if s[j] > st or (s[j] == st and j < t):
                    r += 1
            ranks[qi] = r
        return ranks

    @njit(cache=True)
    def hn_weights_numba(sim, beta, tau):
        b = sim.shape[0]
        w = np.ones((b, b))
        if b == 1:
            return w
        for i in range(b):
            m = -np.inf
            for j in range(b):
                if j != i and beta * sim[i, j] / tau > m:
                    m = beta * sim[i, j] / tau
            total = 0.0
            for j in range(b):
                if j != i:
                    w[i, j] = np.exp(beta * sim[i, j] / tau - m)
                    total += w[i, j]
            for j in range(b):
                if j != i:
                    w[i, j] = (b - 1) * w[i, j] / total
        return w

    @njit(cache=True)
    def adam_update_numba(p, g, m, v, lr, b1, b2, eps, c1, c2):
        # flat contiguous views; one pass instead of eight temporaries
        for i in range(p.shape[0]):
            gi = g[i]
            mi = m[i] * b1 + (1.0 - b1) * gi
            vi = v[i] * b2 + (1.0 - b2) * (gi * gi)
            m[i] = mi
            v[i] = vi
            p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)

    @njit(cache=True)
    def fnv1a64_numba(buf):
        h = np.uint64(FNV_OFFSET)
        prime = np.uint64(FNV_PRIME)
        for i in range(buf.shape[0]):
            h = (h ^ np.uint64(buf[i])) * prime
        return h

else:  # pragma: no cover
    adam_update_numba = adam_update_numpy
    fnv1a64_numba = None
    topk_numba = topk_numpy
    target_ranks_numba = target_ranks_numpy
    hn_weights_numba = hn_weights_numpy


# ---------------------------------------------------------------------------
# dispatch


def topk(matrix: np.ndarray, queries: np.ndarray, k: int):
    """Top-``k`` rows of ``matrix`` by dot product, per query row."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if USE_NUMBA:
        _apply_thread_env()
        return topk_numba(matrix, queries, int(k))
    return topk_numpy(matrix, queries, int(k))


def target_ranks(matrix: np.ndarray, queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """0-based rank of row ``targets[i]`` in the ranking for query ``i``."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    if USE_NUMBA:
        _apply_thread_env()
        return target_ranks_numba(matrix, queries, targets)
    return target_ranks_numpy(matrix, queries, targets)


def hn_weights(sim: np.ndarray, beta: float, tau: float) -> np.ndarray:
    sim = np.ascontiguousarray(sim, dtype=np.float64)
    fn = hn_weights_numba if USE_NUMBA else hn_weights_numpy
    return fn(sim, float(beta), float(tau))


def adam_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
                lr: float, b1: float, b2: float, eps: float, t: int) -> None:
    """In-place bias-corrected Adam step on contiguous float64 arrays."""
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    args = (p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1))
    fn = adam_update_numba if USE_NUMBA else adam_update_numpy
    fn(*args, float(lr), float(b1), float(b2), float(eps), c1, c2)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a digest."""
    # short inputs (tokens) are cheaper without the call overhead
    if not USE_NUMBA or len(data) < 256:
        return fnv1a64_python(data)
    return int(fnv1a64_numba(np.frombuffer(data, dtype=np.uint8)))

"""Recall@K evaluation and the unified-vs-pairwise similarity comparison."""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import no_grad
from .data import Triplet
from .errors import InputError
from .fusion import FusionParams, fuse_function, params_digest
from .retrieval import RetrievalResult, build_index, search_batch
from .sources import EmbeddingSources, ResolvedBatch, resolve

DEFAULT_KS = (1, 5, 10, 50)
BIN_WIDTH = Fraction(1, 20)
N_BINS = 40


def recall_at_k(results: Sequence[RetrievalResult], targets: Sequence[str], k: int) -> float:
    """Fraction of queries whose target is among the first ``k`` results."""
    if len(results) != len(targets):
        raise InputError(f"{len(results)} results for {len(targets)} targets")
    if not results:
        raise InputError("recall needs at least one sample")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    hits = sum(1 for res, t in zip(results, targets) if t in res.ids[:k])
    return hits / len(results)


def restrict(result: RetrievalResult, subset: Sequence[str]) -> RetrievalResult:
    keep = set(subset)
    return RetrievalResult([(i, s) for i, s in result.entries if i in keep])


def subset_recall(results: Sequence[RetrievalResult], targets: Sequence[str],
                  subsets: Sequence[Sequence[str]], k: int) -> float:
    """Recall@k after restricting each ranking to its candidate subset."""
    if not (len(results) == len(targets) == len(subsets)):
        raise InputError("results, targets and subsets differ in length")
    restricted = []
    for res, t, sub in zip(results, targets, subsets):
        if t not in sub:
            raise InputError(f"target {t!r} is missing from its subset")
        missing = set(sub) - set(res.ids)
        if missing:
            raise InputError(f"ranking does not cover subset ids {sorted(missing)[:3]}")
        restricted.append(restrict(res, sub))
    return recall_at_k(restricted, targets, k)


def fuse_all(batch: ResolvedBatch, params: FusionParams, fusion: str = "unified") -> np.ndarray:
    """Fused query embeddings for every resolved triplet, as an ``(n, d)`` array."""
    fuse = fuse_function(fusion)
    out = np.empty_like(batch.queries)
    with no_grad():
        for i in range(len(batch)):
            out[i] = fuse(batch.queries[i], batch.descriptions[i], batch.tokens[i], params).data[0]
    return out


@dataclass
class EvalReport:
    ks: list[int]
    recalls: dict[int, float]
    count: int
    config: dict[str, object] = field(default_factory=dict)
    subset_recalls: dict[int, float] | None = None

    def to_text(self) -> str:
        lines = [f"{k}={v}" for k, v in self.config.items()]
        lines.append(f"samples={self.count}")
        lines += ["", "k,recall"]
        lines += [f"{k},{self.recalls[k]!r}" for k in self.ks]
        if self.subset_recalls is not None:
            lines += ["", "k,subset_recall"]
            lines += [f"{k},{self.subset_recalls[k]!r}" for k in self.ks]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")


def parse_eval_report(text: str) -> EvalReport:
    header, _, rest = text.partition("\n\n")
    config = dict(line.split("=", 1) for line in header.splitlines())
    count = int(config.pop("samples"))
    blocks = rest.strip("\n").split("\n\n")
    recalls = {int(k): float(v) for k, v in (r.split(",") for r in blocks[0].splitlines()[1:])}
    subset = None
    if len(blocks) > 1:
        subset = {int(k): float(v) for k, v in (r.split(",") for r in blocks[1].splitlines()[1:])}
    return EvalReport(list(recalls), recalls, count, config, subset)


def evaluate_dataset(
    triplets: Sequence[Triplet],
    sources: EmbeddingSources,
    params: FusionParams,
    fuse: str = "unified",
    ks: Sequence[int] = DEFAULT_KS,
    exclude_self: bool = False,
    seed: int | None = None,
) -> EvalReport:
    """Fuse each triplet, search every target, and report Recall@K.

    Subset recall is added when every triplet carries ``subset_ids``. With
    ``exclude_self`` the query's own id is removed from its ranking.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise InputError("ks must be positive integers")
    cfg = params.config
    batch = resolve(triplets, sources, cfg.d, cfg.vocab, cfg.max_len)
    index = build_index(sources.target_store)
    fused = fuse_all(batch, params, fuse)
    with_subsets = all(t.subset_ids is not None for t in triplets)
    depth = len(index) if with_subsets else min(len(index), ks[-1] + int(exclude_self))
    results = search_batch(index, fused, depth)
    if exclude_self:
        results = [RetrievalResult([(i, s) for i, s in r.entries if i != q])
                   for r, q in zip(results, batch.query_ids)]
    recalls = {k: recall_at_k(results, batch.target_ids, k) for k in ks}
    subset = None
    if with_subsets:
        subsets = [t.subset_ids for t in triplets]
        subset = {k: subset_recall(results, batch.target_ids, subsets, k) for k in ks}
    config = {
        "fusion": fuse,
        "d": cfg.d,
        "layers": cfg.layers,
        "heads": cfg.heads,
        "alpha": repr(params.alpha),
        "seed": cfg.seed if seed is None else seed,
        "checkpoint": params_digest(params),
        "exclude_self": str(exclude_self).lower(),
    }
    return EvalReport(ks, recalls, len(batch), config, subset)


# ---------------------------------------------------------------------------
# fusion comparison


def histogram(values: Sequence[float]) -> list[int]:
    """Counts over 40 bins of width 0.05 spanning [-1, 1]; 1.0 lands in the last bin."""
    counts = [0] * N_BINS
    for v in values:
        b = math.floor((v + 1.0) * 20.0)
        counts[min(max(b, 0), N_BINS - 1)] += 1
    return counts


def bin_edges(i: int) -> tuple[str, str]:
    lo = -1 + i * BIN_WIDTH
    return f"{float(lo):.2f}", f"{float(lo + BIN_WIDTH):.2f}"


@dataclass
class ComparisonReport:
    similarities: dict[str, list[float]]

    def histogram(self, method: str) -> list[int]:
        return histogram(self.similarities[method])

    def mean(self, method: str) -> float:
        return statistics.fmean(self.similarities[method])

    def median(self, method: str) -> float:
        return statistics.median(self.similarities[method])

    def to_csv(self) -> str:
        lines = ["method,bin_lo,bin_hi,count"]
        for method in self.similarities:
            for i, c in enumerate(self.histogram(method)):
                lo, hi = bin_edges(i)
                lines.append(f"{method},{lo},{hi},{c}")
        lines += ["", "method,mean,median"]
        for method in self.similarities:
            lines.append(f"{method},{self.mean(method)!r},{self.median(method)!r}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="\n")


def compare_fusion(
    triplets: Sequence[Triplet],
    sources: EmbeddingSources,
    params_a: FusionParams,
    params_b: FusionParams,
    fuse_a: str = "unified",
    fuse_b: str = "pairwise",
) -> ComparisonReport:
    """Cosine similarity of each fused query to its true target, per method.

    Methods are labelled by fusion name; when both slots use the same
    fusion the labels get ``_a`` / ``_b`` suffixes.
    """
    if params_a.config.d != params_b.config.d:
        raise InputError(f"parameter sets disagree on d: {params_a.config.d} vs {params_b.config.d}")
    labels = (fuse_a, fuse_b) if fuse_a != fuse_b else (f"{fuse_a}_a", f"{fuse_b}_b")
    sims = {}
    for label, params, fuse in ((labels[0], params_a, fuse_a), (labels[1], params_b, fuse_b)):
        cfg = params.config
        batch = resolve(triplets, sources, cfg.d, cfg.vocab, cfg.max_len)
        fused = fuse_all(batch, params, fuse)
        sims[label] = [float(v) for v in np.sum(fused * batch.targets, axis=1)]
    return ComparisonReport(sims)

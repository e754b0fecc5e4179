"""Resolve triplets into the frozen-encoder embeddings the network consumes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .data import Triplet
from .embeddings import EmbeddingStore, embed_text, normalize, tokenize
from .errors import DataError, InputError, ShapeError


class DescriptionProvider(Protocol):
    dim: int

    def __call__(self, triplet: Triplet) -> np.ndarray: ...


class StoreDescriptions:
    """Description embeddings exported into a store, keyed by query id."""

    def __init__(self, store: EmbeddingStore):
        self.store = store
        self.dim = store.dim

    def __call__(self, triplet: Triplet) -> np.ndarray:
        if triplet.query_id not in self.store:
            raise KeyError(triplet.query_id)
        return self.store.get(triplet.query_id)


class TextDescriptions:
    """Embed the description text with the toy embedder."""

    def __init__(self, dim: int, seed: int = 42):
        self.dim = dim
        self.seed = seed

    def __call__(self, triplet: Triplet) -> np.ndarray:
        return embed_text(triplet.description, self.dim, self.seed)


@dataclass
class EmbeddingSources:
    query_store: EmbeddingStore
    descriptions: DescriptionProvider
    target_store: EmbeddingStore

    @property
    def dim(self) -> int:
        return self.query_store.dim


@dataclass
class ResolvedBatch:
    """Unit-normalized float64 inputs, one row per triplet."""

    queries: np.ndarray
    descriptions: np.ndarray
    targets: np.ndarray
    tokens: list[tuple[int, ...]]
    target_ids: list[str]
    query_ids: list[str]

    def __len__(self) -> int:
        return len(self.target_ids)


def resolve(triplets: Sequence[Triplet], sources: EmbeddingSources, d: int,
            vocab: int, max_len: int) -> ResolvedBatch:
    """Look up every id; a missing one raises :class:`DataError` naming it and its line.

    Line numbers come from the source file when known, else the 1-based position.
    """
    dims = {sources.query_store.dim, sources.descriptions.dim, sources.target_store.dim}
    if dims != {d}:
        raise ShapeError(f"store dimensions {sorted(dims)} do not match model dimension {d}")
    n = len(triplets)
    q = np.empty((n, d))
    e = np.empty((n, d))
    t = np.empty((n, d))
    tokens = []
    for i, trip in enumerate(triplets):
        line = trip.line or i + 1
        if trip.query_id not in sources.query_store:
            raise DataError(f"unknown query id {trip.query_id!r}", line)
        if trip.target_id not in sources.target_store:
            raise DataError(f"unknown target id {trip.target_id!r}", line)
        try:
            desc = sources.descriptions(trip)
        except KeyError:
            raise DataError(f"no description embedding for {trip.query_id!r}", line) from None
        try:
            q[i] = normalize(sources.query_store.get(trip.query_id))
            e[i] = normalize(desc)
            t[i] = normalize(sources.target_store.get(trip.target_id))
        except InputError as exc:
            raise DataError(str(exc), line) from None
        tokens.append(tokenize(trip.modification, max_len, vocab).tokens)
    return ResolvedBatch(q, e, t, tokens, [x.target_id for x in triplets],
                         [x.query_id for x in triplets])

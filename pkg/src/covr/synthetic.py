"""Small synthetic composed-retrieval tasks for tests, demos and the CLI smoke run.

Every query video appears with every modification, and each target is
``normalize(q + e(d) + e(t))``: the modification text alone never
identifies the target, neither does the query.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Triplet, write_triplets
from .embeddings import EmbeddingStore, embed_text, normalize, write_embedding_store
from .sources import EmbeddingSources, StoreDescriptions

_WORDS = (
    "river city dog child bicycle beach forest kitchen guitar snow market train "
    "sunset dancer horse street bridge garden rain boat window mountain crowd lamp"
).split()

MODIFICATIONS = (
    "add a red car driving past in the background",
    "remove the person and show only the empty scene",
    "make it night time with bright street lights",
    "zoom in closer and slow the motion down",
    "change the season to winter with falling snow",
    "replace the music with the sound of heavy rain",
    "turn the camera to face the opposite direction",
    "show the same scene from high above",
)


@dataclass
class SyntheticTask:
    triplets: list[Triplet]
    query_store: EmbeddingStore
    desc_store: EmbeddingStore
    target_store: EmbeddingStore

    @property
    def sources(self) -> EmbeddingSources:
        return EmbeddingSources(self.query_store, StoreDescriptions(self.desc_store), self.target_store)

    def write(self, directory: str | Path) -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "triplets": directory / "triplets.jsonl",
            "query_store": directory / "queries.cvre",
            "desc_store": directory / "descriptions.cvre",
            "target_store": directory / "targets.cvre",
        }
        write_triplets(self.triplets, paths["triplets"])
        write_embedding_store(self.query_store, paths["query_store"])
        write_embedding_store(self.desc_store, paths["desc_store"])
        write_embedding_store(self.target_store, paths["target_store"])
        return paths


def make_task(n_queries: int = 8, n_mods: int = 4, dim: int = 32, seed: int = 0,
              embed_seed: int = 42) -> SyntheticTask:
    """Build ``n_queries * n_mods`` triplets with one distinct target each."""
    if not 1 <= n_mods <= len(MODIFICATIONS):
        raise ValueError(f"n_mods must be in [1, {len(MODIFICATIONS)}]")
    rng = np.random.default_rng(seed)
    queries, descs, targets, triplets = {}, {}, {}, []
    mods = [embed_text(m, dim, embed_seed) for m in MODIFICATIONS[:n_mods]]
    for i in range(n_queries):
        qid = f"q{i:03d}"
        q = normalize(rng.standard_normal(dim))
        text = "a video of a " + " ".join(rng.choice(_WORDS, size=6, replace=False))
        e = embed_text(text, dim, embed_seed)
        queries[qid] = q
        descs[qid] = e
        for j, mod in enumerate(MODIFICATIONS[:n_mods]):
            tid = f"t{i:03d}_{j}"
            targets[tid] = normalize(q + e + mods[j])
            triplets.append(Triplet(qid, text, mod, tid))
    return SyntheticTask(
        triplets,
        EmbeddingStore(dim, queries),
        EmbeddingStore(dim, descs),
        EmbeddingStore(dim, targets),
    )

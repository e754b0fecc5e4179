"""Triplet JSONL files, corpus word-count statistics, and the caption gate."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, InputError

FIELDS = ("query_id", "description", "modification", "target_id", "subset_ids")
GATE_THRESHOLD = 0.4


@dataclass(frozen=True)
class Triplet:
    query_id: str
    description: str
    modification: str
    target_id: str
    subset_ids: tuple[str, ...] | None = None
    # 1-based source line when read from a file; not part of the record
    line: int | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.subset_ids is not None and not isinstance(self.subset_ids, tuple):
            object.__setattr__(self, "subset_ids", tuple(self.subset_ids))

    def validate(self) -> None:
        for name in ("query_id", "description", "modification", "target_id"):
            if not isinstance(getattr(self, name), str):
                raise InputError(f"{name} must be a string")
        if self.query_id == self.target_id:
            raise InputError(f"query_id equals target_id ({self.query_id!r})")
        if not self.description:
            raise InputError("description is empty")
        if not self.modification:
            raise InputError("modification is empty")
        if self.subset_ids is not None and self.target_id not in self.subset_ids:
            raise InputError(f"target {self.target_id!r} is not in its subset")

    def to_json(self) -> str:
        rec = {
            "query_id": self.query_id,
            "description": self.description,
            "modification": self.modification,
            "target_id": self.target_id,
        }
        if self.subset_ids is not None:
            rec["subset_ids"] = list(self.subset_ids)
        return json.dumps(rec, ensure_ascii=False)


def _parse(line: str, lineno: int) -> Triplet:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON: {exc.msg}", lineno) from None
    if not isinstance(rec, dict):
        raise DataError("record is not a JSON object", lineno)
    for name in FIELDS[:4]:
        if name not in rec:
            raise DataError(f"missing field {name!r}", lineno)
        if not isinstance(rec[name], str):
            raise DataError(f"field {name!r} must be a string", lineno)
    extra = set(rec) - set(FIELDS)
    if extra:
        raise DataError(f"unknown field(s) {sorted(extra)}", lineno)
    subset = rec.get("subset_ids")
    if subset is not None:
        if not isinstance(subset, list) or not all(isinstance(s, str) for s in subset):
            raise DataError("subset_ids must be an array of strings", lineno)
        subset = tuple(subset)
    t = Triplet(rec["query_id"], rec["description"], rec["modification"], rec["target_id"], subset,
                line=lineno)
    try:
        t.validate()
    except InputError as exc:
        raise DataError(str(exc), lineno) from None
    return t


def read_triplets(path: str | Path) -> list[Triplet]:
    """Parse a JSONL triplet file; errors carry the 1-based line number.

    Blank lines are skipped but still counted.
    """
    triplets = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"file is not valid UTF-8: {exc}") from None
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.strip():
            triplets.append(_parse(line, lineno))
    return triplets


def write_triplets(triplets: Iterable[Triplet], path: str | Path) -> None:
    lines = []
    for t in triplets:
        t.validate()
        lines.append(t.to_json() + "\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


# ---------------------------------------------------------------------------
# statistics


def word_count(text: str) -> int:
    return len(text.split())


def round2(x: Fraction) -> Decimal:
    """Exact rational to 2 decimals, half-to-even."""
    scaled = Fraction(x) * 100
    whole = math.floor(scaled)
    rem = scaled - whole
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and whole % 2 == 1):
        whole += 1
    return Decimal(whole).scaleb(-2)


@dataclass
class CorpusStats:
    count: int
    description_hist: dict[int, int]
    modification_hist: dict[int, int]
    description_mean: Fraction
    modification_mean: Fraction
    unique_queries: int
    triplets_per_query: Fraction

    def summary_lines(self) -> list[str]:
        return [
            f"count={self.count}",
            f"unique_queries={self.unique_queries}",
            f"description_mean_words={round2(self.description_mean)}",
            f"modification_mean_words={round2(self.modification_mean)}",
            f"triplets_per_query={round2(self.triplets_per_query)}",
        ]


def _hist(values: Sequence[int]) -> dict[int, int]:
    return dict(sorted(Counter(values).items()))


def dataset_stats(triplets: Sequence[Triplet]) -> CorpusStats:
    if not triplets:
        raise InputError("no triplets to summarize")
    n = len(triplets)
    desc = [word_count(t.description) for t in triplets]
    mod = [word_count(t.modification) for t in triplets]
    queries = len({t.query_id for t in triplets})
    return CorpusStats(
        count=n,
        description_hist=_hist(desc),
        modification_hist=_hist(mod),
        description_mean=Fraction(sum(desc), n),
        modification_mean=Fraction(sum(mod), n),
        unique_queries=queries,
        triplets_per_query=Fraction(n, queries),
    )


def hallucination_gate(similarity: float, threshold: float = GATE_THRESHOLD) -> str:
    """``"reject"`` when a caption's video similarity is strictly below ``threshold``."""
    if not -1.0 <= similarity <= 1.0:
        raise InputError(f"similarity {similarity} outside [-1, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold {threshold} outside [0, 1]")
    return "reject" if similarity < threshold else "accept"

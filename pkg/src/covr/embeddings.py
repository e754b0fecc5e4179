"""Frozen encoder stand-ins: tokenizer, toy text embedder, embedding stores.

Real vision/text encoders run out of process; their outputs arrive as CVRE
files (see :func:`write_embedding_store`). The toy embedder gives tests and
the CLI a deterministic text encoder with no model weights.
"""
from __future__ import annotations

import functools
import string
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._kernels import fnv1a64
from .errors import FormatError, InputError, ShapeError

VOCAB_SIZE = 65_536
MAX_LEN = 77
POOL_ID = 0
DEFAULT_DIM = 256

CVRE_MAGIC = b"CVRE"
CVRE_VERSION = 1


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    original_text: str
    vocab: int = VOCAB_SIZE

    def __len__(self) -> int:
        return len(self.tokens)


def token_id(word: str, vocab: int = VOCAB_SIZE) -> int:
    """Hash a normalized word into ``[1, vocab)``; 0 is the pooling token."""
    return fnv1a64(word.encode("utf-8")) % (vocab - 1) + 1


def tokenize(text: str, max_len: int = MAX_LEN, vocab: int = VOCAB_SIZE) -> TokenSequence:
    """Lowercase, whitespace-split, strip ASCII punctuation, hash, truncate.

    The pooling token 0 is always first, so the result holds at most
    ``max_len - 1`` words. Words that are pure punctuation vanish.
    """
    if max_len < 1:
        raise InputError(f"max_len must be >= 1, got {max_len}")
    if vocab < 2:
        raise InputError(f"vocab must be >= 2, got {vocab}")
    ids = [POOL_ID]
    for raw in text.lower().split():
        if len(ids) >= max_len:
            break
        word = raw.strip(string.punctuation)
        if word:
            ids.append(token_id(word, vocab))
    return TokenSequence(tuple(ids), text, vocab)


@functools.lru_cache(maxsize=65_536)
def _token_vector(tok: int, dim: int, seed: int) -> np.ndarray:
    v = np.random.default_rng([seed, tok]).standard_normal(dim)
    v /= np.linalg.norm(v)
    v.flags.writeable = False
    return v


def toy_embed_text(seq: TokenSequence, dim: int = DEFAULT_DIM, seed: int = 42) -> np.ndarray:
    """Sum of per-token pseudo-random unit vectors, L2-normalized.

    The pooling token only contributes when the text is empty; otherwise
    two texts with disjoint words would always share it.
    """
    if dim < 2:
        raise InputError(f"dim must be >= 2, got {dim}")
    words = [t for t in seq.tokens if t != POOL_ID] or [POOL_ID]
    acc = np.zeros(dim)
    for t in words:
        acc += _token_vector(t, dim, seed)
    norm = np.linalg.norm(acc)
    if norm == 0.0:  # only possible when tokens cancel exactly
        return _token_vector(POOL_ID, dim, seed).copy()
    return acc / norm


def embed_text(text: str, dim: int = DEFAULT_DIM, seed: int = 42,
               vocab: int = VOCAB_SIZE, max_len: int = MAX_LEN) -> np.ndarray:
    return toy_embed_text(tokenize(text, max_len, vocab), dim, seed)


def middle_frame_select(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Pick the frame at index ``len // 2``."""
    if len(frames) == 0:
        raise InputError("cannot select a middle frame from an empty list")
    dims = {np.shape(f) for f in frames}
    if len(dims) != 1:
        raise ShapeError(f"frame embeddings have mixed shapes: {sorted(dims)}")
    return frames[len(frames) // 2]


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise InputError("cannot normalize a zero or non-finite vector")
    return v / n


class EmbeddingStore:
    """Immutable id -> vector map, ids in ascending order.

    Vectors are held as float32, exactly as they are stored on disk.
    """

    def __init__(self, dim: int, entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]):
        if dim < 1:
            raise ShapeError(f"store dim must be positive, got {dim}")
        pairs = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
        ids = [p[0] for p in pairs]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate id in embedding store")
        pairs.sort(key=lambda p: p[0])
        self.dim = dim
        self.ids: list[str] = [p[0] for p in pairs]
        self.vectors = np.zeros((len(pairs), dim), dtype=np.float32)
        for row, (key, vec) in enumerate(pairs):
            vec = np.asarray(vec)
            if vec.shape != (dim,):
                raise ShapeError(f"entry {key!r} has shape {vec.shape}, expected ({dim},)")
            self.vectors[row] = vec
        self.vectors.flags.writeable = False
        self._row = {key: i for i, key in enumerate(self.ids)}

    @classmethod
    def _from_sorted(cls, dim: int, ids: list[str], vectors: np.ndarray) -> "EmbeddingStore":
        store = cls.__new__(cls)
        store.dim = dim
        store.ids = ids
        store.vectors = vectors
        store.vectors.flags.writeable = False
        store._row = {key: i for i, key in enumerate(ids)}
        return store

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, key: str) -> bool:
        return key in self._row

    def __iter__(self):
        return iter(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (self.dim == other.dim and self.ids == other.ids
                and self.vectors.tobytes() == other.vectors.tobytes())

    def row(self, key: str) -> int:
        return self._row[key]

    def get(self, key: str) -> np.ndarray:
        """Stored vector for ``key`` as float64 (not renormalized)."""
        return self.vectors[self._row[key]].astype(np.float64)


# ---------------------------------------------------------------------------
# CVRE container


def encode_embedding_store(store: EmbeddingStore) -> bytes:
    parts = [CVRE_MAGIC, struct.pack("<IIQ", CVRE_VERSION, store.dim, len(store))]
    for key, vec in zip(store.ids, store.vectors):
        raw = key.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(vec.astype("<f4").tobytes())
    return b"".join(parts)


def write_embedding_store(store: EmbeddingStore, path: str | Path) -> None:
    Path(path).write_bytes(encode_embedding_store(store))


def decode_embedding_store(buf: bytes) -> EmbeddingStore:
    if len(buf) < 4 or buf[:4] != CVRE_MAGIC:
        raise FormatError("bad magic, expected b'CVRE'", 0)
    if len(buf) < 20:
        raise FormatError("truncated header", len(buf))
    version, dim, count = struct.unpack_from("<IIQ", buf, 4)
    if version != CVRE_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if dim == 0:
        raise FormatError("dim must be positive", 8)
    vec_bytes = 4 * dim
    ids: list[str] = []
    rows: list[np.ndarray] = []
    off = 20
    for i in range(count):
        rec = off
        if off + 4 > len(buf):
            raise FormatError(f"truncated record {i} id length", off)
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        if off + n > len(buf):
            raise FormatError(f"truncated record {i} id", off)
        try:
            key = buf[off:off + n].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"record {i} id is not valid UTF-8", off) from None
        off += n
        if off + vec_bytes > len(buf):
            raise FormatError(f"truncated record {i} vector: need {dim} floats", off)
        rows.append(np.frombuffer(buf, dtype="<f4", count=dim, offset=off))
        off += vec_bytes
        if ids and key <= ids[-1]:
            what = "duplicate id" if key == ids[-1] else "ids not in ascending order at"
            raise FormatError(f"{what} {key!r}", rec)
        ids.append(key)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    vectors = np.array(rows, dtype=np.float32).reshape(len(rows), dim)
    return EmbeddingStore._from_sorted(dim, ids, vectors)


def load_embedding_store(path: str | Path) -> EmbeddingStore:
    return decode_embedding_store(Path(path).read_bytes())

"""Query/description/modification fusion network.

The description embedding is projected into the visual space, mixed with
the query embedding by a learnable weight alpha, and the mix is then
grounded in the modification text by a small pre-norm transformer whose
tokens cross-attend to it. Vectors travel as ``(1, d)`` row tensors and
linear maps act on the right (``x @ W``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from . import cvrp
from ._kernels import fnv1a64
from .autograd import Tensor
from .embeddings import MAX_LEN, VOCAB_SIZE, TokenSequence
from .errors import ConfigError, FormatError, InputError, ShapeError

STRATEGIES = ("weighted-mean", "addition", "cross-attention")
FUSIONS = ("unified", "pairwise")


@dataclass(frozen=True)
class FusionConfig:
    d: int = 256
    layers: int = 2
    heads: int = 4
    vocab: int = VOCAB_SIZE
    max_len: int = MAX_LEN
    seed: int = 42

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if self.layers < 1:
            raise ConfigError(f"need at least one layer, got {self.layers}")
        if self.vocab < 2 or self.max_len < 1:
            raise ConfigError("vocab must be >= 2 and max_len >= 1")
        if not 0 <= self.seed < 2**32:
            raise ConfigError("seed must fit in 32 bits")


def _shapes(cfg: FusionConfig) -> list[tuple[str, tuple[int, ...]]]:
    d = cfg.d
    shapes = [
        ("proj_W", (d, d)),
        ("proj_b", (d,)),
        ("alpha_raw", (1,)),
        ("tok_embed", (cfg.vocab, d)),
        ("pos_embed", (cfg.max_len, d)),
    ]
    for layer in range(cfg.layers):
        p = f"layers.{layer}"
        for block in ("self_attn", "cross_attn"):
            shapes += [(f"{p}.{block}.{w}", (d, d)) for w in ("Wq", "Wk", "Wv", "Wo")]
        shapes += [
            (f"{p}.ffn.W1", (d, 4 * d)),
            (f"{p}.ffn.b1", (4 * d,)),
            (f"{p}.ffn.W2", (4 * d, d)),
            (f"{p}.ffn.b2", (d,)),
        ]
        for i in (1, 2, 3):
            shapes += [(f"{p}.norm{i}.gain", (d,)), (f"{p}.norm{i}.shift", (d,))]
    shapes.append(("out_head", (d, d)))
    return shapes


@dataclass
class FusionParams:
    """All trainable tensors, keyed by name in a fixed canonical order."""

    config: FusionConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def alpha(self) -> float:
        return ag.sigmoid(Tensor(self.tensors["alpha_raw"].data)).item()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "FusionParams":
        return FusionParams(self.config, {
            k: Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in self.tensors.items()
        })

    def snap_to_float32(self) -> None:
        """Round every value to the nearest float32, as a checkpoint would."""
        for t in self.tensors.values():
            t.data[...] = t.data.astype(np.float32)

    def equal(self, other: "FusionParams") -> bool:
        return (self.config == other.config and self.names() == other.names()
                and all(self[k].data.tobytes() == other[k].data.tobytes() for k in self.tensors))


def init_params(d: int = 256, layers: int = 2, heads: int = 4, vocab: int = VOCAB_SIZE,
                seed: int = 42, max_len: int = MAX_LEN) -> FusionParams:
    """Seeded Xavier-uniform weights, zero biases, unit layer-norm gains, alpha = 0.5.

    Values are drawn on the float32 grid so that a fresh model survives a
    checkpoint round-trip unchanged.
    """
    cfg = FusionConfig(d, layers, heads, vocab, max_len, seed)
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _shapes(cfg):
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            w = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            over = np.abs(w.astype(np.float64)) > bound
            w[over] = np.nextafter(w[over], np.float32(0))
            data = w.astype(np.float64)
        elif name.endswith(".gain"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return FusionParams(cfg, tensors)


def xavier_bound(shape: tuple[int, int]) -> float:
    return math.sqrt(6.0 / (shape[0] + shape[1]))


# ---------------------------------------------------------------------------
# forward pass


def as_row(x, d: int | None = None) -> Tensor:
    """Coerce a vector (array or tensor) into a ``(1, d)`` row tensor."""
    if isinstance(x, Tensor):
        t = x if x.ndim == 2 else ag.reshape(x, (1, -1))
    else:
        t = Tensor(np.asarray(x, dtype=np.float64).reshape(1, -1))
    if t.shape[0] != 1 or (d is not None and t.shape[1] != d):
        raise ShapeError(f"expected a vector of dimension {d}, got shape {t.shape}")
    return t


def multi_head_attention(x_q: Tensor, x_kv: Tensor, params: FusionParams, prefix: str) -> Tensor:
    """Multi-head attention with ``prefix.{Wq,Wk,Wv,Wo}``; rows of ``x_q`` attend over rows of ``x_kv``."""
    h = params.config.heads
    d = params.config.d
    dh = d // h

    def heads(x: Tensor, w: str) -> Tensor:
        y = ag.matmul(x, params[f"{prefix}.{w}"])
        return ag.transpose(ag.reshape(y, (x.shape[0], h, dh)), (1, 0, 2))

    out = ag.scaled_dot_attention(heads(x_q, "Wq"), heads(x_kv, "Wk"), heads(x_kv, "Wv"))
    merged = ag.reshape(ag.transpose(out, (1, 0, 2)), (x_q.shape[0], d))
    return ag.matmul(merged, params[f"{prefix}.Wo"])


def project_description(e_d, params: FusionParams) -> Tensor:
    """Map a description embedding into the visual space and renormalize."""
    x = as_row(e_d, params.config.d)
    return ag.l2_normalize(ag.add(ag.matmul(x, params["proj_W"]), params["proj_b"]))


def combine_query_description(v_q, v_d, params: FusionParams,
                              strategy: str = "weighted-mean") -> Tensor:
    """Merge the query embedding with an already-projected description embedding.

    ``weighted-mean`` computes ``(1 - alpha) * v_q + alpha * v_d``;
    ``addition`` sums the two; ``cross-attention`` lets ``v_q`` attend over
    the pair using the first layer's cross-attention weights. The result is
    always renormalized.
    """
    d = params.config.d
    q = as_row(v_q, d)
    v = as_row(v_d, d)
    if strategy == "weighted-mean":
        alpha = ag.sigmoid(params["alpha_raw"])
        mixed = ag.add(ag.smul(ag.rsub(1.0, alpha), q), ag.smul(alpha, v))
    elif strategy == "addition":
        mixed = ag.add(q, v)
    elif strategy == "cross-attention":
        mixed = multi_head_attention(q, ag.concat_rows([q, v]), params, "layers.0.cross_attn")
    else:
        raise ConfigError(f"unknown combine strategy {strategy!r}; expected one of {STRATEGIES}")
    return ag.l2_normalize(mixed)


def _check_tokens(tokens: TokenSequence | tuple[int, ...], cfg: FusionConfig) -> tuple[int, ...]:
    toks = tuple(tokens.tokens if isinstance(tokens, TokenSequence) else tokens)
    if not toks:
        raise InputError("modification token sequence is empty")
    if len(toks) > cfg.max_len:
        raise InputError(f"{len(toks)} tokens exceed max_len {cfg.max_len}")
    if min(toks) < 0 or max(toks) >= cfg.vocab:
        raise InputError(f"token id outside vocabulary of size {cfg.vocab}")
    return toks


def ground_modification(combined, mod_tokens: TokenSequence, params: FusionParams) -> Tensor:
    """Run the grounding encoder and return the pooled, normalized output.

    Each block is pre-norm self-attention over the tokens, pre-norm
    cross-attention from the tokens to ``combined`` (a key/value sequence
    of length one), and a pre-norm GELU feed-forward layer, each wrapped in
    a residual connection. The pooling token at position 0 is read out
    through ``out_head``.
    """
    cfg = params.config
    kv = as_row(combined, cfg.d)
    toks = _check_tokens(mod_tokens, cfg)
    x = ag.add(ag.take_rows(params["tok_embed"], toks),
               ag.take_rows(params["pos_embed"], range(len(toks))))
    for layer in range(cfg.layers):
        p = f"layers.{layer}"
        h = ag.layer_norm(x, params[f"{p}.norm1.gain"], params[f"{p}.norm1.shift"])
        x = ag.add(x, multi_head_attention(h, h, params, f"{p}.self_attn"))
        h = ag.layer_norm(x, params[f"{p}.norm2.gain"], params[f"{p}.norm2.shift"])
        x = ag.add(x, multi_head_attention(h, kv, params, f"{p}.cross_attn"))
        h = ag.layer_norm(x, params[f"{p}.norm3.gain"], params[f"{p}.norm3.shift"])
        hidden = ag.gelu(ag.add(ag.matmul(h, params[f"{p}.ffn.W1"]), params[f"{p}.ffn.b1"]))
        x = ag.add(x, ag.add(ag.matmul(hidden, params[f"{p}.ffn.W2"]), params[f"{p}.ffn.b2"]))
    pooled = ag.take_rows(x, [0])
    return ag.l2_normalize(ag.matmul(pooled, params["out_head"]))


def unified_fuse(q_emb, d_emb_raw, mod_tokens: TokenSequence, params: FusionParams,
                 strategy: str = "weighted-mean") -> Tensor:
    """Composed query embedding: project, combine, then ground in a single encoder."""
    combined = combine_query_description(q_emb, project_description(d_emb_raw, params),
                                         params, strategy)
    return ground_modification(combined, mod_tokens, params)


def pairwise_fuse(q_emb, d_emb_raw, mod_tokens: TokenSequence, params: FusionParams) -> Tensor:
    """Baseline that grounds (query, text) and (description, text) separately.

    The two grounded embeddings and the weighted query/description mix are
    averaged and renormalized.
    """
    d = params.config.d
    q = as_row(q_emb, d)
    v_d = project_description(d_emb_raw, params)
    e1 = ground_modification(q, mod_tokens, params)
    e2 = ground_modification(v_d, mod_tokens, params)
    e3 = combine_query_description(q, v_d, params, "weighted-mean")
    return ag.l2_normalize(ag.scale(ag.add(ag.add(e1, e2), e3), 1.0 / 3.0))


def fuse_function(kind: str) -> Callable[..., Tensor]:
    if kind == "unified":
        return unified_fuse
    if kind == "pairwise":
        return pairwise_fuse
    raise ConfigError(f"unknown fusion {kind!r}; expected one of {FUSIONS}")


# ---------------------------------------------------------------------------
# checkpoints


def encode_params(params: FusionParams) -> bytes:
    c = params.config
    meta = np.array([c.d, c.layers, c.heads, c.vocab, c.seed, c.max_len], dtype=np.uint32)
    return cvrp.encode([("meta", meta)] + [(k, t.data) for k, t in params.tensors.items()])


def params_digest(params: FusionParams) -> str:
    return f"{fnv1a64(encode_params(params)):016x}"


def decode_params(buf: bytes) -> FusionParams:
    raw = cvrp.decode(buf)
    meta = raw.pop("meta", None)
    if meta is None or meta.shape != (6,):
        raise FormatError("checkpoint lacks a 6-value 'meta' tensor", 12)
    d, layers, heads, vocab, seed, max_len = (int(v) for v in meta.view(np.uint32))
    try:
        cfg = FusionConfig(d, layers, heads, vocab, max_len, seed)
    except ConfigError as exc:
        raise FormatError(f"invalid checkpoint meta: {exc}", 12) from None
    expected = _shapes(cfg)
    if [n for n, _ in expected] != list(raw):
        missing = {n for n, _ in expected} ^ set(raw)
        raise FormatError(f"checkpoint tensor set does not match its meta: {sorted(missing)[:4]}", 12)
    tensors = {}
    for name, shape in expected:
        arr = raw[name]
        if arr.shape != shape:
            raise FormatError(f"tensor {name!r} has shape {arr.shape}, expected {shape}", 12)
        tensors[name] = Tensor(arr.astype(np.float64), requires_grad=True, name=name)
    return FusionParams(cfg, tensors)


def save_checkpoint(params: FusionParams, path: str | Path) -> bytes:
    data = encode_params(params)
    Path(path).write_bytes(data)
    return data


def load_checkpoint(path: str | Path) -> FusionParams:
    return decode_params(Path(path).read_bytes())

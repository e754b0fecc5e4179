"""Mini-batch training of the fusion network with in-batch negatives."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels, cvrp
from .autograd import Tensor
from .data import Triplet
from .embeddings import MAX_LEN, VOCAB_SIZE
from .errors import ConfigError, FormatError, TrainingError
from .fusion import FUSIONS, STRATEGIES, FusionParams, fuse_function, init_params
from .objective import BETA, LAMBDA, TAU, hn_nce_loss, similarity_matrix
from .sources import EmbeddingSources, resolve

log = logging.getLogger(__name__)

# the published large-scale schedule; desk-scale defaults below differ
FULL_SCALE_PRESET = {"epochs": 5, "batch_size": 1024, "learning_rate": 1e-5}


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 3e-4
    seed: int = 42
    d: int = 256
    layers: int = 2
    heads: int = 4
    vocab: int = VOCAB_SIZE
    max_len: int = MAX_LEN
    tau: float = TAU
    lam: float = LAMBDA
    beta: float = BETA
    shuffle: bool = True
    grad_clip: float | None = None
    optimizer: str = "adam"
    fusion: str = "unified"
    strategy: str = "weighted-mean"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        # zero is allowed: it makes a run a pure forward/backward audit
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")
        if not self.lam > 0:
            raise ConfigError("lambda must be > 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be > 0 when set")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    kind = "sgd"

    def __init__(self, params: Sequence[Tensor], lr: float):
        self.params = list(params)
        self.lr = lr
        self.t = 0

    def step(self) -> None:
        self.t += 1
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def state(self) -> list[tuple[str, np.ndarray]]:
        return []

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        pass

    def snap_to_float32(self) -> None:
        pass


class Adam:
    kind = "adam"

    def __init__(self, params: Sequence[Tensor], lr: float,
                 b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            _kernels.adam_update(p.data, g, m, v, self.lr, self.b1, self.b2, self.eps, self.t)

    def state(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for p, m, v in zip(self.params, self.m, self.v):
            out += [(f"m.{p.name}", m), (f"v.{p.name}", v)]
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.params):
            try:
                m, v = tensors[f"m.{p.name}"], tensors[f"v.{p.name}"]
            except KeyError as exc:
                raise FormatError(f"optimizer state lacks {exc.args[0]!r}", 12) from None
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise FormatError(f"optimizer state for {p.name!r} has the wrong shape", 12)
            self.m[i] = m.astype(np.float64)
            self.v[i] = v.astype(np.float64)

    def snap_to_float32(self) -> None:
        for arr in self.m + self.v:
            arr[...] = arr.astype(np.float32)


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


def make_optimizer(kind: str, lr: float, params: Sequence[Tensor]):
    if kind not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {kind!r}; expected one of {sorted(OPTIMIZERS)}")
    if not lr >= 0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    return OPTIMIZERS[kind](params, lr)


def save_optimizer(opt, path: str | Path) -> bytes:
    kind = list(OPTIMIZERS).index(opt.kind)
    meta = np.array([kind, opt.t], dtype=np.uint32)
    return cvrp.write(path, [("meta", meta)] + opt.state())


def load_optimizer(path: str | Path, params: FusionParams, lr: float):
    raw = cvrp.read(path)
    meta = raw.pop("meta", None)
    if meta is None or meta.shape != (2,):
        raise FormatError("optimizer state lacks a 2-value 'meta' tensor", 12)
    kind_code, step = (int(v) for v in meta.view(np.uint32))
    if kind_code >= len(OPTIMIZERS):
        raise FormatError(f"unknown optimizer code {kind_code}", 12)
    opt = make_optimizer(list(OPTIMIZERS)[kind_code], lr, params.parameters())
    opt.t = step
    opt.load_state(raw)
    return opt


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: FusionParams
    losses: list[float]
    optimizer: object
    alphas: list[float] = field(default_factory=list)


def clip_gradients(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))
    if total > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / total
    return total


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(
    triplets: Sequence[Triplet],
    sources: EmbeddingSources,
    config: TrainConfig,
    params: FusionParams | None = None,
    optimizer=None,
    start_epoch: int = 0,
    on_epoch: Callable[[int, float, FusionParams], None] | None = None,
) -> TrainResult:
    """Train for epochs ``start_epoch .. config.epochs - 1``.

    Each epoch visits the triplets in a seeded order, fuses every batch,
    scores it against the batch's own targets and takes one optimizer step
    per batch. The reported loss for an epoch is the mean batch loss.

    At every epoch boundary parameters and optimizer moments are rounded to
    float32, the checkpoint precision, so resuming from a checkpoint
    continues bit-for-bit.
    """
    if not triplets:
        raise ConfigError("no training triplets")
    if params is None:
        params = init_params(config.d, config.layers, config.heads, config.vocab,
                             config.seed, config.max_len)
    cfg = params.config
    data = resolve(triplets, sources, cfg.d, cfg.vocab, cfg.max_len)
    if optimizer is None:
        optimizer = make_optimizer(config.optimizer, config.learning_rate, params.parameters())
    fuse = fuse_function(config.fusion)
    n = len(data)
    result = TrainResult(params, [], optimizer)
    for epoch in range(start_epoch, config.epochs):
        order = epoch_order(n, config.seed, epoch, config.shuffle)
        batch_losses = []
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            params.zero_grad()
            if config.fusion == "unified":
                fused = [fuse(data.queries[i], data.descriptions[i], data.tokens[i], params,
                              config.strategy) for i in idx]
            else:
                fused = [fuse(data.queries[i], data.descriptions[i], data.tokens[i], params)
                         for i in idx]
            sim = similarity_matrix(fused, Tensor(data.targets[idx]),
                                    config.tau, config.lam, config.beta)
            loss = hn_nce_loss(sim)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            loss.backward()
            if config.grad_clip is not None:
                clip_gradients(params.parameters(), config.grad_clip)
            optimizer.step()
            batch_losses.append(value)
        params.snap_to_float32()
        optimizer.snap_to_float32()
        alpha = params.alpha
        if not 0.0 < alpha < 1.0:
            raise TrainingError(f"alpha left (0, 1) at epoch {epoch}: {alpha}")
        epoch_loss = float(np.mean(batch_losses))
        if not math.isfinite(epoch_loss):
            raise TrainingError(f"non-finite epoch loss at epoch {epoch}")
        result.losses.append(epoch_loss)
        result.alphas.append(alpha)
        log.debug("epoch %d loss %.6f alpha %.4f", epoch, epoch_loss, alpha)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss, params)
    return result

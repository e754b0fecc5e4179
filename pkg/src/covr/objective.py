"""Contrastive loss with hard-negative weighting over in-batch negatives."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from ._kernels import hn_weights
from .autograd import Tensor
from .errors import ConfigError, InputError, ShapeError

TAU = 0.07
LAMBDA = 1.0
BETA = 0.5

NORM_TOL = 1e-4


@dataclass
class SimilarityMatrix:
    """Cosine scores ``S[i, j]`` between fused query ``i`` and target ``j``."""

    S: Tensor
    tau: float = TAU
    lam: float = LAMBDA
    beta: float = BETA

    def __post_init__(self):
        if self.S.ndim != 2 or self.S.shape[0] != self.S.shape[1]:
            raise ShapeError(f"similarity matrix must be square, got {self.S.shape}")

    @property
    def size(self) -> int:
        return self.S.shape[0]


def _stack(rows) -> Tensor:
    if isinstance(rows, Tensor):
        return rows if rows.ndim == 2 else ag.reshape(rows, (1, -1))
    if isinstance(rows, np.ndarray):
        return Tensor(np.atleast_2d(rows))
    parts = [r if isinstance(r, Tensor) else Tensor(np.asarray(r, dtype=np.float64)) for r in rows]
    if not parts:
        raise InputError("empty batch")
    return ag.concat_rows([p if p.ndim == 2 else ag.reshape(p, (1, -1)) for p in parts])


def similarity_matrix(fused: Sequence | Tensor, targets: Sequence | Tensor,
                      tau: float = TAU, lam: float = LAMBDA, beta: float = BETA) -> SimilarityMatrix:
    """All pairwise dot products of unit-norm fused queries and targets."""
    f = _stack(fused)
    t = _stack(targets)
    if f.shape[0] != t.shape[0]:
        raise InputError(f"batch size mismatch: {f.shape[0]} fused vs {t.shape[0]} targets")
    if f.shape[1] != t.shape[1]:
        raise ShapeError(f"dimension mismatch: {f.shape[1]} vs {t.shape[1]}")
    for label, m in (("fused", f.data), ("target", t.data)):
        dev = np.abs(np.linalg.norm(m, axis=1) - 1.0).max()
        if not dev <= NORM_TOL:
            raise InputError(f"{label} embeddings are not unit norm (deviation {dev:.3g})")
    return SimilarityMatrix(ag.matmul(f, ag.transpose(t)), tau, lam, beta)


def hard_negative_weights(sim: SimilarityMatrix | np.ndarray, direction: str = "row",
                          beta: float | None = None, tau: float | None = None) -> np.ndarray:
    """Importance weights for negatives, mean-normalized to 1 per row or column.

    ``w[i, j] = (B-1) exp(beta S[i,j] / tau) / sum_{k != i} exp(beta S[i,k] / tau)``
    for ``j != i``; the diagonal is 1 and unused. The column direction
    normalizes down columns instead. Weights are plain arrays: no gradient
    flows through them.
    """
    if isinstance(sim, SimilarityMatrix):
        s = sim.S.data
        beta = sim.beta if beta is None else beta
        tau = sim.tau if tau is None else tau
    else:
        s = np.asarray(sim, dtype=np.float64)
        beta = BETA if beta is None else beta
        tau = TAU if tau is None else tau
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if direction == "row":
        return hn_weights(s, beta, tau)
    if direction == "column":
        return hn_weights(s.T, beta, tau).T
    raise ConfigError(f"direction must be 'row' or 'column', got {direction!r}")


def hn_nce_loss(sim: SimilarityMatrix,
                weights: tuple[np.ndarray, np.ndarray] | None = None) -> Tensor:
    """Symmetric hard-negative contrastive loss, summed over the batch.

    For each query ``i`` the positive logit ``S[i,i]/tau`` competes with
    ``log(lam) + S[i,i]/tau`` and the weighted negatives
    ``S[i,j]/tau + log w[i,j]``; a second term does the same along
    columns (target to query). Both terms use log-sum-exp.

    ``weights`` overrides the (row, column) weight matrices, which are
    otherwise computed from ``sim``; finite-difference checks pass the
    weights of the unperturbed point to match the stop-gradient.
    """
    tau, lam = sim.tau, sim.lam
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    b = sim.size
    eye = np.eye(b, dtype=bool)
    log_lam = math.log(lam)
    logits = ag.scale(sim.S, 1.0 / tau)
    pos = ag.sum_all(ag.diagonal(logits))

    def offsets(w: np.ndarray) -> Tensor:
        return Tensor(np.where(eye, log_lam, np.log(np.where(eye, 1.0, w))))

    if weights is None:
        weights = hard_negative_weights(sim, "row"), hard_negative_weights(sim, "column")
    w_row, w_col = weights
    if w_row.shape != (b, b) or w_col.shape != (b, b):
        raise ShapeError(f"weight matrices must be {b}x{b}")
    row_terms = ag.sum_all(ag.logsumexp_rows(ag.add(logits, offsets(w_row))))
    col_terms = ag.sum_all(ag.logsumexp_rows(ag.transpose(ag.add(logits, offsets(w_col)))))
    return ag.sub(ag.add(row_terms, col_terms), ag.scale(pos, 2.0))

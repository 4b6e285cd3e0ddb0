"""Taxonomy-driven penalties: parent/child embedding similarity and a coarse-derived label distribution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import ShapeError, ValidationError
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.01  # similarity
    lambda2: float = 0.001  # distribution

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("loss weights must be non-negative")


def similarity_loss(V_l1, V_l2: Tensor, edges: Sequence[Tuple[int, int]]) -> Tensor:
    """Sum over edges (i, j) of 0.5 * ||V_l1[i] - V_l2[j]||^2.

    A fine label with several parents contributes once per edge.
    """
    V_l1, V_l2 = T.as_tensor(V_l1), T.as_tensor(V_l2)
    if V_l1.shape[1] != V_l2.shape[1]:
        raise ShapeError(f"embedding widths differ: {V_l1.shape} vs {V_l2.shape}")
    pairs = np.asarray(list(edges), dtype=np.intp).reshape(-1, 2)
    if len(pairs) == 0:
        return T.mul(V_l2.sum(), 0.0)
    ci, fj = pairs[:, 0], pairs[:, 1]
    if ci.min() < 0 or ci.max() >= V_l1.shape[0] or fj.min() < 0 or fj.max() >= V_l2.shape[0]:
        raise ValidationError("edge references an index outside the embedding tables")
    diff = T.gather(V_l1, ci) - T.gather(V_l2, fj)
    return (diff * diff).sum() * 0.5


def derive_fine_distribution(P_y, w: np.ndarray) -> np.ndarray:
    """d_j = sum_i P_i w[i, j] / sum_ij P_i w[i, j], returned as a constant array."""
    d, valid = derive_fine_distribution_batch(np.atleast_2d(_values(P_y)), w)
    if not valid.all():
        raise ValidationError("coarse probabilities give zero mass to every fine label; skip the penalty")
    return d.reshape(np.shape(_values(P_y))[:-1] + (d.shape[-1],))


def derive_fine_distribution_batch(P_y: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise version; rows with zero total mass come back zero with valid=False."""
    P_y = np.asarray(P_y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if P_y.shape[-1] != w.shape[0]:
        raise ShapeError(f"P_y {P_y.shape} does not match connection matrix {w.shape}")
    mass = P_y @ w
    total = mass.sum(axis=-1, keepdims=True)
    valid = total[..., 0] > 0
    d = np.where(total > 0, mass / np.where(total > 0, total, 1.0), 0.0)
    return d, valid


def distribution_loss(d, P_l2: Tensor, normalize: bool = False) -> Tensor:
    """KL(d || P_l2) with the sigmoid outputs used as-is unless ``normalize``."""
    p = P_l2
    if normalize:
        p = P_l2 / P_l2.sum(axis=-1, keepdims=True)
    return T.kl_divergence(d, p)


def total_loss(bce, sim, dist, weights: LossWeights) -> Tensor:
    return T.as_tensor(bce) + weights.lambda1 * T.as_tensor(sim) + weights.lambda2 * T.as_tensor(dist)


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)

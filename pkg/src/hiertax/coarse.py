"""Stage one: label-wise attention classifier over coarse labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Set, Tuple

import numpy as np

from . import tensor as T
from .errors import ShapeError, ValidationError
from .tensor import Tensor


@dataclass
class CoarseParams:
    V: Tensor  # label embeddings, L1 x u
    w_f: Tensor  # head weights, u
    b_f: Tensor  # one bias per label, L1

    @classmethod
    def init(cls, n_labels: int, u: int, rng: np.random.Generator) -> "CoarseParams":
        return cls(
            V=T.glorot(rng, (n_labels, u), n_labels, u),
            w_f=T.glorot(rng, (u,), u, 1),
            b_f=T.glorot(rng, (n_labels,), n_labels, n_labels),
        )

    def named(self) -> Dict[str, Tensor]:
        return {"V_l1": self.V, "w_f": self.w_f, "b_f": self.b_f}

    @classmethod
    def from_named(cls, arrays) -> "CoarseParams":
        return cls(*(Tensor(arrays[k], requires_grad=True) for k in ("V_l1", "w_f", "b_f")))


def coarse_forward(
    H: Tensor, params: CoarseParams, mask: Optional[np.ndarray] = None
) -> Tuple[Tensor, Tensor]:
    """Return (P_y, alpha) for H of shape (M, u) or (B, M, u).

    e = V H^T scores every label against every word, alpha normalises each
    label's scores over words, and the per-label context c = alpha H feeds a
    shared sigmoid unit with a per-label bias.
    """
    if H.shape[-2] == 0:
        raise ValidationError("document has no tokens")
    if H.shape[-1] != params.V.shape[1]:
        raise ShapeError(f"hidden width {H.shape[-1]} does not match label embeddings {params.V.shape}")
    word_mask = None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]
    alpha = T.softmax(params.V @ H.T, axis=-1, mask=word_mask)
    context = alpha @ H
    probs = T.sigmoid((context * params.w_f).sum(axis=-1) + params.b_f)
    return probs, alpha


def coarse_loss(P_y: Tensor, y) -> Tensor:
    return T.bce_loss(y, P_y)


def coarse_predict(P_y, threshold: float = 0.5) -> Set[int]:
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    p = P_y.data if isinstance(P_y, Tensor) else np.asarray(P_y)
    return {int(i) for i in np.flatnonzero(p >= threshold)}

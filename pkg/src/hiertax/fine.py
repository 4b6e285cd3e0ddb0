"""Stage two: fine-label attention blended with coarse-probability-weighted word attention."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Set, Tuple

import numpy as np

from . import tensor as T
from .coarse import coarse_predict
from .errors import ShapeError, ValidationError
from .tensor import Tensor


@dataclass
class FineParams:
    V: Tensor  # label embeddings, L2 x u
    W: Tensor  # head weights over [context, embedding], 2u x 1
    b: Tensor  # per-label bias, L2

    @classmethod
    def init(cls, n_labels: int, u: int, rng: np.random.Generator) -> "FineParams":
        return cls(
            V=T.glorot(rng, (n_labels, u), n_labels, u),
            W=T.glorot(rng, (2 * u, 1), 2 * u, 1),
            b=T.glorot(rng, (n_labels,), n_labels, n_labels),
        )

    def named(self) -> Dict[str, Tensor]:
        return {"V_l2": self.V, "W": self.W, "b": self.b}

    @classmethod
    def from_named(cls, arrays) -> "FineParams":
        return cls(*(Tensor(arrays[k], requires_grad=True) for k in ("V_l2", "W", "b")))


@dataclass(frozen=True)
class HierAttnConfig:
    blend: float = 2.0  # weight on the coarse-guided word attention
    head_relu: bool = False

    def __post_init__(self):
        if self.blend < 0:
            raise ValidationError("blend weight must be non-negative")


def _word_mask(mask, extra_axis: bool = True):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    return mask[..., None, :] if extra_axis else mask


def coarse_guidance(
    H: Tensor, V_l1, P_y, mask: Optional[np.ndarray] = None
) -> Tensor:
    """Global word attention W_l1 (length M) from coarse relevance weighted by P_y.

    P_y is a constant here: no gradient reaches the coarse classifier.
    """
    V_l1 = T.as_tensor(V_l1)
    p = np.asarray(P_y.data if isinstance(P_y, Tensor) else P_y, dtype=np.float64)
    if p.shape != H.shape[:-2] + (V_l1.shape[0],):
        raise ShapeError(f"coarse probabilities {p.shape} do not fit H {H.shape} and V_l1 {V_l1.shape}")
    K = V_l1 @ H.T
    O = T.broadcast(Tensor(p), K.shape, axis=-1) * K
    return T.softmax(O.sum(axis=-2), axis=-1, mask=_word_mask(mask, extra_axis=False))


def _head(C: Tensor, params: FineParams, head_relu: bool) -> Tensor:
    V = params.V
    if C.ndim == 3:
        V = T.broadcast(V, C.shape, axis=0)
    scores = T.concat([C, V], axis=-1) @ params.W
    scores = scores.reshape(scores.shape[:-1])
    if head_relu:
        scores = T.relu(scores)
    return T.sigmoid(scores + params.b)


def fine_forward(
    H: Tensor,
    params: FineParams,
    W_l1: Tensor,
    blend: float = 2.0,
    mask: Optional[np.ndarray] = None,
    head_relu: bool = False,
) -> Tuple[Tensor, Tensor]:
    """Return (P_l2, W_prime).

    W_prime = softmax_words(V_l2 H^T) + blend * W_l1 on every row, so each row
    sums to 1 + blend. The head is sigmoid([C, V_l2] W + b) with C = W_prime H;
    ``head_relu`` clamps the score at zero before the bias.
    """
    if blend < 0:
        raise ValidationError("blend weight must be non-negative")
    if H.shape[-1] != params.V.shape[1]:
        raise ShapeError(f"hidden width {H.shape[-1]} does not match label embeddings {params.V.shape}")
    W_l2 = T.softmax(params.V @ H.T, axis=-1, mask=_word_mask(mask))
    W_prime = W_l2 + blend * T.broadcast(W_l1, W_l2.shape, axis=-2)
    return _head(W_prime @ H, params, head_relu), W_prime


def flat_forward(
    H: Tensor, params: FineParams, mask: Optional[np.ndarray] = None, head_relu: bool = False
) -> Tuple[Tensor, Tensor]:
    """Plain label-wise attention classifier with no coarse input."""
    W_l2 = T.softmax(params.V @ H.T, axis=-1, mask=_word_mask(mask))
    return _head(W_l2 @ H, params, head_relu), W_l2


def fine_loss(P_l2: Tensor, z) -> Tensor:
    return T.bce_loss(z, P_l2)


def fine_predict(P_l2, threshold: float = 0.5) -> Set[int]:
    return coarse_predict(P_l2, threshold)

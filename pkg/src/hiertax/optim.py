"""Adam with bias correction and per-parameter state."""

from __future__ import annotations

from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import ValidationError
from .tensor import Tensor


class Adam:
    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: Dict[str, dict] = {
            name: {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
            for name, p in self.params.items()
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ValidationError(f"parameter {name!r} has no gradient")
        for name, p in self.params.items():
            adam_step(p, p.grad, self.state[name], self.lr, self.betas, self.eps)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, st in self.state.items():
            out[f"adam.m.{name}"] = st["m"]
            out[f"adam.v.{name}"] = st["v"]
        return out

    def steps(self) -> Dict[str, int]:
        return {name: st["t"] for name, st in self.state.items()}

    def load_state(self, arrays: Mapping[str, np.ndarray], steps: Mapping[str, int]) -> None:
        for name in self.params:
            self.state[name] = {
                "m": np.array(arrays[f"adam.m.{name}"]),
                "v": np.array(arrays[f"adam.v.{name}"]),
                "t": int(steps[name]),
            }


def adam_step(
    param: Tensor,
    grad: Optional[np.ndarray],
    state: dict,
    lr: float = 1e-3,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """In-place Adam update of ``param.data``; ``state`` holds m, v and t."""
    if grad is None:
        raise ValidationError(f"parameter {param.name or '<unnamed>'} has no gradient")
    b1, b2 = betas
    state["t"] += 1
    t = state["t"]
    state["m"] = b1 * state["m"] + (1.0 - b1) * grad
    state["v"] = b2 * state["v"] + (1.0 - b2) * grad * grad
    m_hat = state["m"] / (1.0 - b1**t)
    v_hat = state["v"] / (1.0 - b2**t)
    param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)

"""Per-token hidden states H (M x u) from a small self-attention encoder, or from a file."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np

from . import tensor as T
from .corpus import TokenizedDoc
from .errors import ValidationError
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    u: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 256
    dropout: float = 0.2

    def __post_init__(self):
        if self.u % self.heads:
            raise ValidationError(f"hidden size {self.u} is not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if min(self.vocab_size, self.u, self.layers, self.heads, self.max_len) < 1:
            raise ValidationError("encoder sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator) -> Dict[str, Tensor]:
    u, ff = config.u, 2 * config.u
    params = {
        "tok_emb": T.glorot(rng, (config.vocab_size, u), config.vocab_size, u),
        "pos_emb": T.glorot(rng, (config.max_len, u), config.max_len, u),
    }
    for k in range(config.layers):
        for name in ("wq", "wk", "wv", "wo"):
            params[f"layer{k}.{name}"] = T.glorot(rng, (u, u), u, u)
        params[f"layer{k}.w1"] = T.glorot(rng, (u, ff), u, ff)
        params[f"layer{k}.b1"] = T.glorot(rng, (ff,), u, ff)
        params[f"layer{k}.w2"] = T.glorot(rng, (ff, u), ff, u)
        params[f"layer{k}.b2"] = T.glorot(rng, (u,), ff, u)
    return params


class Encoder:
    """Token + learned position embeddings followed by residual attention blocks."""

    def __init__(self, config: EncoderConfig, params: Optional[Dict[str, Tensor]] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_encoder_params(config, np.random.default_rng(seed))

    def forward(
        self,
        ids: np.ndarray,
        mask: Optional[np.ndarray] = None,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        return_attention: bool = False,
    ):
        """Encode a padded batch ``ids`` (B x M) into H (B x M x u).

        ``mask`` marks real tokens; padded keys get zero attention weight.
        """
        cfg, p = self.config, self.params
        ids = np.asarray(ids, dtype=np.intp)
        if ids.ndim != 2:
            raise ValidationError(f"expected a (batch, length) id array, got shape {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise ValidationError(f"token id out of range for vocabulary of size {cfg.vocab_size}")
        b, m = ids.shape
        if m > cfg.max_len:
            raise ValidationError(f"sequence length {m} exceeds max_len {cfg.max_len}")
        heads, dk = cfg.heads, cfg.u // cfg.heads
        key_mask = None if mask is None else np.asarray(mask, dtype=bool)[:, None, None, :]

        x = T.gather(p["tok_emb"], ids) + T.gather(p["pos_emb"], np.arange(m))
        attention: List[np.ndarray] = []
        scale = 1.0 / math.sqrt(dk)
        for k in range(cfg.layers):
            q = self._heads(x, p[f"layer{k}.wq"])
            kk = self._heads(x, p[f"layer{k}.wk"])
            v = self._heads(x, p[f"layer{k}.wv"])
            weights = T.softmax((q @ kk.T) * scale, axis=-1, mask=key_mask)
            attention.append(weights.data)
            z = (weights @ v).transpose(0, 2, 1, 3).reshape(b, m, cfg.u)
            x = x + z @ p[f"layer{k}.wo"]
            hidden = T.relu(x @ p[f"layer{k}.w1"] + p[f"layer{k}.b1"])
            x = x + hidden @ p[f"layer{k}.w2"] + p[f"layer{k}.b2"]

        if training and cfg.dropout > 0:
            if rng is None:
                raise ValidationError("training-mode encoding needs a random generator for dropout")
            x = T.dropout(x, cfg.dropout, rng)
        if return_attention:
            return x, attention
        return x

    def _heads(self, x: Tensor, weight: Tensor) -> Tensor:
        b, m, _ = x.shape
        heads = self.config.heads
        return (x @ weight).reshape(b, m, heads, self.config.u // heads).transpose(0, 2, 1, 3)

    def encode(
        self,
        doc: TokenizedDoc,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Hidden matrix H (M x u) for a single document."""
        ids = np.asarray(doc.ids if isinstance(doc, TokenizedDoc) else doc, dtype=np.intp)[None, :]
        h = self.forward(ids, training=training, rng=rng)
        return h.reshape(h.shape[1:])


# ---------------------------------------------------------------- precomputed embeddings


def write_precomputed(path, embeddings: Mapping[str, np.ndarray]) -> None:
    """Write ``u=<int>`` then, per document, ``#<id> <M>`` and M rows of floats."""
    items = list(embeddings.items())
    if not items:
        raise ValidationError("nothing to write")
    u = int(np.asarray(items[0][1]).shape[1])
    lines = [f"u={u}"]
    for doc_id, h in items:
        h = np.asarray(h, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != u:
            raise ValidationError(f"document {doc_id!r} has shape {h.shape}, expected (M, {u})")
        lines.append(f"#{doc_id} {h.shape[0]}")
        lines += [" ".join(repr(float(v)) for v in row) for row in h]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class PrecomputedEmbeddings(dict):
    """Frozen per-document hidden matrices keyed by document id."""

    def __missing__(self, doc_id):
        raise ValidationError(f"no precomputed embedding for document {doc_id!r}")

    @property
    def u(self) -> int:
        return next(iter(self.values())).shape[1]


def load_precomputed(path, expected_u: int) -> PrecomputedEmbeddings:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("u="):
        raise ValidationError("precomputed embedding file must start with 'u=<int>'")
    u = int(lines[0][2:])
    if u != expected_u:
        raise ValidationError(f"embedding width mismatch: file has u={u}, expected u={expected_u}")
    out = PrecomputedEmbeddings()
    k = 1
    while k < len(lines):
        header = lines[k].strip()
        if not header:
            k += 1
            continue
        if not header.startswith("#"):
            raise ValidationError(f"line {k + 1}: expected '#<doc_id> <M>' header")
        doc_id, count = header[1:].rsplit(" ", 1)
        m = int(count)
        rows = lines[k + 1 : k + 1 + m]
        if len(rows) != m:
            raise ValidationError(f"document {doc_id!r} is truncated")
        data = np.array([[float(v) for v in row.split()] for row in rows]).reshape(m, -1)
        if data.shape[1] != u:
            raise ValidationError(f"document {doc_id!r} has width {data.shape[1]}, expected {u}")
        out[doc_id] = Tensor(data)
        k += 1 + m
    return out

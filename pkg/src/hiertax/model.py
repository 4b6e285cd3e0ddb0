"""The two-stage classifier bundle: vocabulary, encoders, coarse and fine heads, inference."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import Checkpoint
from .coarse import CoarseParams, coarse_forward
from .corpus import PAD, Record, TokenizedDoc, Vocab, tokenize, words
from .encoder import Encoder, EncoderConfig, PrecomputedEmbeddings
from .errors import FingerprintMismatch, ValidationError
from .fine import FineParams, coarse_guidance, fine_forward, flat_forward
from .metrics import EvalReport, count_all, evaluate_counts, macro, micro
from .taxonomy import LabelSpace, Taxonomy, TaxonomyDag
from .tensor import Tensor, dropout


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    lambda1: float = 0.01
    lambda2: float = 0.001
    blend: float = 2.0
    threshold: float = 0.5
    shared_encoder: bool = False
    patience: int = 3
    val_fraction: float = 0.1
    head_relu: bool = False
    normalize_p_for_kl: bool = False
    flat: bool = False
    fine_encoder_init: str = "coarse"
    u: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 256
    dropout: float = 0.2
    min_freq: int = 2

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ValidationError("epochs must be >= 0, batch_size and patience >= 1")
        if self.lr <= 0 or not 0.0 < self.val_fraction < 1.0:
            raise ValidationError("lr must be positive and val_fraction in (0, 1)")
        if min(self.lambda1, self.lambda2, self.blend) < 0:
            raise ValidationError("loss weights and blend must be non-negative")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError("threshold must lie in (0, 1)")
        if self.fine_encoder_init not in ("coarse", "random"):
            raise ValidationError("fine_encoder_init must be 'coarse' or 'random'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- hidden-state sources


def with_marker(doc: TokenizedDoc, vocab: Vocab) -> TokenizedDoc:
    """Prepend the document-start id when the vocabulary defines one."""
    if vocab.cls_id is None:
        return doc
    return TokenizedDoc((vocab.cls_id,) + doc.ids, doc.original_length)


class EncoderSource:
    """Tokenises records and runs a trainable encoder over padded batches."""

    def __init__(self, encoder: Encoder, vocab: Vocab):
        self.encoder = encoder
        self.vocab = vocab

    def prepare(self, records: Sequence[Record]) -> List[TokenizedDoc]:
        return [self.tokenize(r.text) for r in records]

    def tokenize(self, text: str) -> TokenizedDoc:
        return with_marker(tokenize(text, self.vocab, self.encoder.config.max_len - 1), self.vocab)

    def batch(self, docs, training: bool, rng) -> Tuple[Tensor, np.ndarray]:
        m = max(len(d.ids) for d in docs)
        ids = np.full((len(docs), m), PAD, dtype=np.intp)
        mask = np.zeros((len(docs), m), dtype=bool)
        for n, d in enumerate(docs):
            ids[n, : len(d.ids)] = d.ids
            mask[n, : len(d.ids)] = True
        return self.encoder.forward(ids, mask, training=training, rng=rng), mask

    def one(self, doc) -> Tensor:
        return self.encoder.encode(doc)


class PrecomputedSource:
    """Frozen hidden matrices looked up by record id; dropout still applies in training."""

    def __init__(self, embeddings: PrecomputedEmbeddings, rate: float = 0.0):
        self.embeddings = embeddings
        self.rate = rate

    def prepare(self, records: Sequence[Record]) -> List[str]:
        for r in records:
            self.embeddings[r.id]
        return [r.id for r in records]

    def batch(self, docs, training: bool, rng) -> Tuple[Tensor, np.ndarray]:
        hs = [self.embeddings[d].data for d in docs]
        m, u = max(h.shape[0] for h in hs), hs[0].shape[1]
        data = np.zeros((len(hs), m, u))
        mask = np.zeros((len(hs), m), dtype=bool)
        for n, h in enumerate(hs):
            data[n, : len(h)] = h
            mask[n, : len(h)] = True
        H = Tensor(data)
        if training and self.rate > 0:
            H = dropout(H, self.rate, rng)
        return H, mask

    def one(self, doc) -> Tensor:
        return self.embeddings[doc]


# ---------------------------------------------------------------- bundle


@dataclass
class HierarchicalClassifier:
    taxonomy: Taxonomy
    config: TrainConfig
    coarse: CoarseParams
    vocab: Optional[Vocab] = None
    coarse_encoder: Optional[Encoder] = None
    fine: Optional[FineParams] = None
    fine_encoder: Optional[Encoder] = None
    connections: Optional[np.ndarray] = None
    coarse_frequencies: Optional[np.ndarray] = None
    fine_frequencies: Optional[np.ndarray] = None
    embeddings: Optional[PrecomputedEmbeddings] = None

    @property
    def space(self) -> LabelSpace:
        return self.taxonomy.space

    @property
    def stage(self) -> str:
        return "coarse" if self.fine is None else "fine"

    def coarse_source(self):
        if self.coarse_encoder is None:
            return PrecomputedSource(self._need_embeddings(), self.config.dropout)
        return EncoderSource(self.coarse_encoder, self.vocab)

    def fine_source(self):
        if self.coarse_encoder is None:
            return PrecomputedSource(self._need_embeddings(), self.config.dropout)
        if self.config.shared_encoder or self.fine_encoder is None:
            return EncoderSource(self.coarse_encoder, self.vocab)
        return EncoderSource(self.fine_encoder, self.vocab)

    def _need_embeddings(self) -> PrecomputedEmbeddings:
        if self.embeddings is None:
            raise ValidationError("this model reads precomputed embeddings; attach them with .embeddings")
        return self.embeddings

    def check_taxonomy(self, taxonomy: Taxonomy) -> None:
        if taxonomy.fingerprint != self.taxonomy.fingerprint:
            raise FingerprintMismatch(
                f"taxonomy fingerprint {taxonomy.fingerprint[:12]} does not match "
                f"checkpoint {self.taxonomy.fingerprint[:12]}"
            )

    # -------------------------------------------------------- inference

    def coarse_probs(self, doc) -> np.ndarray:
        H = self.coarse_source().one(doc)
        return coarse_forward(H, self.coarse)[0].data

    def fine_probs(self, doc, P_y: Optional[np.ndarray] = None) -> np.ndarray:
        if self.fine is None:
            raise ValidationError("model has no fine stage; run train-fine first")
        H = self.fine_source().one(doc)
        if self.config.flat:
            return flat_forward(H, self.fine, head_relu=self.config.head_relu)[0].data
        if P_y is None:
            P_y = self.coarse_probs(doc)
        W_l1 = coarse_guidance(H, Tensor(self.coarse.V.data), P_y)
        return fine_forward(H, self.fine, W_l1, self.config.blend, head_relu=self.config.head_relu)[0].data

    def _doc(self, record_or_text):
        if isinstance(record_or_text, Record):
            if self.coarse_encoder is None:
                return record_or_text.id
            record_or_text = record_or_text.text
        if self.coarse_encoder is None:
            raise ValidationError("a model on precomputed embeddings can only score records by id")
        return EncoderSource(self.coarse_encoder, self.vocab).tokenize(record_or_text)

    def predict_proba(self, record_or_text) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        doc = self._doc(record_or_text)
        P_y = self.coarse_probs(doc)
        P_l2 = self.fine_probs(doc, P_y) if self.fine is not None else None
        return P_y, P_l2

    def predict(self, record_or_text, threshold: Optional[float] = None):
        """Return ({coarse id: prob}, {fine id: prob}) for labels at or above threshold."""
        t = self.config.threshold if threshold is None else threshold
        if not 0.0 < t <= 1.0:
            raise ValidationError(f"threshold must lie in (0, 1], got {t}")
        P_y, P_l2 = self.predict_proba(record_or_text)
        coarse = {lab: float(p) for lab, p in zip(self.space.coarse_ids, P_y) if p >= t}
        fine = {}
        if P_l2 is not None:
            fine = {lab: float(p) for lab, p in zip(self.space.fine_ids, P_l2) if p >= t}
        return coarse, fine

    def evaluate(self, records: Sequence[Record], threshold: Optional[float] = None) -> EvalReport:
        t = self.config.threshold if threshold is None else threshold
        coarse_pred, fine_pred = [], []
        for rec in records:
            c, f = self.predict(rec, t)
            coarse_pred.append(set(c))
            fine_pred.append(set(f))
        c_counts = count_all(self.space.coarse_ids, [r.coarse for r in records], coarse_pred)
        extra = {
            "coarse": {
                "micro": dict(zip(("precision", "recall", "f1"), micro(c_counts))),
                "macro": dict(zip(("precision", "recall", "f1"), macro(c_counts))),
            },
            "instances": len(records),
            "threshold": t,
        }
        if self.fine is None:
            freqs = self.coarse_frequencies if self.coarse_frequencies is not None else np.zeros(self.space.n_coarse)
            report = evaluate_counts(c_counts, freqs.astype(int))
        else:
            f_counts = count_all(self.space.fine_ids, [r.fine for r in records], fine_pred)
            freqs = self.fine_frequencies if self.fine_frequencies is not None else np.zeros(self.space.n_fine)
            report = evaluate_counts(f_counts, freqs.astype(int))
        report.extra.update(extra)
        report.extra["level"] = self.stage
        return report

    # -------------------------------------------------------- persistence

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        if self.coarse_encoder is not None:
            out.update({f"coarse_encoder.{k}": t.data for k, t in self.coarse_encoder.params.items()})
        out.update({f"coarse.{k}": t.data for k, t in self.coarse.named().items()})
        if self.coarse_frequencies is not None:
            out["freq.coarse"] = self.coarse_frequencies
        if self.fine is not None:
            if self.fine_encoder is not None:
                out.update({f"fine_encoder.{k}": t.data for k, t in self.fine_encoder.params.items()})
            out.update({f"fine.{k}": t.data for k, t in self.fine.named().items()})
            out["connections.w"] = self.connections
            out["freq.fine"] = self.fine_frequencies
        return {k: np.array(v, dtype=np.float64) for k, v in out.items()}

    def meta(self) -> dict:
        space = self.space
        return {
            "stage": self.stage,
            "train_config": self.config.to_dict(),
            "encoder": None if self.coarse_encoder is None else self.coarse_encoder.config.to_dict(),
            "vocab": None if self.vocab is None else self.vocab.tokens,
            "taxonomy": {
                "fingerprint": self.taxonomy.fingerprint,
                "coarse": [list(x) for x in space.coarse],
                "fine": [list(x) for x in space.fine],
                "edges": [list(e) for e in self.taxonomy.dag.edges],
            },
        }

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint({"model": self.meta()}, self.arrays())

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, taxonomy: Optional[Taxonomy] = None) -> "HierarchicalClassifier":
        meta = ckpt.config["model"]
        tax = meta["taxonomy"]
        space = LabelSpace(tuple(map(tuple, tax["coarse"])), tuple(map(tuple, tax["fine"])))
        restored = Taxonomy(space, TaxonomyDag(space.n_coarse, space.n_fine, [tuple(e) for e in tax["edges"]]), tax["fingerprint"])
        a = ckpt.arrays

        def group(prefix):
            return {k[len(prefix) :]: a[k] for k in a if k.startswith(prefix)}

        vocab = Vocab(meta["vocab"], reserved=()) if meta["vocab"] is not None else None
        coarse_encoder = fine_encoder = None
        if meta["encoder"] is not None:
            enc_cfg = EncoderConfig(**meta["encoder"])
            coarse_encoder = Encoder(enc_cfg, {k: Tensor(v, requires_grad=True) for k, v in group("coarse_encoder.").items()})
            fe = group("fine_encoder.")
            if fe:
                fine_encoder = Encoder(enc_cfg, {k: Tensor(v, requires_grad=True) for k, v in fe.items()})
        fine_arrays = group("fine.")
        model = cls(
            taxonomy=restored,
            config=TrainConfig.from_dict(meta["train_config"]),
            coarse=CoarseParams.from_named(group("coarse.")),
            vocab=vocab,
            coarse_encoder=coarse_encoder,
            fine=FineParams.from_named(fine_arrays) if fine_arrays else None,
            fine_encoder=fine_encoder,
            connections=a.get("connections.w"),
            coarse_frequencies=a.get("freq.coarse"),
            fine_frequencies=a.get("freq.fine"),
        )
        if taxonomy is not None:
            model.check_taxonomy(taxonomy)
        return model


def predict_one(
    text: str,
    model: HierarchicalClassifier,
    threshold: Optional[float] = None,
    coarse_model: Optional[HierarchicalClassifier] = None,
):
    """Full pipeline for one free-text report.

    When ``coarse_model`` is given its coarse stage replaces the one bundled
    in ``model``; both must share a taxonomy.
    """
    if not words(text):
        raise ValidationError("cannot classify empty text")
    if coarse_model is not None:
        model.check_taxonomy(coarse_model.taxonomy)
        model = HierarchicalClassifier(**{**model.__dict__, "coarse": coarse_model.coarse,
                                          "coarse_encoder": coarse_model.coarse_encoder,
                                          "vocab": coarse_model.vocab})
    return model.predict(text, threshold)

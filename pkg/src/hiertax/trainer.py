"""Two-stage training: coarse classifier first, then the fine classifier against the frozen coarse one."""

from __future__ import annotations

import json
import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .coarse import CoarseParams, coarse_forward, coarse_loss
from .corpus import Record, Vocab, label_matrix
from .encoder import Encoder, EncoderConfig, PrecomputedEmbeddings, init_encoder_params
from .errors import TrainingDiverged, ValidationError
from .fine import FineParams, coarse_guidance, fine_forward, fine_loss, flat_forward
from .metrics import count_all, micro
from .model import HierarchicalClassifier, TrainConfig
from .optim import Adam
from .regularizers import (
    LossWeights,
    derive_fine_distribution_batch,
    distribution_loss,
    similarity_loss,
    total_loss,
)
from .taxonomy import Taxonomy, build_connection_matrix
from .tensor import Tensor

logger = logging.getLogger(__name__)

_STAGE_CODE = {"coarse": 1, "fine": 2}


def carve_validation(records: Sequence[Record], fraction: float, seed: int):
    """Seeded (fit, validation) split of the training records."""
    order = np.random.default_rng([seed, 0]).permutation(len(records))
    n_val = max(1, int(round(fraction * len(records)))) if len(records) > 1 else 0
    val = sorted(order[:n_val].tolist())
    fit = sorted(order[n_val:].tolist())
    return [records[k] for k in fit], [records[k] for k in val]


def label_frequencies(records: Sequence[Record], ids: Sequence[str], level: str) -> np.ndarray:
    return label_matrix(records, ids, level).sum(axis=0)


class StageTrainer:
    """Mini-batch Adam over one stage with per-epoch validation and early stopping.

    All randomness is derived from (seed, stage, epoch, step), so a trainer
    rebuilt from ``checkpoint()`` continues exactly where it stopped.
    """

    def __init__(
        self,
        model: HierarchicalClassifier,
        stage: str,
        records: Sequence[Record],
        log: Optional[Callable[[str], None]] = None,
    ):
        if stage not in _STAGE_CODE:
            raise ValidationError(f"unknown stage {stage!r}")
        if not records:
            raise ValidationError("training split is empty")
        self.model = model
        self.stage = stage
        self.config = model.config
        self.log = log
        self.fit_records, self.val_records = carve_validation(records, self.config.val_fraction, self.config.seed)
        if not self.fit_records:
            self.fit_records = list(self.val_records)

        level = "coarse" if stage == "coarse" else "fine"
        self.label_ids = model.space.coarse_ids if level == "coarse" else model.space.fine_ids
        self.targets = label_matrix(self.fit_records, self.label_ids, level)
        self.source = model.coarse_source() if stage == "coarse" else model.fine_source()
        self.fit_docs = self.source.prepare(self.fit_records)
        self.val_docs = [model._doc(r) for r in self.val_records]

        self.params: Dict[str, Tensor] = self._trainable()
        self.optimizer = Adam(self.params, lr=self.config.lr)
        self.edges = model.taxonomy.dag.known_edges()
        self.weights = LossWeights(self.config.lambda1, self.config.lambda2)
        self.coarse_cache = self._coarse_cache() if stage == "fine" and not self.config.flat else None

        self.epoch = 0
        self.step_in_epoch = 0
        self.global_step = 0
        self.epoch_loss_sum = 0.0
        self.best_score = -1.0
        self.best_epoch = -1
        self.best_arrays: Optional[Dict[str, np.ndarray]] = None
        self.bad_epochs = 0
        self.finished = self.config.epochs == 0
        self.history: List[dict] = []
        self.trace: List[float] = []

    # -------------------------------------------------------- setup

    def _trainable(self) -> Dict[str, Tensor]:
        m = self.model
        params: Dict[str, Tensor] = {}
        if self.stage == "coarse":
            if m.coarse_encoder is not None:
                params.update({f"coarse_encoder.{k}": t for k, t in m.coarse_encoder.params.items()})
            params.update({f"coarse.{k}": t for k, t in m.coarse.named().items()})
        else:
            for t in m.coarse.named().values():
                t.requires_grad = False
            if m.coarse_encoder is not None:
                for t in m.coarse_encoder.params.values():
                    t.requires_grad = False
            if m.fine_encoder is not None and not self.config.shared_encoder:
                params.update({f"fine_encoder.{k}": t for k, t in m.fine_encoder.params.items()})
            params.update({f"fine.{k}": t for k, t in m.fine.named().items()})
        for name, t in params.items():
            t.requires_grad = True
            t.name = name
        return params

    def _coarse_cache(self) -> np.ndarray:
        """Frozen coarse probabilities for every fit document, computed one document at a time."""
        src = self.model.coarse_source()
        docs = src.prepare(self.fit_records)
        return np.stack([coarse_forward(src.one(d), self.model.coarse)[0].data for d in docs])

    @property
    def batches_per_epoch(self) -> int:
        return -(-len(self.fit_docs) // self.config.batch_size)

    def _order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.config.seed, _STAGE_CODE[self.stage], epoch]).permutation(len(self.fit_docs))

    # -------------------------------------------------------- loss

    def batch_loss(self, idx: np.ndarray, rng: np.random.Generator) -> Tensor:
        docs = [self.fit_docs[k] for k in idx]
        H, mask = self.source.batch(docs, training=True, rng=rng)
        y = self.targets[idx]
        if self.stage == "coarse":
            probs, _ = coarse_forward(H, self.model.coarse, mask)
            return coarse_loss(probs, y)

        cfg, fine = self.config, self.model.fine
        if cfg.flat:
            probs, _ = flat_forward(H, fine, mask, head_relu=cfg.head_relu)
            return fine_loss(probs, y)
        P_y = self.coarse_cache[idx]
        W_l1 = coarse_guidance(H, self.model.coarse.V, P_y, mask)
        probs, _ = fine_forward(H, fine, W_l1, cfg.blend, mask, head_relu=cfg.head_relu)
        bce = fine_loss(probs, y)
        sim = similarity_loss(self.model.coarse.V, fine.V, self.edges)
        d, valid = derive_fine_distribution_batch(P_y, self.model.connections)
        rows = np.flatnonzero(valid)
        if rows.size:
            dist = distribution_loss(d[rows], probs[rows], normalize=cfg.normalize_p_for_kl)
        else:
            dist = Tensor(0.0)
        return total_loss(bce, sim, dist, self.weights)

    # -------------------------------------------------------- loop

    def step(self) -> float:
        if self.finished:
            raise ValidationError("training has already finished")
        bs = self.config.batch_size
        idx = self._order(self.epoch)[self.step_in_epoch * bs : (self.step_in_epoch + 1) * bs]
        rng = np.random.default_rng([self.config.seed, _STAGE_CODE[self.stage], self.epoch, self.step_in_epoch])
        self.optimizer.zero_grad()
        try:
            loss = self.batch_loss(idx, rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError
            loss.backward()
        except FloatingPointError:
            raise TrainingDiverged(self.global_step) from None
        self.optimizer.step()
        self.trace.append(value)
        self.epoch_loss_sum += value
        self.step_in_epoch += 1
        self.global_step += 1
        if self.step_in_epoch == self.batches_per_epoch:
            self._end_epoch()
        return value

    def validation_f1(self) -> float:
        t = self.config.threshold
        preds = []
        for doc in self.val_docs:
            if self.stage == "coarse":
                p = self.model.coarse_probs(doc)
            else:
                p = self.model.fine_probs(doc)
            preds.append({lab for lab, v in zip(self.label_ids, p) if v >= t})
        level = "coarse" if self.stage == "coarse" else "fine"
        gold = [getattr(r, level) for r in self.val_records]
        return micro(count_all(self.label_ids, gold, preds))[2]

    def _end_epoch(self) -> None:
        score = self.validation_f1()
        entry = {
            "epoch": self.epoch,
            "stage": self.stage,
            "train_loss": self.epoch_loss_sum / self.batches_per_epoch,
            "val_micro_f1": score,
        }
        self.history.append(entry)
        if self.log is not None:
            self.log(json.dumps(entry))
        logger.debug("epoch %d %s loss %.6f val %.4f", self.epoch, self.stage, entry["train_loss"], score)
        if score >= self.best_score:
            self.best_score, self.best_epoch, self.bad_epochs = score, self.epoch, 0
            self.best_arrays = {k: t.data.copy() for k, t in self.params.items()}
        else:
            self.bad_epochs += 1
        self.epoch += 1
        self.step_in_epoch = 0
        self.epoch_loss_sum = 0.0
        if self.epoch >= self.config.epochs or self.bad_epochs >= self.config.patience:
            self.finished = True

    def run(self, max_steps: Optional[int] = None) -> "StageTrainer":
        taken = 0
        while not self.finished and (max_steps is None or taken < max_steps):
            self.step()
            taken += 1
        return self

    # -------------------------------------------------------- results and state

    def result(self) -> HierarchicalClassifier:
        """The model with the best-validation parameters restored."""
        if self.best_arrays is not None:
            for k, arr in self.best_arrays.items():
                self.params[k].data = arr.copy()
        return self.model

    def _state_meta(self) -> dict:
        return {
            "stage": self.stage,
            "epoch": self.epoch,
            "step_in_epoch": self.step_in_epoch,
            "global_step": self.global_step,
            "epoch_loss_sum": self.epoch_loss_sum,
            "best_score": self.best_score,
            "best_epoch": self.best_epoch,
            "bad_epochs": self.bad_epochs,
            "finished": self.finished,
            "history": self.history,
            "trace": self.trace,
            "optimizer_steps": self.optimizer.steps(),
        }

    def checkpoint(self) -> Checkpoint:
        """Full resumable snapshot: current parameters, optimizer moments and counters."""
        ckpt = self.model.to_checkpoint()
        ckpt.config["trainer"] = self._state_meta()
        ckpt.config["rng"] = {"seed": self.config.seed, "epoch": self.epoch, "step": self.step_in_epoch}
        ckpt.arrays.update(self.optimizer.state_arrays())
        if self.best_arrays is not None:
            ckpt.arrays.update({f"best.{k}": v for k, v in self.best_arrays.items()})
        return ckpt

    def final_checkpoint(self) -> Checkpoint:
        model = self.result()
        ckpt = model.to_checkpoint()
        meta = self._state_meta()
        meta["finished"] = True
        ckpt.config["trainer"] = meta
        ckpt.config["rng"] = {"seed": self.config.seed, "epoch": self.epoch, "step": self.step_in_epoch}
        ckpt.arrays.update(self.optimizer.state_arrays())
        return ckpt

    @classmethod
    def resume(
        cls,
        ckpt: Checkpoint,
        records: Sequence[Record],
        embeddings: Optional[PrecomputedEmbeddings] = None,
        log: Optional[Callable[[str], None]] = None,
    ) -> "StageTrainer":
        state = ckpt.config.get("trainer")
        if state is None:
            raise ValidationError("checkpoint carries no trainer state")
        model = HierarchicalClassifier.from_checkpoint(ckpt)
        model.embeddings = embeddings
        trainer = cls(model, state["stage"], records, log=log)
        trainer.optimizer.load_state(ckpt.arrays, state["optimizer_steps"])
        for key in ("epoch", "step_in_epoch", "global_step", "epoch_loss_sum", "best_score",
                    "best_epoch", "bad_epochs", "finished", "history", "trace"):
            setattr(trainer, key, state[key])
        best = {k[5:]: v.copy() for k, v in ckpt.arrays.items() if k.startswith("best.")}
        trainer.best_arrays = best or None
        return trainer


# ---------------------------------------------------------------- entry points


def init_model(
    records: Sequence[Record],
    taxonomy: Taxonomy,
    config: TrainConfig,
    embeddings: Optional[PrecomputedEmbeddings] = None,
) -> HierarchicalClassifier:
    """Fresh coarse-stage model with a vocabulary built from ``records``."""
    rng_coarse = np.random.default_rng([config.seed, 2])
    if embeddings is not None:
        if embeddings and embeddings.u != config.u:
            raise ValidationError(f"embedding width {embeddings.u} does not match configured u={config.u}")
        vocab, encoder = None, None
    else:
        vocab = Vocab.build((r.text for r in records), min_freq=config.min_freq)
        enc_cfg = EncoderConfig(len(vocab), config.u, config.layers, config.heads, config.max_len, config.dropout)
        encoder = Encoder(enc_cfg, init_encoder_params(enc_cfg, np.random.default_rng([config.seed, 1])))
    model = HierarchicalClassifier(
        taxonomy=taxonomy,
        config=config,
        coarse=CoarseParams.init(taxonomy.space.n_coarse, config.u, rng_coarse),
        vocab=vocab,
        coarse_encoder=encoder,
        coarse_frequencies=label_frequencies(records, taxonomy.space.coarse_ids, "coarse"),
        embeddings=embeddings,
    )
    return model


def train_coarse(
    records: Sequence[Record],
    taxonomy: Taxonomy,
    config: TrainConfig,
    embeddings: Optional[PrecomputedEmbeddings] = None,
    log: Optional[Callable[[str], None]] = None,
) -> Checkpoint:
    """Train stage one on ``records`` and return the best-validation checkpoint."""
    model = init_model(records, taxonomy, config, embeddings)
    trainer = StageTrainer(model, "coarse", records, log=log)
    return trainer.run().final_checkpoint()


def prepare_fine(
    records: Sequence[Record],
    taxonomy: Taxonomy,
    coarse_ckpt: Checkpoint,
    config: Optional[TrainConfig] = None,
    embeddings: Optional[PrecomputedEmbeddings] = None,
) -> HierarchicalClassifier:
    """Attach freshly initialised fine parameters to a trained coarse model."""
    model = HierarchicalClassifier.from_checkpoint(coarse_ckpt)
    model.check_taxonomy(taxonomy)
    model.embeddings = embeddings
    if config is not None:
        model.config = _merge_stage_config(model.config, config)
    cfg = model.config
    model.coarse_frequencies = label_frequencies(records, taxonomy.space.coarse_ids, "coarse")
    model.fine_frequencies = label_frequencies(records, taxonomy.space.fine_ids, "fine")
    model.connections = build_connection_matrix(records, taxonomy.space)
    model.fine = FineParams.init(taxonomy.space.n_fine, cfg.u, np.random.default_rng([cfg.seed, 3]))
    if model.coarse_encoder is not None and not cfg.shared_encoder:
        enc_cfg = model.coarse_encoder.config
        if cfg.fine_encoder_init == "coarse":
            params = {k: Tensor(t.data.copy(), requires_grad=True) for k, t in model.coarse_encoder.params.items()}
        else:
            params = init_encoder_params(enc_cfg, np.random.default_rng([cfg.seed, 4]))
        model.fine_encoder = Encoder(enc_cfg, params)
    return model


def _merge_stage_config(coarse_cfg: TrainConfig, fine_cfg: TrainConfig) -> TrainConfig:
    """Fine-stage settings win, but encoder geometry must match the coarse checkpoint."""
    merged = fine_cfg.to_dict()
    for key in ("u", "layers", "heads", "max_len", "min_freq"):
        merged[key] = getattr(coarse_cfg, key)
    return TrainConfig.from_dict(merged)


def train_fine(
    records: Sequence[Record],
    taxonomy: Taxonomy,
    coarse_ckpt: Checkpoint,
    config: Optional[TrainConfig] = None,
    embeddings: Optional[PrecomputedEmbeddings] = None,
    log: Optional[Callable[[str], None]] = None,
) -> Checkpoint:
    """Train stage two against the frozen coarse model in ``coarse_ckpt``."""
    model = prepare_fine(records, taxonomy, coarse_ckpt, config, embeddings)
    trainer = StageTrainer(model, "fine", records, log=log)
    return trainer.run().final_checkpoint()


def mean_edge_distance(model: HierarchicalClassifier) -> float:
    """Mean Euclidean distance between linked coarse and fine label embeddings."""
    edges = model.taxonomy.dag.known_edges()
    V1, V2 = model.coarse.V.data, model.fine.V.data
    return float(np.mean([np.linalg.norm(V1[i] - V2[j]) for i, j in edges]))

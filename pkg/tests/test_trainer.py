import json

import numpy as np
import pytest

from hiertax import tensor as T
from hiertax.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from hiertax.encoder import PrecomputedEmbeddings
from hiertax.errors import FingerprintMismatch, TrainingDiverged, ValidationError
from hiertax.model import HierarchicalClassifier, TrainConfig, predict_one
from hiertax.taxonomy import Taxonomy, TaxonomyDag
from hiertax.tensor import Tensor
from hiertax.trainer import (
    StageTrainer,
    carve_validation,
    init_model,
    prepare_fine,
    train_coarse,
    train_fine,
)

from conftest import tiny_config


@pytest.fixture(scope="module")
def coarse_ckpt(separable):
    sc, train, _ = separable
    return train_coarse(train, sc.taxonomy, tiny_config())


def test_config_roundtrip_and_validation():
    cfg = TrainConfig(lr=0.01, flat=True)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ValidationError):
        TrainConfig(threshold=1.0)


def test_validation_carved_from_training_only(separable):
    _, train, test = separable
    fit, val = carve_validation(train, 0.1, seed=0)
    ids = {r.id for r in fit} | {r.id for r in val}
    assert ids == {r.id for r in train}
    assert not ids & {r.id for r in test}
    assert not {r.id for r in fit} & {r.id for r in val}


def test_epoch_log_lines(separable):
    sc, train, _ = separable
    lines = []
    train_coarse(train, sc.taxonomy, tiny_config(), log=lines.append)
    entries = [json.loads(x) for x in lines]
    assert [e["epoch"] for e in entries] == [0, 1]
    assert set(entries[0]) == {"epoch", "stage", "train_loss", "val_micro_f1"}


def test_epoch_loss_decreases_on_separable(separable):
    sc, train, _ = separable
    model = init_model(train, sc.taxonomy, tiny_config(epochs=3, patience=3))
    trainer = StageTrainer(model, "coarse", train).run()
    losses = [h["train_loss"] for h in trainer.history]
    assert losses[0] > losses[1] > losses[2]


def test_fine_stage_keeps_coarse_frozen(separable, coarse_ckpt):
    sc, train, _ = separable
    fine = train_fine(train, sc.taxonomy, coarse_ckpt, tiny_config(epochs=1))
    for k, v in coarse_ckpt.arrays.items():
        if k.startswith(("coarse.", "coarse_encoder.")):
            assert np.array_equal(fine.arrays[k], v), k


def test_fine_encoder_starts_from_coarse_copy(separable, coarse_ckpt):
    sc, train, _ = separable
    model = prepare_fine(train, sc.taxonomy, coarse_ckpt, tiny_config())
    for k, t in model.fine_encoder.params.items():
        assert np.array_equal(t.data, model.coarse_encoder.params[k].data)
        assert t is not model.coarse_encoder.params[k]


def test_training_is_deterministic(separable, coarse_ckpt):
    sc, train, _ = separable
    again = train_coarse(train, sc.taxonomy, tiny_config())
    assert again.to_bytes() == coarse_ckpt.to_bytes()


@pytest.mark.parametrize("stage", ["coarse", "fine"])
def test_resume_equals_uninterrupted(tmp_path, separable, coarse_ckpt, stage):
    sc, train, _ = separable
    cfg = tiny_config(epochs=2)

    def fresh():
        if stage == "coarse":
            return StageTrainer(init_model(train, sc.taxonomy, cfg), "coarse", train)
        return StageTrainer(prepare_fine(train, sc.taxonomy, coarse_ckpt, cfg), "fine", train)

    whole = fresh().run()
    part = fresh()
    part.run(max_steps=part.batches_per_epoch + 3)
    save_checkpoint(part.checkpoint(), tmp_path / "mid.htax")
    resumed = StageTrainer.resume(load_checkpoint(tmp_path / "mid.htax"), train).run()
    assert resumed.trace == whole.trace
    assert resumed.final_checkpoint().to_bytes() == whole.final_checkpoint().to_bytes()


def test_single_step_after_reload_matches(separable):
    sc, train, _ = separable
    cfg = tiny_config()
    a = StageTrainer(init_model(train, sc.taxonomy, cfg), "coarse", train)
    a.run(max_steps=2)
    b = StageTrainer.resume(Checkpoint.from_bytes(a.checkpoint().to_bytes()), train)
    assert a.step() == b.step()
    assert a.checkpoint().to_bytes() == b.checkpoint().to_bytes()


def test_divergence_reports_step(separable, monkeypatch):
    sc, train, _ = separable
    trainer = StageTrainer(init_model(train, sc.taxonomy, tiny_config()), "coarse", train)
    trainer.run(max_steps=2)
    monkeypatch.setattr(trainer, "batch_loss", lambda idx, rng: T.log(Tensor(-1.0)))
    with np.errstate(invalid="ignore"), pytest.raises(TrainingDiverged) as info:
        trainer.step()
    assert info.value.step == 2


def test_checkpoint_restores_model(separable, coarse_ckpt):
    sc, _, test = separable
    model = HierarchicalClassifier.from_checkpoint(coarse_ckpt, sc.taxonomy)
    again = HierarchicalClassifier.from_checkpoint(Checkpoint.from_bytes(coarse_ckpt.to_bytes()))
    for rec in test[:5]:
        assert np.array_equal(model.predict_proba(rec)[0], again.predict_proba(rec)[0])


def test_fingerprint_mismatch(separable, coarse_ckpt):
    sc, train, _ = separable
    space = sc.taxonomy.space
    other = Taxonomy(space, TaxonomyDag(space.n_coarse, space.n_fine, [(0, j) for j in range(space.n_fine)]))
    with pytest.raises(FingerprintMismatch):
        HierarchicalClassifier.from_checkpoint(coarse_ckpt, other)
    with pytest.raises(FingerprintMismatch):
        train_fine(train, other, coarse_ckpt, tiny_config())


def test_predict_one_rules(separable, coarse_ckpt):
    sc, train, _ = separable
    fine = HierarchicalClassifier.from_checkpoint(train_fine(train, sc.taxonomy, coarse_ckpt, tiny_config(epochs=1)))
    with pytest.raises(ValidationError):
        predict_one("  ", fine)
    coarse, fine_labels = predict_one(train[0].text, fine, threshold=1.0 - 1e-12)
    assert not coarse and not fine_labels
    low = predict_one(train[0].text, fine, threshold=1e-9)
    assert len(low[0]) == sc.taxonomy.space.n_coarse


def test_precomputed_embeddings_path(separable):
    sc, train, test = separable
    rng = np.random.default_rng(0)
    emb = PrecomputedEmbeddings({r.id: Tensor(rng.normal(size=(3, 8))) for r in train + test})
    cfg = tiny_config(u=8, epochs=1)
    ckpt = train_coarse(train, sc.taxonomy, cfg, embeddings=emb)
    fine = train_fine(train, sc.taxonomy, ckpt, cfg, embeddings=emb)
    model = HierarchicalClassifier.from_checkpoint(fine)
    model.embeddings = emb
    report = model.evaluate(test)
    assert report.extra["instances"] == len(test)
    with pytest.raises(ValidationError):
        model.predict("free text")

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiertax.corpus import (
    UNK,
    Record,
    SyntheticSpec,
    Vocab,
    generate_synthetic,
    label_matrix,
    read_corpus,
    split,
    tokenize,
    words,
    write_corpus,
)
from hiertax.errors import IngestionError, ValidationError


def test_tokenize_fixture():
    assert tokenize("Engine failed.", {"engine": 2, "failed": 3}).ids == (2, 3)


def test_tokenize_unknown_and_empty():
    assert tokenize("engine smoke", {"engine": 2}).ids == (2, UNK)
    doc = tokenize(" ... ", {"engine": 2})
    assert doc.ids == (UNK,) and doc.original_length == 0


def test_tokenize_truncates():
    vocab = Vocab.build(["w"] * 2)
    doc = tokenize(" ".join(["w"] * 600), vocab, max_len=256)
    assert len(doc.ids) == 256 and doc.original_length == 600


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="abcXYZ019 .,-\n", max_size=60))
def test_tokenize_idempotent_on_rendering(text):
    vocab = Vocab.build([text, text], min_freq=1)
    doc = tokenize(text, vocab)
    rendered = " ".join(vocab.tokens[k] for k in doc.ids) if doc.original_length else ""
    assert tokenize(rendered, vocab).ids == doc.ids


def test_vocab_min_frequency_and_order():
    vocab = Vocab.build(["b a a", "c a b"], min_freq=2)
    assert vocab.tokens[:3] == ["<pad>", "<unk>", "<cls>"]
    assert vocab.tokens[3:] == ["a", "b"]
    assert vocab["c"] == UNK


def test_split_ninety_ten_and_deterministic():
    recs = list(range(10))
    train, test = split(recs, 0.9, seed=3)
    assert (len(train), len(test)) == (9, 1)
    assert split(recs, 0.9, seed=3) == (train, test)
    assert sorted(train + test) == recs


def test_split_errors():
    with pytest.raises(ValidationError):
        split([1], 0.9)
    with pytest.raises(ValidationError):
        split([1, 2], 1.0)


def test_corpus_roundtrip_and_unknown_label(tmp_path):
    sc = generate_synthetic(SyntheticSpec(docs=50, seed=1))
    path = tmp_path / "c.jsonl"
    write_corpus(path, sc.records)
    assert read_corpus(path, sc.taxonomy.space) == sc.records
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"id": "r9", "text": "t", "coarse": ["occ00"], "fine": ["nope"]}) + "\n")
    with pytest.raises(IngestionError, match="r9"):
        read_corpus(bad, sc.taxonomy.space)


def test_records_with_missing_parent_are_kept(tmp_path):
    sc = generate_synthetic(SyntheticSpec(docs=5, seed=0))
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps({"id": "r", "text": "t", "coarse": [], "fine": ["sub0000"]}) + "\n")
    assert read_corpus(path, sc.taxonomy.space)[0].fine == frozenset({"sub0000"})


def test_synthetic_rarest_label_bounds():
    for seed in range(5):
        sc = generate_synthetic(SyntheticSpec(n_coarse=3, fine_per_coarse=4, zipf=1.2, docs=2000, seed=seed))
        freq = label_matrix(sc.records, sc.taxonomy.space.fine_ids, "fine").sum(axis=0)
        assert 5 <= freq.min() <= 200, (seed, freq)


def test_synthetic_separable_docs_contain_keywords():
    sc = generate_synthetic(SyntheticSpec(docs=300, leak=1.0, noise=0.0, seed=2))
    for rec in sc.records:
        present = set(words(rec.text))
        for lab in rec.coarse | rec.fine:
            assert set(sc.keywords[lab]) <= present


def test_synthetic_parents_present_and_deterministic():
    spec = SyntheticSpec(docs=300, leak=0.6, noise=3.0, seed=4)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert [r.to_json() for r in a.records] == [r.to_json() for r in b.records]
    space, dag = a.taxonomy.space, a.taxonomy.dag
    for rec in a.records:
        for f in rec.fine:
            parents = {space.coarse_ids[i] for i in dag.parents(space.fine_index[f])}
            assert parents <= rec.coarse


def test_synthetic_keywords_disjoint():
    sc = generate_synthetic(SyntheticSpec(n_coarse=5, fine_per_coarse=8, seed=0))
    all_words = [w for kws in sc.keywords.values() for w in kws]
    assert len(all_words) == len(set(all_words))


def test_synthetic_spec_validation():
    with pytest.raises(ValidationError):
        generate_synthetic(SyntheticSpec(zipf=0.0))
    with pytest.raises(ValidationError):
        generate_synthetic(SyntheticSpec(n_coarse=2, fine_per_coarse=(3,)))


def test_label_matrix():
    recs = [Record("a", "", frozenset(), frozenset({"x"})), Record("b", "", frozenset(), frozenset({"x", "y"}))]
    assert np.array_equal(label_matrix(recs, ["x", "y"], "fine"), [[1, 0], [1, 1]])

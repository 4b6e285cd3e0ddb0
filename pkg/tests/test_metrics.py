import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiertax.errors import ValidationError
from hiertax.metrics import (
    DEFAULT_BUCKETS,
    LabelCounts,
    accumulate,
    bucket_of,
    bucketed_macro,
    count_all,
    evaluate_counts,
    macro,
    micro,
)

LABELS = list("abcdef")


def brute(labels, gold, pred):
    """Per-label tp/fp/fn by membership, then both averages from scratch."""
    rows = []
    for lab in labels:
        tp = sum(1 for g, p in zip(gold, pred) if lab in g and lab in p)
        fp = sum(1 for g, p in zip(gold, pred) if lab not in g and lab in p)
        fn = sum(1 for g, p in zip(gold, pred) if lab in g and lab not in p)
        rows.append((tp, fp, fn))

    def div(a, b):
        return a / b if b else 0.0

    TP, FP, FN = (sum(r[k] for r in rows) for k in range(3))
    mic = (div(TP, TP + FP), div(TP, TP + FN), div(2 * TP, 2 * TP + FP + FN))
    per = [(div(tp, tp + fp), div(tp, tp + fn), div(2 * tp, 2 * tp + fp + fn)) for tp, fp, fn in rows]
    return rows, mic, per


def random_sets(rng, n):
    gold = [set(rng.choice(LABELS, size=rng.integers(0, 4), replace=False)) for _ in range(n)]
    pred = [set(rng.choice(LABELS, size=rng.integers(0, 4), replace=False)) for _ in range(n)]
    return gold, pred


def test_accumulate_basic():
    c = accumulate({"a"}, {"a"}, LabelCounts(["a", "b"]))
    assert c.tp.tolist() == [1, 0]
    c = accumulate({"a"}, {"b"}, LabelCounts(["a", "b"]))
    assert (c.fn.tolist(), c.fp.tolist()) == ([1, 0], [0, 1])
    with pytest.raises(ValidationError):
        accumulate({"z"}, set(), LabelCounts(["a"]))


def test_worked_two_label_example():
    counts = LabelCounts(["l1", "l2"], np.array([1, 0]), np.array([1, 0]), np.array([0, 1]))
    assert micro(counts) == (0.5, 0.5, 0.5)
    assert macro(counts)[2] == 1 / 3


def test_zero_and_perfect():
    assert micro(LabelCounts(["a"])) == (0.0, 0.0, 0.0)
    counts = count_all(["a", "b"], [{"a"}, {"b"}], [{"a"}, {"b"}])
    assert micro(counts) == (1.0, 1.0, 1.0)
    assert macro(counts, ["a"]) == (1.0, 1.0, 1.0)


def test_macro_errors_and_symmetry():
    counts = LabelCounts(["a", "b"], np.array([2, 2]), np.array([1, 1]), np.array([3, 3]))
    p, r, f = counts.per_label()
    assert macro(counts) == (p[0], r[0], f[0])
    with pytest.raises(ValidationError):
        macro(counts, [])


def test_bucket_boundaries():
    assert DEFAULT_BUCKETS[bucket_of(50)] == (50, 100)
    assert bucket_of(9) is None
    assert DEFAULT_BUCKETS[bucket_of(10)] == (10, 50)
    assert DEFAULT_BUCKETS[bucket_of(60000)] == (1000, 60000)
    assert bucket_of(60001) is None


def test_random_instances_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        gold, pred = random_sets(rng, int(rng.integers(1, 12)))
        counts = count_all(LABELS, gold, pred)
        rows, mic, per = brute(LABELS, gold, pred)
        assert list(zip(counts.tp, counts.fp, counts.fn)) == rows
        np.testing.assert_allclose(micro(counts), mic, atol=1e-12)
        np.testing.assert_allclose(macro(counts), np.mean(per, axis=0), atol=1e-12)
        freqs = rng.integers(0, 1200, size=len(LABELS))
        for b in bucketed_macro(counts, freqs):
            members = [k for k, f in enumerate(freqs) if b.lo <= f < b.hi or (b.hi == 60000 and f == b.hi)]
            assert b.labels == len(members)
            ref = np.mean([per[k] for k in members], axis=0) if members else (0.0, 0.0, 0.0)
            np.testing.assert_allclose((b.precision, b.recall, b.f1), ref, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=6))
def test_micro_f1_is_harmonic_mean(rows):
    tp, fp, fn = (np.array(col) for col in zip(*rows))
    counts = LabelCounts([str(k) for k in range(len(rows))], tp, fp, fn)
    p, r, f = micro(counts)
    if p + r > 0:
        assert abs(f - 2 * p * r / (p + r)) < 1e-12
    for v in (p, r, f, *macro(counts)):
        assert 0.0 <= v <= 1.0


def test_singleton_bucket_and_order_invariance():
    rng = np.random.default_rng(1)
    gold, pred = random_sets(rng, 30)
    counts = count_all(LABELS, gold, pred)
    freqs = [5, 20, 60, 150, 300, 700]
    p, r, f = counts.per_label()
    for k, b in enumerate(bucketed_macro(counts, freqs)):
        if b.labels == 1:
            assert (b.precision, b.recall, b.f1) == (p[k + 1], r[k + 1], f[k + 1])
    order = rng.permutation(30)
    shuffled = count_all(LABELS, [gold[k] for k in order], [pred[k] for k in order])
    assert evaluate_counts(shuffled, freqs).to_json() == evaluate_counts(counts, freqs).to_json()


def test_merge_is_shard_sum():
    rng = np.random.default_rng(2)
    gold, pred = random_sets(rng, 40)
    whole = count_all(LABELS, gold, pred)
    merged = count_all(LABELS, gold[:15], pred[:15]).merge(count_all(LABELS, gold[15:], pred[15:]))
    assert micro(merged) == micro(whole) and merged.instances == 40


def test_report_json_and_table():
    counts = count_all(["a", "b"], [{"a"}, {"b"}], [{"a"}, set()])
    report = evaluate_counts(counts, [12, 70])
    data = json.loads(report.to_json())
    assert set(data) >= {"micro", "macro", "buckets", "per_label"}
    assert data["per_label"][1]["fn"] == 1
    assert "b" not in report.table() and "b" in report.table(per_category=True)

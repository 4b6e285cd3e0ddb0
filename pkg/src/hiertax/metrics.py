"""Micro/macro precision, recall and F1 with training-frequency buckets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError

DEFAULT_BUCKETS: Tuple[Tuple[int, int], ...] = (
    (10, 50),
    (50, 100),
    (100, 200),
    (200, 500),
    (500, 1000),
    (1000, 60000),
)


def _ratio(num, den):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


@dataclass
class LabelCounts:
    labels: List[str]
    tp: np.ndarray = None
    fp: np.ndarray = None
    fn: np.ndarray = None
    instances: int = 0

    def __post_init__(self):
        n = len(self.labels)
        self.index = {lab: k for k, lab in enumerate(self.labels)}
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n, dtype=np.int64))

    def merge(self, other: "LabelCounts") -> "LabelCounts":
        if other.labels != self.labels:
            raise ValidationError("cannot merge counts over different label spaces")
        return LabelCounts(
            list(self.labels), self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
            self.instances + other.instances,
        )

    def per_label(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = _ratio(self.tp, self.tp + self.fp)
        r = _ratio(self.tp, self.tp + self.fn)
        f = _ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)
        return p, r, f


def accumulate(gold: Iterable, predicted: Iterable, counts: LabelCounts) -> LabelCounts:
    """Add one instance's true/false positives and misses to ``counts`` in place."""
    gold, predicted = set(gold), set(predicted)
    unknown = (gold | predicted) - counts.index.keys()
    if unknown:
        raise ValidationError(f"unknown label {sorted(unknown, key=str)[0]!r}")
    for lab in gold & predicted:
        counts.tp[counts.index[lab]] += 1
    for lab in predicted - gold:
        counts.fp[counts.index[lab]] += 1
    for lab in gold - predicted:
        counts.fn[counts.index[lab]] += 1
    counts.instances += 1
    return counts


def count_all(labels: Sequence, gold: Sequence[Iterable], predicted: Sequence[Iterable]) -> LabelCounts:
    counts = LabelCounts(list(labels))
    for g, p in zip(gold, predicted):
        accumulate(g, p, counts)
    return counts


def micro(counts: LabelCounts) -> Tuple[float, float, float]:
    tp, fp, fn = int(counts.tp.sum()), int(counts.fp.sum()), int(counts.fn.sum())
    return (
        float(_ratio(tp, tp + fp)),
        float(_ratio(tp, tp + fn)),
        float(_ratio(2 * tp, 2 * tp + fp + fn)),
    )


def macro(counts: LabelCounts, subset: Optional[Iterable] = None) -> Tuple[float, float, float]:
    """Unweighted mean of per-label scores over ``subset`` (label ids or indices)."""
    if subset is None:
        idx = np.arange(len(counts.labels))
    else:
        idx = np.array([s if isinstance(s, (int, np.integer)) else counts.index[s] for s in subset], dtype=np.intp)
    if idx.size == 0:
        raise ValidationError("macro average over an empty label subset")
    p, r, f = counts.per_label()
    return float(p[idx].mean()), float(r[idx].mean()), float(f[idx].mean())


def bucket_of(frequency: int, scheme: Sequence[Tuple[int, int]] = DEFAULT_BUCKETS) -> Optional[int]:
    """Lower-inclusive, upper-exclusive; the top bucket also includes its upper bound."""
    last = len(scheme) - 1
    for k, (lo, hi) in enumerate(scheme):
        if lo <= frequency < hi or (k == last and frequency == hi):
            return k
    return None


@dataclass
class BucketScore:
    lo: int
    hi: int
    precision: float
    recall: float
    f1: float
    labels: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def bucketed_macro(
    counts: LabelCounts,
    frequencies: Sequence[int],
    scheme: Sequence[Tuple[int, int]] = DEFAULT_BUCKETS,
) -> List[BucketScore]:
    members: List[List[int]] = [[] for _ in scheme]
    for k, freq in enumerate(frequencies):
        b = bucket_of(int(freq), scheme)
        if b is not None:
            members[b].append(k)
    out = []
    for (lo, hi), idx in zip(scheme, members):
        if idx:
            p, r, f = macro(counts, idx)
        else:
            p = r = f = 0.0
        out.append(BucketScore(lo, hi, p, r, f, len(idx)))
    return out


@dataclass
class EvalReport:
    micro: Tuple[float, float, float]
    macro: Tuple[float, float, float]
    buckets: List[BucketScore]
    per_label: List[dict] = field(default_factory=list)
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        prf = ("precision", "recall", "f1")
        out = {
            "micro": dict(zip(prf, self.micro)),
            "macro": dict(zip(prf, self.macro)),
            "buckets": [b.to_dict() for b in self.buckets],
            "per_label": self.per_label,
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self, per_category: bool = False) -> str:
        lines = [
            f"{'':<18}{'P':>8}{'R':>8}{'F1':>8}",
            f"{'micro':<18}" + "".join(f"{v:8.4f}" for v in self.micro),
            f"{'macro':<18}" + "".join(f"{v:8.4f}" for v in self.macro),
        ]
        for b in self.buckets:
            name = f"[{b.lo},{b.hi}) n={b.labels}"
            lines.append(f"{name:<18}" + "".join(f"{v:8.4f}" for v in (b.precision, b.recall, b.f1)))
        if per_category:
            lines.append("")
            lines.append(f"{'label':<18}{'freq':>8}{'P':>8}{'R':>8}{'F1':>8}")
            for row in self.per_label:
                lines.append(
                    f"{row['id']:<18}{row['frequency']:>8d}"
                    + "".join(f"{row[k]:8.4f}" for k in ("precision", "recall", "f1"))
                )
        return "\n".join(lines)


def evaluate_counts(
    counts: LabelCounts,
    frequencies: Sequence[int],
    scheme: Sequence[Tuple[int, int]] = DEFAULT_BUCKETS,
) -> EvalReport:
    p, r, f = counts.per_label()
    per_label = [
        {
            "id": lab,
            "frequency": int(frequencies[k]),
            "precision": float(p[k]),
            "recall": float(r[k]),
            "f1": float(f[k]),
            "tp": int(counts.tp[k]),
            "fp": int(counts.fp[k]),
            "fn": int(counts.fn[k]),
        }
        for k, lab in enumerate(counts.labels)
    ]
    return EvalReport(
        micro=micro(counts),
        macro=macro(counts) if counts.labels else (0.0, 0.0, 0.0),
        buckets=bucketed_macro(counts, frequencies, scheme),
        per_label=per_label,
    )

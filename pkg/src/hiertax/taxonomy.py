"""Two-level label taxonomy: label spaces, parent/child edges, connection strengths."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import IngestionError, TaxonomyParseError, ValidationError

UNKNOWN = -1  # parent index of fine labels attached to the synthetic "unknown" coarse node


@dataclass(frozen=True)
class LabelSpace:
    coarse: Tuple[Tuple[str, str], ...]
    fine: Tuple[Tuple[str, str], ...]

    def __post_init__(self):
        for level, labels in (("coarse", self.coarse), ("fine", self.fine)):
            ids = [i for i, _ in labels]
            if len(set(ids)) != len(ids):
                raise ValidationError(f"duplicate {level} label id")

    @property
    def n_coarse(self) -> int:
        return len(self.coarse)

    @property
    def n_fine(self) -> int:
        return len(self.fine)

    @property
    def coarse_ids(self) -> List[str]:
        return [i for i, _ in self.coarse]

    @property
    def fine_ids(self) -> List[str]:
        return [i for i, _ in self.fine]

    @property
    def coarse_index(self) -> Dict[str, int]:
        return {lab: k for k, (lab, _) in enumerate(self.coarse)}

    @property
    def fine_index(self) -> Dict[str, int]:
        return {lab: k for k, (lab, _) in enumerate(self.fine)}


@dataclass
class TaxonomyDag:
    """Bipartite coarse -> fine edges.

    Parent index ``UNKNOWN`` marks fine labels that had no observed coarse
    parent; those edges are excluded from ``known_edges``.
    """

    n_coarse: int
    n_fine: int
    edges: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.edges = sorted(set((int(i), int(j)) for i, j in self.edges))
        for i, j in self.edges:
            if not (i == UNKNOWN or 0 <= i < self.n_coarse) or not 0 <= j < self.n_fine:
                raise ValidationError(f"edge ({i}, {j}) references an invalid index")

    def children(self, i: int) -> List[int]:
        return [j for p, j in self.edges if p == i]

    def parents(self, j: int) -> List[int]:
        return [i for i, c in self.edges if c == j]

    def known_edges(self) -> List[Tuple[int, int]]:
        return [(i, j) for i, j in self.edges if i != UNKNOWN]

    def edge_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        known = self.known_edges()
        if not known:
            return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
        a = np.array(known, dtype=np.intp)
        return a[:, 0], a[:, 1]

    def orphans(self) -> List[int]:
        has_parent = {j for _, j in self.edges}
        return [j for j in range(self.n_fine) if j not in has_parent]


@dataclass
class Taxonomy:
    space: LabelSpace
    dag: TaxonomyDag
    fingerprint: str = ""

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def to_text(self) -> str:
        lines = ["[coarse]"]
        lines += [f"{i}\t{name}" for i, name in self.space.coarse]
        lines.append("[fine]")
        lines += [f"{i}\t{name}" for i, name in self.space.fine]
        lines.append("[edges]")
        cids, fids = self.space.coarse_ids, self.space.fine_ids
        lines += [f"{cids[i]}\t{fids[j]}" for i, j in self.dag.known_edges()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def parse_taxonomy(text: str) -> Tuple[LabelSpace, TaxonomyDag]:
    section = None
    coarse: List[Tuple[str, str]] = []
    fine: List[Tuple[str, str]] = []
    raw_edges: List[Tuple[int, str, str]] = []
    seen = {"coarse": set(), "fine": set()}
    any_content = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        any_content = True
        if line.strip() in ("[coarse]", "[fine]", "[edges]"):
            section = line.strip()[1:-1]
            continue
        if section is None:
            raise TaxonomyParseError(lineno, "content before the first section header")
        parts = line.split("\t")
        if section in ("coarse", "fine"):
            label_id = parts[0].strip()
            name = parts[1].strip() if len(parts) > 1 else label_id
            if not label_id:
                raise TaxonomyParseError(lineno, "empty label id")
            if label_id in seen[section]:
                raise TaxonomyParseError(lineno, f"duplicate {section} id {label_id!r}")
            seen[section].add(label_id)
            (coarse if section == "coarse" else fine).append((label_id, name))
        else:
            if len(parts) != 2:
                raise TaxonomyParseError(lineno, "edge lines must be coarse_id<TAB>fine_id")
            raw_edges.append((lineno, parts[0].strip(), parts[1].strip()))

    if not any_content:
        raise TaxonomyParseError(1, "empty taxonomy file")
    space = LabelSpace(tuple(coarse), tuple(fine))
    cidx, fidx = space.coarse_index, space.fine_index
    edges = []
    for lineno, c, f in raw_edges:
        if c not in cidx:
            raise TaxonomyParseError(lineno, f"edge references undeclared coarse id {c!r}")
        if f not in fidx:
            raise TaxonomyParseError(lineno, f"edge references undeclared fine id {f!r}")
        edges.append((cidx[c], fidx[f]))
    return space, TaxonomyDag(space.n_coarse, space.n_fine, edges)


def load_taxonomy(path) -> Taxonomy:
    """Read a taxonomy file; the fingerprint is the SHA-256 of its bytes."""
    raw = Path(path).read_bytes()
    space, dag = parse_taxonomy(raw.decode("utf-8"))
    return Taxonomy(space, dag, hashlib.sha256(raw).hexdigest())


# ---------------------------------------------------------------- connections


def build_connection_matrix(records: Iterable, space: LabelSpace) -> np.ndarray:
    """w[i, j] = #(records with coarse i and fine j) / #(records with coarse i).

    Records are label sets, so each record counts at most once per pair. Rows
    for coarse labels that never occur stay zero.
    """
    cidx, fidx = space.coarse_index, space.fine_index
    joint = np.zeros((space.n_coarse, space.n_fine))
    single = np.zeros(space.n_coarse)
    for rec in records:
        try:
            ci = sorted({cidx[c] for c in rec.coarse})
        except KeyError as exc:
            raise IngestionError(rec.id, f"unknown coarse label {exc.args[0]!r}") from None
        try:
            fj = sorted({fidx[f] for f in rec.fine})
        except KeyError as exc:
            raise IngestionError(rec.id, f"unknown fine label {exc.args[0]!r}") from None
        single[ci] += 1
        if ci and fj:
            joint[np.ix_(ci, fj)] += 1
    w = np.zeros_like(joint)
    seen = single > 0
    w[seen] = joint[seen] / single[seen, None]
    return w


def derive_dag_from_connections(
    w: np.ndarray, threshold: float = 0.05
) -> Tuple[TaxonomyDag, List[str]]:
    """Induce edges where w >= threshold.

    Fine labels with no edge above threshold attach to their strongest coarse
    label. Fine labels whose column is entirely zero attach to ``UNKNOWN`` and
    are reported in the returned warnings.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValidationError(f"threshold must lie in (0, 1], got {threshold}")
    w = np.asarray(w, dtype=np.float64)
    n_coarse, n_fine = w.shape
    edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(w >= threshold))]
    covered = {j for _, j in edges}
    warnings = []
    for j in range(n_fine):
        if j in covered:
            continue
        column = w[:, j]
        if not np.any(column > 0):
            edges.append((UNKNOWN, j))
            warnings.append(f"fine label {j} never co-occurs with a coarse label; attached to unknown")
        else:
            edges.append((int(np.argmax(column)), j))
    return TaxonomyDag(n_coarse, n_fine, edges), warnings


def write_connection_matrix(path, w: np.ndarray, space: LabelSpace) -> None:
    lines = ["\t".join([""] + space.fine_ids)]
    for cid, row in zip(space.coarse_ids, w):
        lines.append("\t".join([cid] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_connection_matrix(path) -> Tuple[List[str], List[str], np.ndarray]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    fine_ids = rows[0].split("\t")[1:]
    coarse_ids, values = [], []
    for row in rows[1:]:
        if not row:
            continue
        parts = row.split("\t")
        coarse_ids.append(parts[0])
        values.append([float(v) for v in parts[1:]])
    return coarse_ids, fine_ids, np.array(values).reshape(len(coarse_ids), len(fine_ids))


def edges_from_labels(
    space: LabelSpace, pairs: Sequence[Tuple[str, str]]
) -> TaxonomyDag:
    cidx, fidx = space.coarse_index, space.fine_index
    return TaxonomyDag(space.n_coarse, space.n_fine, [(cidx[c], fidx[f]) for c, f in pairs])

"""Report records, tokenisation, train/test splitting and a long-tail synthetic corpus."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from .errors import IngestionError, ValidationError
from .taxonomy import LabelSpace, Taxonomy, TaxonomyDag

PAD, UNK, CLS = 0, 1, 2
_TOKEN = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class Record:
    id: str
    text: str
    coarse: frozenset = field(default_factory=frozenset)
    fine: frozenset = field(default_factory=frozenset)

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "text": self.text, "coarse": sorted(self.coarse), "fine": sorted(self.fine)},
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class TokenizedDoc:
    ids: Tuple[int, ...]
    original_length: int


def words(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


class Vocab:
    """Token -> id map.

    Ids 0 and 1 are padding and unknown. Vocabularies built from text also
    reserve id 2 for a document-start marker that the encoder pipeline
    prepends, giving label attention a neutral position to fall back on.
    """

    def __init__(self, tokens: Sequence[str], reserved: Sequence[str] = ("<pad>", "<unk>", "<cls>")):
        self.tokens = list(reserved) + list(tokens)
        self.index = {t: k for k, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self.index.get(token, UNK)

    @property
    def cls_id(self):
        return self.index.get("<cls>")

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 2) -> "Vocab":
        counts = Counter(w for text in texts for w in words(text))
        kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(kept)

    @classmethod
    def from_mapping(cls, mapping: Dict[str, int]) -> "Vocab":
        """Build from an explicit token -> id map (ids 0 and 1 stay reserved)."""
        vocab = cls([], reserved=("<pad>", "<unk>"))
        size = max([1] + list(mapping.values())) + 1
        vocab.tokens = ["<pad>", "<unk>"] + [f"<unused{k}>" for k in range(2, size)]
        for token, k in mapping.items():
            if k < 2:
                raise ValidationError("ids 0 and 1 are reserved for padding and unknown")
            vocab.tokens[k] = token
        vocab.index = {t: k for k, t in enumerate(vocab.tokens)}
        return vocab


def tokenize(text: str, vocab: Union[Vocab, Dict[str, int]], max_len: int = 256) -> TokenizedDoc:
    """Lowercase, split on non-alphanumeric runs, map to ids and truncate."""
    if max_len < 1:
        raise ValidationError("max_len must be at least 1")
    if isinstance(vocab, dict):
        vocab = Vocab.from_mapping(vocab)
    toks = words(text)
    if not toks:
        return TokenizedDoc((UNK,), 0)
    return TokenizedDoc(tuple(vocab[t] for t in toks[:max_len]), len(toks))


def split(corpus: Sequence, train_fraction: float = 0.9, seed: int = 0) -> Tuple[list, list]:
    """Seeded shuffle followed by a prefix split into (train, test)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(corpus)
    if n < 2:
        raise ValidationError("need at least two records to split")
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    return [corpus[k] for k in order[:n_train]], [corpus[k] for k in order[n_train:]]


# ---------------------------------------------------------------- JSON lines


def read_corpus(path, space: LabelSpace | None = None) -> List[Record]:
    records = []
    cids = set(space.coarse_ids) if space else None
    fids = set(space.fine_ids) if space else None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = Record(str(obj["id"]), str(obj["text"]), frozenset(obj["coarse"]), frozenset(obj["fine"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IngestionError(f"line {lineno}", f"malformed record ({exc})") from None
            if cids is not None:
                bad = sorted(rec.coarse - cids) + sorted(rec.fine - fids)
                if bad:
                    raise IngestionError(rec.id, f"unknown label id {bad[0]!r}")
            records.append(rec)
    return records


def write_corpus(path, records: Iterable[Record]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


# ---------------------------------------------------------------- synthetic corpus

_KEYWORDS = """
engine oil screen blocked fuel pump starvation carburetor icing magneto ignition
propeller blade fatigue crack landing gear collapse hydraulic leak brake failure
tire burst aileron cable rudder trim elevator jammed flap actuator stall spin
altitude loss terrain impact tree strike wire powerline runway overrun excursion
crosswind gust tailwind downdraft turbulence thunderstorm lightning hail visibility
fog darkness night glare snow ice rime windshear bird ingestion deer animal
vacuum gyro instrument compass altimeter pitot static radio transponder battery
alternator electrical fire smoke cockpit seatbelt harness door canopy window
rotor tail gearbox clutch skid float water ditching dock taxi ramp hangar tug
checklist preflight inspection maintenance logbook mechanic torque bolt rivet
corrosion weld bracket hose clamp filter valve cylinder piston crankshaft bearing
exhaust muffler cowling baffle intake manifold turbo supercharger mixture throttle
""".split()

_SYLLABLES = "ba ko ri mu te sa lo ne vi du ga pe zo fi ra ku me ti no ha".split()


def _pseudo_words(count: int, taken: set) -> List[str]:
    out = []
    k = 0
    n = len(_SYLLABLES)
    while len(out) < count:
        a, b, c = _SYLLABLES[k % n], _SYLLABLES[(k // n) % n], _SYLLABLES[(k // (n * n)) % n]
        w = a + b + c
        if w not in taken:
            taken.add(w)
            out.append(w)
        k += 1
    return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated corpus.

    ``noise`` is the mean number of filler tokens per document (Poisson).
    ``leak`` is the chance that each keyword of a present label is written.
    """

    n_coarse: int = 3
    fine_per_coarse: Union[int, Tuple[int, ...]] = 4
    keywords_per_label: int = 3
    coarse_keywords: int = 2
    noise_vocab: int = 200
    zipf: float = 1.2
    docs: int = 2000
    leak: float = 1.0
    noise: float = 0.0
    seed: int = 0

    def fine_counts(self) -> List[int]:
        if isinstance(self.fine_per_coarse, int):
            return [self.fine_per_coarse] * self.n_coarse
        return list(self.fine_per_coarse)

    def validate(self) -> None:
        counts = self.fine_counts()
        if self.n_coarse < 1 or len(counts) != self.n_coarse or min(counts) < 1:
            raise ValidationError("label counts must be positive")
        if self.docs < 1 or self.keywords_per_label < 1 or self.noise_vocab < 1:
            raise ValidationError("document and vocabulary counts must be positive")
        if self.zipf <= 0:
            raise ValidationError("zipf exponent must be positive")
        if not 0.0 <= self.leak <= 1.0 or self.noise < 0 or self.coarse_keywords < 0:
            raise ValidationError("leak must lie in [0, 1] and noise must be non-negative")


@dataclass
class SyntheticCorpus:
    taxonomy: Taxonomy
    records: List[Record]
    keywords: Dict[str, List[str]]  # label id -> planted words, both levels


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    """Zipf-distributed fine labels under a tree of coarse labels.

    Each fine label owns a disjoint keyword set and each coarse label a
    smaller one shared by all its children. A document draws 1 + Poisson(1)
    distinct fine labels, takes their parents as coarse labels, and writes
    every keyword of each present label with probability ``leak``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    counts = spec.fine_counts()
    n_fine = sum(counts)

    taken: set = set()
    pool = [w for w in _KEYWORDS if not (w in taken or taken.add(w))]
    need = n_fine * spec.keywords_per_label + spec.n_coarse * spec.coarse_keywords
    if need > len(pool):
        pool += _pseudo_words(need - len(pool), taken)
    filler = _pseudo_words(spec.noise_vocab, taken)

    coarse, fine, edges, keywords = [], [], [], {}
    cursor = 0
    parent_of = []
    for i, count in enumerate(counts):
        cid = f"occ{i:02d}"
        kws = pool[cursor : cursor + spec.coarse_keywords]
        cursor += spec.coarse_keywords
        keywords[cid] = kws
        coarse.append((cid, " ".join(kws) or cid))
        for k in range(count):
            fid = f"sub{i:02d}{k:02d}"
            kws = pool[cursor : cursor + spec.keywords_per_label]
            cursor += spec.keywords_per_label
            keywords[fid] = kws
            fine.append((fid, " ".join(kws)))
            edges.append((i, len(fine) - 1))
            parent_of.append(i)
    space = LabelSpace(tuple(coarse), tuple(fine))
    taxonomy = Taxonomy(space, TaxonomyDag(space.n_coarse, space.n_fine, edges))

    ranks = rng.permutation(n_fine) + 1.0
    weights = ranks ** -spec.zipf
    weights /= weights.sum()

    records = []
    for n in range(spec.docs):
        k = min(1 + int(rng.poisson(1.0)), n_fine)
        chosen = sorted(int(j) for j in rng.choice(n_fine, size=k, replace=False, p=weights))
        parents = sorted({parent_of[j] for j in chosen})
        tokens = []
        for i in parents:
            tokens += [w for w in keywords[coarse[i][0]] if rng.random() < spec.leak]
        for j in chosen:
            tokens += [w for w in keywords[fine[j][0]] if rng.random() < spec.leak]
        n_noise = int(rng.poisson(spec.noise)) if spec.noise > 0 else 0
        tokens += [filler[int(t)] for t in rng.integers(0, len(filler), size=n_noise)]
        if not tokens:
            tokens = [filler[int(rng.integers(0, len(filler)))]]
        tokens = [tokens[int(t)] for t in rng.permutation(len(tokens))]
        records.append(
            Record(
                id=f"doc{n:05d}",
                text=" ".join(tokens) + ".",
                coarse=frozenset(coarse[i][0] for i in parents),
                fine=frozenset(fine[j][0] for j in chosen),
            )
        )
    return SyntheticCorpus(taxonomy, records, keywords)


def label_matrix(records: Sequence[Record], ids: Sequence[str], level: str) -> np.ndarray:
    """Dense {0,1} indicator matrix of shape (len(records), len(ids))."""
    index = {lab: k for k, lab in enumerate(ids)}
    out = np.zeros((len(records), len(ids)))
    for n, rec in enumerate(records):
        for lab in getattr(rec, level):
            if lab in index:
                out[n, index[lab]] = 1.0
    return out

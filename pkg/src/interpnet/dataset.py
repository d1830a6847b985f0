"""Classify-and-explain records: file format, vocabulary, splits, synthetic data.

Dataset files are line-delimited JSON. The first line is a header
``{"format": "interpnet-dataset", "version": 1}``; every following line is one
record ``{"id": str, "label": int, "features": [float, ...], "explanations": [str, ...]}``.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from interpnet.explainer import END, START, UNK, Vocabulary
from interpnet.text import tokenize

FORMAT = "interpnet-dataset"
VERSION = 1

ATTRIBUTES = (
    "white belly", "brown back", "red crown", "black wingbar", "yellow breast",
    "grey tail", "orange beak", "blue head", "spotted throat", "striped nape",
    "pointed bill", "green rump", "pale eyebrow", "dark cheek", "buff flank",
    "crested forehead",
)
TEMPLATES = (
    "this bird has a {} .",
    "this is a bird with a {} .",
)


class DatasetError(ValueError):
    pass


@dataclass
class DatasetRecord:
    id: str
    features: np.ndarray
    label: int
    explanations: list[str]

    def to_dict(self) -> dict:
        return {"id": self.id, "label": self.label,
                "features": [float(v) for v in self.features],
                "explanations": list(self.explanations)}

    def __eq__(self, other):
        return (isinstance(other, DatasetRecord) and self.id == other.id
                and self.label == other.label and self.explanations == other.explanations
                and np.array_equal(self.features, other.features))


def _validate_record(rec: DatasetRecord, where: str):
    if not rec.explanations:
        raise DatasetError(f"{where}: record {rec.id!r} has no explanations")
    for e in rec.explanations:
        if not isinstance(e, str) or not e.strip():
            raise DatasetError(f"{where}: record {rec.id!r} has an empty explanation")
        if not e.rstrip().endswith("."):
            raise DatasetError(f"{where}: explanation {e!r} does not end with a period")
    if rec.label < 0:
        raise DatasetError(f"{where}: negative label {rec.label}")
    if rec.features.ndim != 1 or rec.features.size == 0:
        raise DatasetError(f"{where}: features must be a nonempty vector")
    if not np.all(np.isfinite(rec.features)):
        raise DatasetError(f"{where}: non-finite feature value")


def validate(records: Sequence[DatasetRecord], source: str = "<records>"):
    dims = {r.features.shape for r in records}
    if len(dims) > 1:
        raise DatasetError(f"{source}: inconsistent feature dimensions {sorted(d[0] for d in dims)}")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{source}: duplicate record ids")


def parse_record(obj, where: str) -> DatasetRecord:
    try:
        rec = DatasetRecord(
            id=str(obj["id"]),
            features=np.asarray(obj["features"], dtype=np.float64),
            label=int(obj["label"]),
            explanations=list(obj.get("explanations") or []),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: malformed record ({exc})") from None
    _validate_record(rec, where)
    return rec


def load_dataset(path) -> list[DatasetRecord]:
    path = Path(path)
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: cannot parse line ({exc.msg})") from None
            if lineno == 1:
                if not isinstance(obj, dict) or obj.get("format") != FORMAT:
                    raise DatasetError(f"{where}: missing {FORMAT!r} header line")
                if obj.get("version") != VERSION:
                    raise DatasetError(f"{where}: unsupported version {obj.get('version')!r}")
                continue
            if not isinstance(obj, dict):
                raise DatasetError(f"{where}: record must be a JSON object")
            records.append(parse_record(obj, where))
    validate(records, str(path))
    return records


def dumps_dataset(records: Sequence[DatasetRecord]) -> str:
    lines = [json.dumps({"format": FORMAT, "version": VERSION})]
    lines += [json.dumps(r.to_dict()) for r in records]
    return "\n".join(lines) + "\n"


def save_dataset(records: Sequence[DatasetRecord], path):
    validate(records)
    Path(path).write_text(dumps_dataset(records))


def num_classes(records: Sequence[DatasetRecord]) -> int:
    return max(r.label for r in records) + 1


def feature_matrix(records: Sequence[DatasetRecord]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([r.features for r in records]),
            np.array([r.label for r in records], dtype=np.int64))


# --------------------------------------------------------------------------
# vocabulary
# --------------------------------------------------------------------------

def build_vocabulary(records: Sequence[DatasetRecord], min_count: int = 1) -> Vocabulary:
    """Specials first (start, unk), then words by descending count, ties alphabetical.

    The period is the terminal token and is always kept.
    """
    if not records:
        raise ValueError("cannot build a vocabulary from zero records")
    counts = Counter(tok for r in records for e in r.explanations for tok in tokenize(e))
    counts.pop(START, None)
    counts.pop(UNK, None)
    words = sorted((w for w, c in counts.items() if c >= min_count or w == END),
                   key=lambda w: (-counts[w], w))
    if END not in words:
        words.append(END)
    words = [START, UNK, *words]
    return Vocabulary(words, start_index=0, end_index=words.index(END), unk_index=1)


def encode_explanation(text: str, vocab: Vocabulary) -> list[int]:
    """Start index, word indices (unk for unknown words), terminal index."""
    tokens = tokenize(text)
    if not tokens or tokens[-1] != END:
        tokens.append(END)
    return vocab.encode(tokens)


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------

def _allocate(n: int, fractions: Sequence[float], carry: Sequence[float] | None = None) -> list[int]:
    """Largest-remainder counts for ``n`` items, at least one per part.

    ``carry`` is how far each part already lags its share; it is added to the
    remainders so rounding does not keep favouring the same part.
    """
    carry = carry or [0.0] * len(fractions)
    raw = [f * n for f in fractions]
    counts = [math.floor(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i] + carry[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    for i in range(len(counts)):
        while counts[i] == 0:
            donor = max(range(len(counts)), key=lambda k: (counts[k], -k))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split(records: Sequence[DatasetRecord], fractions: Sequence[float] = (0.7, 0.15, 0.15),
          seed: int = 0) -> tuple[list[DatasetRecord], ...]:
    """Stratified, seeded split into len(fractions) disjoint parts (train, val, test)."""
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be positive and sum to 1, got {fractions}")
    by_class: dict[int, list[int]] = {}
    for i, r in enumerate(records):
        by_class.setdefault(r.label, []).append(i)
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in fractions]
    seen = 0
    for label in sorted(by_class):
        idx = by_class[label]
        if len(idx) < len(fractions):
            raise DatasetError(f"class {label} has {len(idx)} examples, fewer than "
                               f"{len(fractions)} splits")
        perm = rng.permutation(idx)
        carry = [f * seen - len(p) for f, p in zip(fractions, parts)]
        start = 0
        for part, count in zip(parts, _allocate(len(idx), fractions, carry)):
            part.extend(int(i) for i in perm[start:start + count])
            start += count
        seen += len(idx)
    return tuple([records[i] for i in sorted(p)] for p in parts)


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    num_classes: int = 5
    feature_dim: int = 16
    noise_std: float = 0.5
    attributes_per_class: int = 2
    examples_per_class: int = 40
    separation: float = 10.0
    templates: int = 1
    seed: int = 0
    attribute_words: Sequence[str] = field(default=ATTRIBUTES)

    def validate(self):
        for name in ("num_classes", "feature_dim", "attributes_per_class", "examples_per_class"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")
        if not 1 <= self.templates <= len(TEMPLATES):
            raise ValueError(f"templates must be in 1..{len(TEMPLATES)}")
        needed = self.num_classes * self.attributes_per_class
        if needed > len(self.attribute_words):
            raise ValueError(f"{needed} distinct attributes needed but only "
                             f"{len(self.attribute_words)} available")


def prototypes(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Gaussian class centres, scaled up until every pair is separation*noise_std apart."""
    protos = rng.normal(size=(spec.num_classes, spec.feature_dim))
    if spec.num_classes > 1 and spec.noise_std > 0:
        diff = protos[:, None, :] - protos[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        closest = dist[~np.eye(spec.num_classes, dtype=bool)].min()
        protos *= max(1.0, spec.separation * spec.noise_std / closest)
    return protos


def class_explanations(attributes: Sequence[str], templates: int = 1) -> list[str]:
    body = " and a ".join(attributes)
    return [t.format(body) for t in TEMPLATES[:templates]]


def generate_synthetic(spec: SyntheticSpec) -> list[DatasetRecord]:
    """Records whose explanations are a fixed function of the class label."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    protos = prototypes(spec, rng)
    words = list(spec.attribute_words)
    order = rng.permutation(len(words))
    k = spec.attributes_per_class
    records = []
    for c in range(spec.num_classes):
        attrs = [words[j] for j in order[c * k:(c + 1) * k]]
        explanations = class_explanations(attrs, spec.templates)
        for i in range(spec.examples_per_class):
            x = protos[c] + rng.normal(scale=spec.noise_std, size=spec.feature_dim)
            records.append(DatasetRecord(f"c{c:03d}-{i:04d}", x, c, list(explanations)))
    return records

"""Genre-balanced, disjoint train/test splits for binary concepts.

Within every genre the concept's positives are matched with an equal number
of uniformly drawn non-positives. Training cells are capped at
``ConceptSpec.cell_cap`` per label; whatever is left goes to the test side,
which is then truncated to equal label counts so that a label-blind probe
scores exactly 0.5 on each genre's test pool.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import (
    IoFailure,
    MalformedFile,
    NoEligibleGenre,
    SubsetTooSmall,
    UnknownPositiveValue,
)

CONCEPT_ATTRIBUTES = ("gender", "language", "genre")
SPLIT_SCHEMA_VERSION = 1

# stream tags keep split and replicate generators apart
_SPLIT_STREAM = 0x5350
_REPLICATE_STREAM = 0x5245


@dataclass(frozen=True)
class ConceptSpec:
    """A binary concept ``attribute == positive_value``.

    ``stratify_by`` names the attribute whose values define the balancing
    cells. It is ``"genre"`` for the gender/language concepts; a genre
    concept (used as the base direction for debiasing) is stratified by
    gender instead.
    """

    attribute: str
    positive_value: str
    cell_cap: int = 50
    seed: int = 42
    name: str = ""
    stratify_by: str = "genre"

    def __post_init__(self):
        if self.attribute not in CONCEPT_ATTRIBUTES:
            raise ValueError(f"attribute must be one of {CONCEPT_ATTRIBUTES}")
        if self.stratify_by not in CONCEPT_ATTRIBUTES or self.stratify_by == self.attribute:
            raise ValueError("stratify_by must be a different attribute")
        if self.cell_cap < 1:
            raise ValueError("cell_cap must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.name:
            object.__setattr__(self, "name", f"{self.attribute}={self.positive_value}")

    @classmethod
    def parse(cls, text: str, **kwargs) -> "ConceptSpec":
        """Build from ``attribute=value`` syntax, e.g. ``gender=female``."""
        attribute, sep, value = text.partition("=")
        if not sep or not attribute or not value:
            raise ValueError(f"concept must look like attribute=value, got {text!r}")
        if attribute == "genre" and "stratify_by" not in kwargs:
            kwargs["stratify_by"] = "gender"
        return cls(attribute.strip(), value.strip(), **kwargs)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "attribute": self.attribute,
            "positive_value": self.positive_value,
            "cell_cap": self.cell_cap,
            "seed": self.seed,
            "stratify_by": self.stratify_by,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConceptSpec":
        return cls(
            attribute=d["attribute"],
            positive_value=d["positive_value"],
            cell_cap=int(d["cell_cap"]),
            seed=int(d["seed"]),
            name=d.get("name", ""),
            stratify_by=d.get("stratify_by", "genre"),
        )


Sample = tuple[str, int]


@dataclass(frozen=True)
class ConceptSplit:
    concept: ConceptSpec
    train: tuple[Sample, ...]
    test: tuple[Sample, ...]
    # (label, genre) -> count, per side
    train_counts: dict
    test_counts: dict
    # record id -> stratum value, for every id on either side
    strata: dict

    @property
    def per_cell_counts(self) -> dict:
        return {"train": dict(self.train_counts), "test": dict(self.test_counts)}

    @property
    def genres(self) -> list[str]:
        """Strata with at least one test record, sorted."""
        return sorted({g for (_, g) in self.test_counts})

    def train_ids(self) -> list[str]:
        return [rid for rid, _ in self.train]

    def test_ids(self) -> list[str]:
        return [rid for rid, _ in self.test]

    def test_pool(self, genre: str) -> list[Sample]:
        return [(rid, lbl) for rid, lbl in self.test if self.strata[rid] == genre]

    def to_dict(self) -> dict:
        def cells(counts):
            return [
                {"label": lbl, "genre": g, "count": c}
                for (lbl, g), c in sorted(counts.items(), key=lambda kv: (kv[0][1], -kv[0][0]))
            ]

        return {
            "schema_version": SPLIT_SCHEMA_VERSION,
            "concept": self.concept.to_dict(),
            "train": [[rid, lbl, self.strata[rid]] for rid, lbl in self.train],
            "test": [[rid, lbl, self.strata[rid]] for rid, lbl in self.test],
            "per_cell_counts": {"train": cells(self.train_counts), "test": cells(self.test_counts)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ConceptSplit":
        try:
            if d.get("schema_version") != SPLIT_SCHEMA_VERSION:
                raise ValueError(f"unsupported split schema_version {d.get('schema_version')!r}")
            concept = ConceptSpec.from_dict(d["concept"])
            strata = {}
            sides = []
            for key in ("train", "test"):
                side = []
                for rid, lbl, g in d[key]:
                    if lbl not in (0, 1):
                        raise ValueError(f"label must be 0 or 1, got {lbl!r}")
                    side.append((str(rid), int(lbl)))
                    strata[str(rid)] = str(g)
                sides.append(tuple(side))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFile(f"invalid split document: {exc}") from exc
        train, test = sides
        return cls(concept, train, test, _count(train, strata), _count(test, strata), strata)


def _count(side, strata) -> dict:
    return dict(Counter((lbl, strata[rid]) for rid, lbl in side))


def save_split(split: ConceptSplit, path) -> None:
    try:
        Path(path).write_text(split.to_json(), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_split(path) -> ConceptSplit:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(doc, dict):
        raise MalformedFile("split file must hold a JSON object", path)
    return ConceptSplit.from_dict(doc)


def stable_hash(text: str) -> int:
    """64-bit hash of a string that is stable across processes and platforms."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def _rng(*words: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(words)))


def train_cell_size(m: int, cap: int) -> int:
    """Per-class training count for a stratum whose smaller class has ``m`` records."""
    if m > cap:
        return cap
    k = (4 * m) // 5
    if k == m and m >= 2:
        k -= 1
    return k


def build_split(ds: Dataset, concept: ConceptSpec) -> ConceptSplit:
    """Draw a balanced, disjoint train/test split for ``concept``.

    Records whose concept or stratum attribute is absent are ignored.
    """
    attr, strat = concept.attribute, concept.stratify_by
    if concept.positive_value not in ds.attribute_vocabulary[attr]:
        raise UnknownPositiveValue(
            f"{concept.positive_value!r} does not occur for attribute {attr!r}"
        )

    pos: dict[str, list[str]] = {}
    neg: dict[str, list[str]] = {}
    for rec in ds.records:
        value, g = rec.attribute(attr), rec.attribute(strat)
        if value is None or g is None:
            continue
        bucket = pos if value == concept.positive_value else neg
        bucket.setdefault(g, []).append(rec.id)

    train: list[Sample] = []
    test: list[Sample] = []
    strata: dict[str, str] = {}
    eligible = False
    for g in sorted(set(pos) | set(neg)):
        p, n = pos.get(g, []), neg.get(g, [])
        m = min(len(p), len(n))
        if m == 0:
            continue
        eligible = True
        rng = _rng(_SPLIT_STREAM, concept.seed, stable_hash(g))
        p = [p[i] for i in rng.permutation(len(p))]
        n = [n[i] for i in rng.permutation(len(n))]
        k = train_cell_size(m, concept.cell_cap)
        t = min(len(p), len(n)) - k
        # the permutations already randomize which majority records are dropped
        train += [(rid, 1) for rid in p[:k]] + [(rid, 0) for rid in n[:k]]
        test += [(rid, 1) for rid in p[k:k + t]] + [(rid, 0) for rid in n[k:k + t]]
        for rid in p[:k + t] + n[:k + t]:
            strata[rid] = g

    if not eligible:
        raise NoEligibleGenre(
            f"no {strat} has both a positive and a negative record for {concept.name}"
        )
    if not train:
        raise NoEligibleGenre(f"every {strat} is too small to give {concept.name} a training cell")
    train_t, test_t = tuple(train), tuple(test)
    return ConceptSplit(concept, train_t, test_t, _count(train_t, strata),
                        _count(test_t, strata), strata)


def subsample_for_replicate(split: ConceptSplit, fraction: float,
                            replicate_index: int) -> list[Sample]:
    """Balanced per-genre subset of the training side for one replicate.

    Each genre contributes ``ceil(fraction * cell)`` positives and as many
    negatives. The generator depends only on the concept seed and
    ``replicate_index``, so results do not depend on call order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if replicate_index < 0:
        raise ValueError("replicate_index must be non-negative")
    if fraction * len(split.train) < 2:
        raise SubsetTooSmall(
            f"fraction {fraction} of {len(split.train)} training records is fewer than 2"
        )

    by_cell: dict[tuple[str, int], list[str]] = {}
    for rid, lbl in split.train:
        by_cell.setdefault((split.strata[rid], lbl), []).append(rid)

    rng = _rng(_REPLICATE_STREAM, split.concept.seed, replicate_index)
    chosen: list[Sample] = []
    for g in sorted({g for g, _ in by_cell}):
        p, n = by_cell.get((g, 1), []), by_cell.get((g, 0), [])
        cell = min(len(p), len(n))
        if cell == 0:
            continue
        k = min(cell, math.ceil(fraction * cell - 1e-9))
        chosen += [(p[i], 1) for i in rng.choice(len(p), size=k, replace=False)]
        chosen += [(n[i], 0) for i in rng.choice(len(n), size=k, replace=False)]

    labels = {lbl for _, lbl in chosen}
    if labels != {0, 1}:
        raise SubsetTooSmall("replicate subset lacks one of the classes")
    order = rng.permutation(len(chosen))
    return [chosen[i] for i in order]

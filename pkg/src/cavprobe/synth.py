"""Synthetic embedding worlds with planted concept geometry.

Each record is

    x = mu_g + sum_c (2 y_c - 1) * beta * d_c + sum_{planted (g, c)} s * d_c + sigma * eps

where ``d_c`` are orthonormal concept directions, ``mu_g`` a genre offset
orthogonal to all of them, ``y_c`` the record's binary label for concept
``c`` and ``eps`` standard normal noise. A plant moves every member of the
genre along the concept direction by ``s``, regardless of label, so a
balanced test pool of that genre lands on one side of the concept boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DimensionMismatch, InvalidConfig, IoFailure, MalformedFile, ZeroVector
from .sampler import stable_hash

_DEFAULT_NEGATIVE = {"female": "male", "male": "female"}


@dataclass(frozen=True)
class SynthConcept:
    attribute: str
    positive_value: str
    direction_seed: int = 0
    negative_value: str = ""

    def __post_init__(self):
        if not self.negative_value:
            neg = _DEFAULT_NEGATIVE.get(self.positive_value, f"not_{self.positive_value}")
            object.__setattr__(self, "negative_value", neg)

    @property
    def name(self) -> str:
        return f"{self.attribute}={self.positive_value}"


@dataclass(frozen=True)
class Plant:
    genre: str
    concept: str
    strength: float


@dataclass(frozen=True)
class SynthConfig:
    dimension: int = 64
    genres: tuple[tuple[str, int], ...] = (("g0", 100), ("g1", 100), ("g2", 100), ("g3", 100))
    concepts: tuple[SynthConcept, ...] = (SynthConcept("gender", "female", 1),)
    genre_offsets_seed: int = 0
    noise_sigma: float = 1.0
    plant: tuple[Plant, ...] = ()
    master_seed: int = 0
    signal_strength: float = 2.0
    genre_offset_scale: float = 0.1

    def validate(self) -> None:
        if self.dimension < 1:
            raise InvalidConfig("dimension must be positive")
        if not self.genres:
            raise InvalidConfig("at least one genre is required")
        names = [g for g, _ in self.genres]
        if len(set(names)) != len(names):
            raise InvalidConfig("genre names must be unique")
        for g, count in self.genres:
            if not isinstance(g, str) or not g:
                raise InvalidConfig("genre names must be nonempty strings")
            if count < 2:
                raise InvalidConfig(f"genre {g!r} needs at least 2 records per label")
        if not self.concepts:
            raise InvalidConfig("at least one concept is required")
        attrs = [c.attribute for c in self.concepts]
        if any(a not in ("gender", "language") for a in attrs):
            raise InvalidConfig("concept attributes must be gender or language")
        if len(set(attrs)) != len(attrs):
            raise InvalidConfig("at most one concept per attribute")
        if any(c.positive_value == c.negative_value for c in self.concepts):
            raise InvalidConfig("positive and negative values must differ")
        if len(self.concepts) > self.dimension:
            raise InvalidConfig("more concepts than dimensions")
        if not self.noise_sigma > 0:
            raise InvalidConfig("noise_sigma must be positive")
        if self.signal_strength < 0 or self.genre_offset_scale < 0:
            raise InvalidConfig("signal_strength and genre_offset_scale must be non-negative")
        concept_names = {c.name for c in self.concepts}
        for p in self.plant:
            if p.genre not in names:
                raise InvalidConfig(f"plant refers to unknown genre {p.genre!r}")
            if p.concept not in concept_names:
                raise InvalidConfig(f"plant refers to unknown concept {p.concept!r}")
        for seed in (self.genre_offsets_seed, self.master_seed,
                     *(c.direction_seed for c in self.concepts)):
            if not 0 <= seed < 2**64:
                raise InvalidConfig("seeds must be 64-bit unsigned integers")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        try:
            genres = d.get("genres", cls.genres)
            if isinstance(genres, dict):
                genres = list(genres.items())
            concepts = tuple(
                SynthConcept(**c) if isinstance(c, dict) else SynthConcept(*c)
                for c in d.get("concepts", [{"attribute": "gender", "positive_value": "female",
                                              "direction_seed": 1}])
            )
            plant = tuple(Plant(**p) if isinstance(p, dict) else Plant(*p)
                          for p in d.get("plant", []))
            known = {"dimension", "genres", "concepts", "genre_offsets_seed", "noise_sigma",
                     "plant", "master_seed", "signal_strength", "genre_offset_scale"}
            unknown = set(d) - known
            if unknown:
                raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
            cfg = cls(
                dimension=int(d.get("dimension", 64)),
                genres=tuple((str(g), int(c)) for g, c in genres),
                concepts=concepts,
                genre_offsets_seed=int(d.get("genre_offsets_seed", 0)),
                noise_sigma=float(d.get("noise_sigma", 1.0)),
                plant=plant,
                master_seed=int(d.get("master_seed", 0)),
                signal_strength=float(d.get("signal_strength", 2.0)),
                genre_offset_scale=float(d.get("genre_offset_scale", 0.1)),
            )
        except InvalidConfig:
            raise
        except (TypeError, ValueError, AttributeError) as exc:
            raise InvalidConfig(f"invalid synth config: {exc}") from exc
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "genres": [[g, c] for g, c in self.genres],
            "concepts": [c.__dict__.copy() for c in self.concepts],
            "genre_offsets_seed": self.genre_offsets_seed,
            "noise_sigma": self.noise_sigma,
            "plant": [p.__dict__.copy() for p in self.plant],
            "master_seed": self.master_seed,
            "signal_strength": self.signal_strength,
            "genre_offset_scale": self.genre_offset_scale,
        }


@dataclass(frozen=True, eq=False)
class GroundTruth:
    directions: dict[str, np.ndarray]
    genre_offsets: dict[str, np.ndarray]
    planted: tuple[Plant, ...] = ()
    signal_strength: float = 2.0
    noise_sigma: float = 1.0
    meta: dict = field(default_factory=dict)

    def planted_sign(self, genre: str, concept: str) -> int:
        """+1 / -1 for a net positive / negative plant, 0 when unplanted."""
        s = sum(p.strength for p in self.planted if p.genre == genre and p.concept == concept)
        return int(np.sign(s))

    def to_dict(self) -> dict:
        return {
            "directions": {k: [float(x) for x in v] for k, v in self.directions.items()},
            "genre_offsets": {k: [float(x) for x in v] for k, v in self.genre_offsets.items()},
            "planted": [p.__dict__.copy() for p in self.planted],
            "signal_strength": self.signal_strength,
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        try:
            return cls(
                directions={k: np.asarray(v, dtype=np.float64) for k, v in d["directions"].items()},
                genre_offsets={k: np.asarray(v, dtype=np.float64)
                               for k, v in d["genre_offsets"].items()},
                planted=tuple(Plant(**p) for p in d.get("planted", [])),
                signal_strength=float(d.get("signal_strength", 2.0)),
                noise_sigma=float(d.get("noise_sigma", 1.0)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise MalformedFile(f"invalid ground-truth document: {exc}") from exc


def _rng(*words: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(words)))


def _orthonormalize(vectors: list[np.ndarray]) -> list[np.ndarray]:
    basis: list[np.ndarray] = []
    for v in vectors:
        u = v.copy()
        for _ in range(2):  # second pass removes rounding residue
            for e in basis:
                u -= (u @ e) * e
        norm = np.linalg.norm(u)
        if norm == 0.0:
            raise InvalidConfig("concept directions are linearly dependent")
        basis.append(u / norm)
    return basis


def concept_directions(config: SynthConfig) -> dict[str, np.ndarray]:
    raw = [_rng(0xD1, c.direction_seed, i).standard_normal(config.dimension)
           for i, c in enumerate(config.concepts)]
    return {c.name: d for c, d in zip(config.concepts, _orthonormalize(raw))}


def generate(config: SynthConfig) -> tuple[Dataset, GroundTruth]:
    """Sample a dataset whose concept geometry is known exactly."""
    config.validate()
    d = config.dimension
    dirs = concept_directions(config)
    basis = np.array(list(dirs.values()))

    offsets = {}
    for g, _ in config.genres:
        mu = _rng(0x6E, config.genre_offsets_seed, stable_hash(g)).standard_normal(d)
        mu -= basis.T @ (basis @ mu)
        offsets[g] = config.genre_offset_scale * mu

    beta = config.signal_strength
    ids, rows, genres = [], [], []
    attrs: dict[str, list[str | None]] = {"gender": [], "language": []}
    for g, count in config.genres:
        rng = _rng(0x4E, config.master_seed, stable_hash(g))
        n = 2 * count
        labels = {}
        for i, c in enumerate(config.concepts):
            lab = np.repeat([1, 0], count)
            if i > 0:
                lab = lab[rng.permutation(n)]
            labels[c.name] = lab
        shift = np.zeros(d)
        for p in config.plant:
            if p.genre == g:
                shift += p.strength * dirs[p.concept]
        X = offsets[g] + shift + config.noise_sigma * rng.standard_normal((n, d))
        for c in config.concepts:
            X += np.outer(2.0 * labels[c.name] - 1.0, beta * dirs[c.name])
        for j in range(n):
            ids.append(f"{g}-{j:05d}")
            genres.append(g)
        rows.append(X)
        for attr in attrs:
            concept = next((c for c in config.concepts if c.attribute == attr), None)
            if concept is None:
                attrs[attr] += [None] * n
            else:
                attrs[attr] += [concept.positive_value if y else concept.negative_value
                                for y in labels[concept.name]]

    ds = Dataset.from_arrays(ids, np.vstack(rows), genres, attrs["gender"], attrs["language"])
    truth = GroundTruth(dirs, offsets, config.plant, beta, config.noise_sigma)
    return ds, truth


def recovery_error(cav, truth: GroundTruth, concept: str) -> float:
    """``1 - |cos(w, d_c)|``: 0 for perfect alignment, 1 for orthogonal."""
    direction = truth.directions[concept]
    w = np.asarray(cav.w, dtype=np.float64)
    if w.shape != direction.shape:
        raise DimensionMismatch("CAV and ground truth differ in dimension")
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise ZeroVector("CAV weight vector is zero")
    return float(1.0 - abs(w @ direction) / (norm * np.linalg.norm(direction)))


def load_config(path) -> SynthConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(doc, dict):
        raise InvalidConfig("synth config must be a JSON object")
    return SynthConfig.from_dict(doc)

"""Post-hoc debiasing by mixing concept vectors.

A base CAV (for instance a genre direction) is interpolated toward, or away
from, a demographic concept CAV:

    add:       (1 - lam) * base + lam * concept
    subtract:  (1 - lam) * base - lam * concept

The same rule is applied to the intercepts. Tracks are then ranked by their
projection on the adjusted vector and the share of one demographic group
among the top-ranked fraction is tracked as ``lam`` grows.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, EmbeddingRecord
from .errors import (
    DimensionMismatch,
    EmptySampleList,
    IoFailure,
    LambdaOutOfRange,
    MissingAttribute,
    UnknownId,
)
from .probe import Cav


class Mode(str, enum.Enum):
    ADD = "add_concept"
    SUBTRACT = "subtract_concept"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        aliases = {"add": cls.ADD, "subtract": cls.SUBTRACT}
        if text in aliases:
            return aliases[text]
        return cls(text)


@dataclass(frozen=True, eq=False)
class AdjustedCav:
    base: Cav
    adjustment: Cav
    lam: float
    mode: Mode
    w: np.ndarray
    b: float

    # aliases matching the field names used in reports
    @property
    def w_adj(self) -> np.ndarray:
        return self.w

    @property
    def b_adj(self) -> float:
        return self.b


@dataclass(frozen=True)
class DebiasCurve:
    lambdas: tuple[float, ...]
    ratios: tuple[float, ...]
    top_fraction: float
    attribute_value_tracked: str
    mode: str = Mode.ADD.value

    def __post_init__(self):
        if len(self.lambdas) != len(self.ratios):
            raise ValueError("lambdas and ratios differ in length")
        if any(b <= a for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise ValueError("lambdas must be strictly increasing")

    def to_dict(self) -> dict:
        return {
            "lambdas": list(self.lambdas),
            "ratios": list(self.ratios),
            "top_fraction": self.top_fraction,
            "attribute_value_tracked": self.attribute_value_tracked,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DebiasCurve":
        return cls(tuple(d["lambdas"]), tuple(d["ratios"]), d["top_fraction"],
                   d["attribute_value_tracked"], d.get("mode", Mode.ADD.value))

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["lambda", "ratio"])
        for lam, ratio in zip(self.lambdas, self.ratios):
            writer.writerow([repr(float(lam)), repr(float(ratio))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        try:
            Path(path).write_text(self.to_csv())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc


def adjust(base: Cav, adjustment: Cav, lam: float, mode: Mode | str = Mode.ADD,
           normalize: bool = False) -> AdjustedCav:
    """Interpolate ``base`` toward (add) or away from (subtract) ``adjustment``.

    With ``normalize`` both weight vectors are scaled to unit norm first (and
    their intercepts by the same factors); off by default.
    """
    mode = Mode.parse(mode) if isinstance(mode, str) else mode
    if not 0.0 <= lam <= 1.0 or math.isnan(lam):
        raise LambdaOutOfRange(f"lambda must lie in [0, 1], got {lam}")
    wb = np.asarray(base.w, dtype=np.float64)
    wa = np.asarray(adjustment.w, dtype=np.float64)
    if wb.shape != wa.shape:
        raise DimensionMismatch(f"base has dimension {wb.shape[0]}, adjustment {wa.shape[0]}")
    bb, ba = float(base.b), float(adjustment.b)
    if normalize:
        nb, na = np.linalg.norm(wb), np.linalg.norm(wa)
        if nb > 0:
            wb, bb = wb / nb, bb / nb
        if na > 0:
            wa, ba = wa / na, ba / na

    sign = 1.0 if mode is Mode.ADD else -1.0
    if lam == 0.0:
        w, b = wb.copy(), bb
    elif lam == 1.0:
        w, b = sign * wa, sign * ba
    else:
        w = (1.0 - lam) * wb + sign * lam * wa
        b = (1.0 - lam) * bb + sign * lam * ba
    return AdjustedCav(base, adjustment, float(lam), mode, w, float(b))


def rank(cav, pool: Sequence[EmbeddingRecord]) -> list[str]:
    """Ids by descending projection; ties go to the smaller id."""
    pool = list(pool)
    if not pool:
        raise EmptySampleList("cannot rank an empty pool")
    w = np.asarray(cav.w, dtype=np.float64)
    X = np.array([r.vector for r in pool], dtype=np.float64)
    if X.shape[1] != w.shape[0]:
        raise DimensionMismatch(f"pool has dimension {X.shape[1]}, CAV has {w.shape[0]}")
    proj = X @ w + float(cav.b)
    order = sorted(range(len(pool)), key=lambda i: (-proj[i], pool[i].id))
    return [pool[i].id for i in order]


def top_count(n: int, top_fraction: float) -> int:
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError("top_fraction must lie in (0, 1]")
    # guard against 0.3 * 10 == 3.0000000000000004
    return max(1, math.ceil(top_fraction * n - 1e-9))


def demographic_ratio(ranking: Sequence[str], metadata: Dataset, attribute: str, value: str,
                      top_fraction: float = 0.5) -> float:
    """Share of ``attribute == value`` among the top ``ceil(top_fraction * N)`` ids."""
    if not ranking:
        raise EmptySampleList("empty ranking")
    values = []
    for rid in ranking:
        if rid not in metadata:
            raise UnknownId(f"unknown id {rid!r}")
        v = metadata.get(rid).attribute(attribute)
        if v is None:
            raise MissingAttribute(f"record {rid!r} has no {attribute}")
        values.append(v)
    k = top_count(len(ranking), top_fraction)
    return sum(v == value for v in values[:k]) / k


def parse_lambdas(text: str) -> list[float]:
    """``start:stop:step`` (inclusive of stop) or a comma list."""
    if ":" in text:
        start, stop, step = (float(t) for t in text.split(":"))
        if step <= 0:
            raise ValueError("lambda step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9))
        return [round(start + i * step, 12) for i in range(n + 1)]
    return [float(t) for t in text.split(",") if t.strip()]


def sweep(base: Cav, adjustment: Cav, mode: Mode | str, pool: Sequence[EmbeddingRecord],
          lambdas: Sequence[float], attribute: str, value: str, top_fraction: float = 0.5,
          metadata: Dataset | None = None, normalize: bool = False) -> DebiasCurve:
    """Demographic ratio in the top-ranked fraction at each lambda."""
    mode = Mode.parse(mode) if isinstance(mode, str) else mode
    pool = list(pool)
    if metadata is None:
        metadata = Dataset(pool)
    ratios = []
    for lam in lambdas:
        adjusted = adjust(base, adjustment, lam, mode, normalize)
        ratios.append(demographic_ratio(rank(adjusted, pool), metadata, attribute, value,
                                        top_fraction))
    return DebiasCurve(tuple(float(x) for x in lambdas), tuple(ratios), top_fraction,
                       f"{attribute}={value}", mode.value)

"""Concept projections, TCAV scores and the replicate protocol.

The projection of an embedding on a CAV is the logit ``w . x + b`` (no
sigmoid). A TCAV score is the fraction of a pool with a strictly positive
projection. The protocol trains many CAVs on small balanced subsets of the
training side, scores every genre's balanced test pool with each reliable
one, and tests the per-genre score distributions against 0.5.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import stats
from .data import Dataset
from .errors import (
    AllReplicatesUnreliable,
    DimensionMismatch,
    EmptySampleList,
    ZeroVariance,
)
from .probe import Cav, Reliability, TrainerConfig, accuracy_arrays, fit_arrays, reliability_gate
from .sampler import ConceptSplit, subsample_for_replicate

logger = logging.getLogger(__name__)

NULL_SCORE = 0.5


class Direction(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NULL = "null"


@dataclass(frozen=True)
class ProtocolConfig:
    replicates: int = 500
    fraction: float = 0.25
    alpha: float = 0.05
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    threads: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be positive")

    def to_dict(self) -> dict:
        # threads is an execution detail and never changes results
        return {
            "replicates": self.replicates,
            "fraction": self.fraction,
            "alpha": self.alpha,
            "trainer": self.trainer.to_dict(),
        }


@dataclass(frozen=True)
class TcavResult:
    concept_name: str
    genre: str
    scores: tuple[float, ...]
    n_reliable: int
    n_replicates: int
    mean: float | None
    std: float | None
    ci_low: float | None
    ci_high: float | None
    t_statistic: float | None
    p_raw: float | None
    p_bonferroni: float | None
    significant: bool
    direction: Direction
    m: int
    alpha: float
    degenerate: bool = False
    ci_out_of_bounds: bool = False
    test_pool_size: int = 0

    @property
    def n_unreliable(self) -> int:
        return self.n_replicates - self.n_reliable

    def to_dict(self) -> dict:
        return {
            "concept": self.concept_name,
            "genre": self.genre,
            "n_replicates": self.n_replicates,
            "n_reliable": self.n_reliable,
            "test_pool_size": self.test_pool_size,
            "mean": self.mean,
            "std": self.std,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "t": self.t_statistic,
            "p_raw": self.p_raw,
            "p_bonferroni": self.p_bonferroni,
            "significant": self.significant,
            "direction": self.direction.value,
            "m": self.m,
            "alpha": self.alpha,
            "degenerate": self.degenerate,
            "ci_out_of_bounds": self.ci_out_of_bounds,
            "scores": list(self.scores),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TcavResult":
        return cls(
            concept_name=d["concept"],
            genre=d["genre"],
            scores=tuple(float(s) for s in d["scores"]),
            n_reliable=int(d["n_reliable"]),
            n_replicates=int(d["n_replicates"]),
            mean=d["mean"],
            std=d["std"],
            ci_low=d["ci_low"],
            ci_high=d["ci_high"],
            t_statistic=d["t"],
            p_raw=d["p_raw"],
            p_bonferroni=d["p_bonferroni"],
            significant=bool(d["significant"]),
            direction=Direction(d["direction"]),
            m=int(d["m"]),
            alpha=float(d["alpha"]),
            degenerate=bool(d.get("degenerate", False)),
            ci_out_of_bounds=bool(d.get("ci_out_of_bounds", False)),
            test_pool_size=int(d.get("test_pool_size", 0)),
        )


def _weights(cav):
    return np.asarray(cav.w, dtype=np.float64), float(cav.b)


def projections(cav, X) -> np.ndarray:
    """Projections of every row of ``X``."""
    w, b = _weights(cav)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[-1] != w.shape[0]:
        raise DimensionMismatch(f"vectors have dimension {X.shape[-1]}, CAV has {w.shape[0]}")
    return X @ w + b


def project(cav, x) -> float:
    """``w . x + b`` for a single vector."""
    w, b = _weights(cav)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != w.shape:
        raise DimensionMismatch(f"vector has shape {x.shape}, CAV has dimension {w.shape[0]}")
    return float(x @ w + b)


def tcav_score(cav, xs) -> float:
    X = np.asarray(xs, dtype=np.float64)
    if X.size == 0 or (X.ndim == 2 and X.shape[0] == 0):
        raise EmptySampleList("TCAV score needs at least one vector")
    return float(np.mean(projections(cav, X) > 0.0))


@dataclass(frozen=True, eq=False)
class ReplicateOutcome:
    index: int
    cav: Cav
    reliable: bool
    scores: dict[str, float]


def run_replicate(ds: Dataset, split: ConceptSplit, genres: Sequence[str],
                  config: ProtocolConfig, index: int,
                  test_X: np.ndarray | None = None, test_y: np.ndarray | None = None,
                  pools: dict | None = None) -> ReplicateOutcome:
    """Train, gate and score one replicate CAV. Depends only on ``index``."""
    subset = subsample_for_replicate(split, config.fraction, index)
    X = ds.rows([rid for rid, _ in subset])
    y = np.array([lbl for _, lbl in subset], dtype=np.float64)
    cav = fit_arrays(X, y, config.trainer, concept_name=split.concept.name,
                     replicate_index=index, seed=split.concept.seed)
    if test_X is None:
        test_X = ds.rows(split.test_ids())
        test_y = np.array([lbl for _, lbl in split.test])
    cav = cav.with_test_accuracy(accuracy_arrays(cav, test_X, test_y))
    reliable = reliability_gate(cav, config.trainer) is Reliability.RELIABLE
    scores = {}
    if reliable:
        for g in genres:
            pool = pools[g] if pools is not None else ds.rows([r for r, _ in split.test_pool(g)])
            scores[g] = tcav_score(cav, pool)
    return ReplicateOutcome(index, cav, reliable, scores)


def summarize(concept_name: str, genre: str, scores: Sequence[float], n_replicates: int,
              m: int, alpha: float, test_pool_size: int = 0) -> TcavResult:
    """Turn one genre's replicate scores into a tested result."""
    scores = tuple(float(s) for s in scores)
    n = len(scores)
    base = dict(concept_name=concept_name, genre=genre, scores=scores, n_reliable=n,
                n_replicates=n_replicates, m=m, alpha=alpha, test_pool_size=test_pool_size)
    if n < 2:
        mean = scores[0] if n == 1 else None
        return TcavResult(mean=mean, std=None, ci_low=None, ci_high=None, t_statistic=None,
                          p_raw=None, p_bonferroni=None, significant=False,
                          direction=Direction.NULL, **base)
    outcome = stats.one_sample_t_test(scores, NULL_SCORE)
    degenerate = outcome.degenerate
    try:
        lo, hi = stats.corrected_ci(scores, alpha, m)
    except ZeroVariance:
        lo = hi = outcome.mean
        degenerate = True
    p_b = stats.bonferroni(outcome.p_two_sided, m)
    significant = p_b < alpha
    if significant and outcome.mean > NULL_SCORE:
        direction = Direction.POSITIVE
    elif significant and outcome.mean < NULL_SCORE:
        direction = Direction.NEGATIVE
    else:
        direction = Direction.NULL
    return TcavResult(
        mean=outcome.mean, std=outcome.std, ci_low=lo, ci_high=hi,
        t_statistic=outcome.t_statistic, p_raw=outcome.p_two_sided, p_bonferroni=p_b,
        significant=significant, direction=direction, degenerate=degenerate,
        ci_out_of_bounds=bool(lo < 0.0 or hi > 1.0), **base,
    )


@dataclass(frozen=True, eq=False)
class ProtocolRun:
    """All replicate outcomes of one concept plus per-genre results."""
    concept_name: str
    genres: tuple[str, ...]
    results: tuple[TcavResult, ...]
    replicates: tuple[ReplicateOutcome, ...]

    @property
    def n_unreliable(self) -> int:
        return sum(not r.reliable for r in self.replicates)

    def score_matrix(self) -> list[list[float | None]]:
        """Rows = replicates, columns = genres; ``None`` for unreliable replicates."""
        return [[r.scores.get(g) for g in self.genres] for r in self.replicates]


def run_replicates(ds: Dataset, split: ConceptSplit, genres: Sequence[str],
                   config: ProtocolConfig) -> list[ReplicateOutcome]:
    genres = list(genres)
    for g in genres:
        if not split.test_pool(g):
            raise EmptySampleList(f"genre {g!r} has no test records for {split.concept.name}")
    test_X = ds.rows(split.test_ids())
    test_y = np.array([lbl for _, lbl in split.test])
    pools = {g: ds.rows([r for r, _ in split.test_pool(g)]) for g in genres}

    def one(index):
        return run_replicate(ds, split, genres, config, index, test_X, test_y, pools)

    if config.threads == 1:
        return [one(i) for i in range(config.replicates)]
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        return list(pool.map(one, range(config.replicates)))


def run_protocol_full(ds: Dataset, split: ConceptSplit, genres: Sequence[str],
                      config: ProtocolConfig = ProtocolConfig(),
                      m: int | None = None) -> ProtocolRun:
    """Run the replicate protocol and keep every replicate outcome."""
    genres = tuple(genres)
    if not genres:
        raise ValueError("no genres to score")
    m = len(genres) if m is None else m
    outcomes = run_replicates(ds, split, genres, config)
    reliable = [o for o in outcomes if o.reliable]
    if not reliable:
        raise AllReplicatesUnreliable(
            f"all {len(outcomes)} replicate CAVs for {split.concept.name} failed the "
            f"reliability gate (threshold {config.trainer.reliability_threshold})"
        )
    if len(reliable) < len(outcomes):
        logger.info("%s: %d of %d replicates unreliable", split.concept.name,
                    len(outcomes) - len(reliable), len(outcomes))
    results = tuple(
        summarize(split.concept.name, g, [o.scores[g] for o in reliable], len(outcomes), m,
                  config.alpha, test_pool_size=len(split.test_pool(g)))
        for g in genres
    )
    return ProtocolRun(split.concept.name, genres, results, tuple(outcomes))


def run_protocol(ds: Dataset, split: ConceptSplit, genres: Sequence[str],
                 config: ProtocolConfig = ProtocolConfig(),
                 m: int | None = None) -> list[TcavResult]:
    """Per-genre TCAV results for one concept.

    ``m`` is the Bonferroni family size; it defaults to the number of genres
    and should be ``n_concepts * n_genres`` when several concepts are tested
    in one analysis.
    """
    return list(run_protocol_full(ds, split, genres, config, m).results)


def family_size(n_concepts: int, n_genres: int) -> int:
    return max(1, n_concepts * n_genres)


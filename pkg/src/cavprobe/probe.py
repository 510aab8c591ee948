"""Logistic-regression concept probes.

A probe is fit by minimizing

    mean_i [ log(1 + exp(z_i)) - y_i z_i ] + l2_lambda / (2 n) * ||w||^2,
    z_i = w . x_i + b,

with a damped Newton iteration. The intercept is never penalized. The fitted
normal vector ``w`` (with its intercept ``b``) is the concept activation
vector.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySampleList,
    IoFailure,
    MalformedFile,
    NonFiniteLoss,
    SingleClassInput,
)

logger = logging.getLogger(__name__)

_ARMIJO_C = 1e-4
_MIN_STEP = 2.0 ** -40


class Reliability(str, enum.Enum):
    RELIABLE = "reliable"
    UNRELIABLE = "unreliable"


@dataclass(frozen=True)
class TrainerConfig:
    l2_lambda: float = 1.0
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-7
    step_rule: str = "backtracking"
    reliability_threshold: float = 0.65
    standardize: bool = False

    def __post_init__(self):
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError("step_rule must be 'fixed' or 'backtracking'")
        if not 0.5 < self.reliability_threshold <= 1.0:
            raise ValueError("reliability_threshold must lie in (0.5, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Cav:
    concept_name: str
    w: np.ndarray
    b: float
    train_accuracy: float
    test_accuracy: float | None = None
    replicate_index: int | None = None
    trainer_config: TrainerConfig = field(default_factory=TrainerConfig)
    converged: bool = True
    iterations: int = 0
    seed: int | None = None

    @property
    def dimension(self) -> int:
        return int(self.w.shape[0])

    def with_test_accuracy(self, acc: float) -> "Cav":
        return replace(self, test_accuracy=float(acc))

    def to_dict(self) -> dict:
        return {
            "concept": self.concept_name,
            "dim": self.dimension,
            "w": [float(v) for v in self.w],
            "b": float(self.b),
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "converged": self.converged,
            "iterations": self.iterations,
            "config": self.trainer_config.to_dict(),
            "seed": self.seed,
            "replicate_index": self.replicate_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Cav":
        try:
            w = np.asarray(d["w"], dtype=np.float64)
            if w.ndim != 1 or w.shape[0] != int(d["dim"]):
                raise DimensionMismatch("CAV 'w' length does not match 'dim'")
            return cls(
                concept_name=str(d["concept"]),
                w=w,
                b=float(d["b"]),
                train_accuracy=float(d["train_accuracy"]),
                test_accuracy=None if d.get("test_accuracy") is None else float(d["test_accuracy"]),
                replicate_index=d.get("replicate_index"),
                trainer_config=TrainerConfig.from_dict(d.get("config") or {}),
                converged=bool(d.get("converged", True)),
                iterations=int(d.get("iterations", 0)),
                seed=d.get("seed"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DimensionMismatch):
                raise
            raise MalformedFile(f"invalid CAV document: {exc}") from exc


def save_cav(cav: Cav, path) -> None:
    try:
        Path(path).write_text(json.dumps(cav.to_dict(), indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_cav(path) -> Cav:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(doc, dict):
        raise MalformedFile("CAV file must hold a JSON object", path)
    return Cav.from_dict(doc)


# ---------------------------------------------------------------------------
# objective

def sigmoid(z):
    """Logistic function; ``sigmoid(0) == 0.5`` exactly."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def loss(w, b, X, y, l2_lambda: float) -> float:
    """Regularized mean negative log-likelihood."""
    n = X.shape[0]
    z = X @ w + b
    nll = np.mean(np.logaddexp(0.0, z) - y * z)
    return float(nll + 0.5 * l2_lambda / n * np.dot(w, w))


def gradient(w, b, X, y, l2_lambda: float) -> tuple[np.ndarray, float]:
    n = X.shape[0]
    r = sigmoid(X @ w + b) - y
    gw = X.T @ r / n + l2_lambda / n * w
    gb = float(np.mean(r))
    return gw, gb


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    samples = list(samples)
    if not samples:
        raise EmptySampleList("no samples")
    dims = {np.shape(v)[0] if np.ndim(v) == 1 else -1 for v, _ in samples}
    if len(dims) != 1 or -1 in dims:
        raise DimensionMismatch("samples do not share one vector dimension")
    X = np.array([np.asarray(v, dtype=np.float64) for v, _ in samples])
    y = np.array([float(lbl) for _, lbl in samples])
    return X, y


def _check_training_arrays(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("X must be a 2-D array")
    if X.shape[0] == 0:
        raise EmptySampleList("no samples")
    if y.shape != (X.shape[0],):
        raise DimensionMismatch("y must have one label per row of X")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise SingleClassInput("training samples contain only one class")
    return X, y


@dataclass
class FitTrace:
    """Per-iteration record of accepted steps (losses include the start point)."""
    losses: list[float] = field(default_factory=list)
    gradient_norms: list[float] = field(default_factory=list)


def fit_arrays(X, y, config: TrainerConfig = TrainerConfig(), *, concept_name: str = "",
               init: tuple[np.ndarray, float] | None = None,
               replicate_index: int | None = None, seed: int | None = None,
               trace: FitTrace | None = None) -> Cav:
    """Fit a probe on an ``(n, d)`` matrix and 0/1 labels."""
    X, y = _check_training_arrays(X, y)
    n, d = X.shape

    if config.standardize:
        mu = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0.0] = 1.0
        Z = (X - mu) / scale
    else:
        Z = X

    if init is None:
        w = np.zeros(d)
        b = 0.0
    else:
        w = np.array(init[0], dtype=np.float64)
        b = float(init[1])
        if w.shape != (d,):
            raise DimensionMismatch("initial w has the wrong dimension")
        if config.standardize:
            b = b + float(w @ mu)
            w = w * scale

    lam = config.l2_lambda
    reg = lam / n
    f = loss(w, b, Z, y, lam)
    if not np.isfinite(f):
        raise NonFiniteLoss("initial loss is not finite")
    gw, gb = gradient(w, b, Z, y, lam)
    gnorm = max(float(np.max(np.abs(gw))), abs(gb))
    if trace is not None:
        trace.losses.append(f)
        trace.gradient_norms.append(gnorm)

    converged = gnorm <= config.gradient_tolerance
    iterations = 0
    A = np.hstack([Z, np.ones((n, 1))])
    ridge = np.full(d + 1, reg)
    ridge[-1] = 0.0
    while not converged and iterations < config.max_iterations:
        iterations += 1
        p = sigmoid(Z @ w + b)
        s = p * (1.0 - p)
        H = (A.T * s) @ A / n
        H[np.diag_indices_from(H)] += ridge
        g = np.append(gw, gb)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = float(g @ step)
        if not slope < 0.0:
            # Hessian numerically singular; fall back to steepest descent
            step = -g
            slope = -float(g @ g)

        t = 1.0
        if config.step_rule == "backtracking":
            while True:
                w_new = w + t * step[:-1]
                b_new = b + t * step[-1]
                f_new = loss(w_new, b_new, Z, y, lam)
                if np.isfinite(f_new) and (
                    f_new <= f + _ARMIJO_C * t * slope
                    # decrease below rounding noise near the optimum
                    or (f_new <= f and -slope < 1e-14 * max(1.0, abs(f)))
                ):
                    break
                t *= 0.5
                if t < _MIN_STEP:
                    w_new, b_new, f_new = w, b, f
                    break
            if t < _MIN_STEP:
                # no further decrease representable in floating point
                break
        else:
            w_new = w + step[:-1]
            b_new = b + step[-1]
            f_new = loss(w_new, b_new, Z, y, lam)
        if not np.isfinite(f_new) or not np.all(np.isfinite(w_new)):
            raise NonFiniteLoss(f"loss diverged at iteration {iterations}")

        w, b, f = w_new, float(b_new), f_new
        gw, gb = gradient(w, b, Z, y, lam)
        gnorm = max(float(np.max(np.abs(gw))), abs(gb))
        if trace is not None:
            trace.losses.append(f)
            trace.gradient_norms.append(gnorm)
        converged = gnorm <= config.gradient_tolerance

    if not converged:
        logger.warning("probe %r did not converge in %d iterations (|grad|=%.3g)",
                       concept_name, iterations, gnorm)

    if config.standardize:
        w = w / scale
        b = b - float(w @ mu)

    if not np.any(w != 0.0):
        logger.warning("probe %r has an all-zero weight vector", concept_name)

    train_acc = float(np.mean((X @ w + b > 0.0) == (y == 1.0)))
    return Cav(
        concept_name=concept_name,
        w=w,
        b=float(b),
        train_accuracy=train_acc,
        replicate_index=replicate_index,
        trainer_config=config,
        converged=bool(converged),
        iterations=iterations,
        seed=seed,
    )


def fit(samples: Sequence[tuple[Sequence[float], int]], config: TrainerConfig = TrainerConfig(),
        **kwargs) -> Cav:
    """Fit a probe on ``(vector, label)`` pairs; see :func:`fit_arrays`."""
    X, y = _as_arrays(samples)
    return fit_arrays(X, y, config, **kwargs)


def _check_eval(cav, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptySampleList("no samples to evaluate")
    if X.shape[1] != cav.w.shape[0]:
        raise DimensionMismatch(f"samples have dimension {X.shape[1]}, CAV has {cav.w.shape[0]}")
    return X


def accuracy_arrays(cav: Cav, X, y) -> float:
    X = _check_eval(cav, X)
    y = np.asarray(y)
    return float(np.mean((X @ cav.w + cav.b > 0.0) == (y == 1)))


def evaluate_accuracy(cav: Cav, samples) -> float:
    """Fraction of ``(vector, label)`` pairs classified correctly at p = 0.5."""
    samples = list(samples)
    if not samples:
        raise EmptySampleList("no samples to evaluate")
    X, y = _as_arrays(samples)
    return accuracy_arrays(cav, X, y)


def reliability_gate(cav: Cav, config: TrainerConfig) -> Reliability:
    if cav.test_accuracy is None:
        raise ValueError("CAV has no test accuracy")
    if cav.test_accuracy >= config.reliability_threshold:
        return Reliability.RELIABLE
    return Reliability.UNRELIABLE

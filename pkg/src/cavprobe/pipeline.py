"""End-to-end workflows used by the command line: multi-concept audits and
the synthetic self-test."""

from __future__ import annotations

import datetime as _dt
import logging
from dataclasses import replace
from typing import Sequence

import numpy as np

from . import __version__
from .data import Dataset
from .debias import sweep, top_count
from .errors import AllReplicatesUnreliable
from .probe import Cav, accuracy_arrays, fit_arrays
from .report import AuditReport
from .sampler import ConceptSpec, ConceptSplit, build_split
from .synth import Plant, SynthConcept, SynthConfig, generate, recovery_error
from .tcav import ProtocolConfig, ProtocolRun, run_protocol_full

logger = logging.getLogger(__name__)


def timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()


def concepts_all(ds: Dataset, min_support: int = 50, cell_cap: int = 50,
                 seed: int = 42) -> list[ConceptSpec]:
    """One concept per gender/language value with at least ``min_support`` positives."""
    out = []
    for attr in ("gender", "language"):
        counts: dict[str, int] = {}
        for rec in ds.records:
            v = rec.attribute(attr)
            if v is not None:
                counts[v] = counts.get(v, 0) + 1
        for value in sorted(counts, key=lambda v: (-counts[v], v)):
            if counts[value] >= min_support:
                out.append(ConceptSpec(attr, value, cell_cap=cell_cap, seed=seed))
    return out


def train_full(ds: Dataset, split: ConceptSplit, config: ProtocolConfig) -> Cav:
    """Fit one CAV on the whole training side and score it on the test side."""
    X = ds.rows(split.train_ids())
    y = np.array([lbl for _, lbl in split.train], dtype=np.float64)
    cav = fit_arrays(X, y, config.trainer, concept_name=split.concept.name,
                     seed=split.concept.seed)
    if split.test:
        tX = ds.rows(split.test_ids())
        ty = np.array([lbl for _, lbl in split.test])
        cav = cav.with_test_accuracy(accuracy_arrays(cav, tX, ty))
    return cav


def audit(ds: Dataset, splits: Sequence[ConceptSplit], genres: Sequence[str] | None,
          config: ProtocolConfig, *, seed: int, echo: dict | None = None,
          with_timestamp: bool = True) -> tuple[AuditReport, list[ProtocolRun]]:
    """Run the replicate protocol for every split under one Bonferroni family.

    ``genres=None`` scores every genre with a test pool, per concept. The
    family size is the total number of (concept, genre) tests.
    """
    plan = []
    for split in splits:
        gs = list(split.genres) if genres is None else [g for g in genres if split.test_pool(g)]
        if genres is not None and len(gs) < len(genres):
            missing = sorted(set(genres) - set(gs))
            logger.warning("%s: no test pool for %s; skipped", split.concept.name, missing)
        plan.append((split, gs))
    m = max(1, sum(len(gs) for _, gs in plan))

    report = AuditReport(run_metadata={
        "schema_version": 1,
        "tool_version": __version__,
        "seed": seed,
        "dataset_fingerprint": ds.fingerprint(),
        "timestamp": timestamp() if with_timestamp else None,
        "m": m,
        "alpha": config.alpha,
        "config": {**config.to_dict(), **(echo or {})},
        "concepts": [s.concept.to_dict() for s in splits],
    })
    runs = []
    for split, gs in plan:
        name = split.concept.name
        if not gs:
            report.failures[name] = "no genre has a test pool"
            continue
        try:
            run = run_protocol_full(ds, split, gs, config, m=m)
        except AllReplicatesUnreliable as exc:
            report.failures[name] = str(exc)
            report.attrition[name] = config.replicates
            continue
        runs.append(run)
        report.tcav.extend(run.results)
        report.attrition[name] = run.n_unreliable
        report.score_matrices[name] = {"genres": list(run.genres), "rows": run.score_matrix()}
    return report, runs


# ---------------------------------------------------------------------------
# self-test

SELFTEST_GENRES = ("hiphop", "jazz", "pop", "rock")
SELFTEST_PLANT = -8.0


def selftest_worlds(seed: int) -> tuple[SynthConfig, SynthConfig]:
    """A null world and a world where hip-hop leans toward male vocals."""
    genres = tuple((g, 100) for g in SELFTEST_GENRES)
    null = SynthConfig(dimension=64, genres=genres,
                       concepts=(SynthConcept("gender", "female", seed),),
                       genre_offsets_seed=seed, master_seed=seed)
    biased = replace(null, plant=(Plant("hiphop", "gender=female", SELFTEST_PLANT),))
    return null, biased


def _check(name: str, passed: bool, detail: str, gating: bool = True) -> dict:
    return {"name": name, "passed": bool(passed), "gating": gating, "detail": detail}


def selftest(seed: int = 7, threads: int = 1, replicates: int = 100,
             with_timestamp: bool = True) -> tuple[AuditReport, bool]:
    """Generate synthetic worlds, run the full pipeline, compare with ground truth.

    Returns the report and whether every gating check passed. Null-world
    calibration and the tight recovery bound are recorded as non-gating
    checks: the replicate t-test shares one test pool across replicates and
    is anti-conservative on noisy worlds, and the default probe recovers the
    concept direction only to about 0.1.
    """
    config = ProtocolConfig(replicates=replicates, threads=threads)
    null_cfg, biased_cfg = selftest_worlds(seed)
    checks = []

    # probe sanity on the null world
    null_ds, null_truth = generate(null_cfg)
    gender = ConceptSpec("gender", "female", seed=seed)
    null_split = build_split(null_ds, gender)
    cav = train_full(null_ds, null_split, config)
    err = recovery_error(cav, null_truth, "gender=female")
    # the weakly regularized default probe overfits the 63 noise directions,
    # so the tight bound is reported but only a loose one gates
    checks.append(_check("cav_recovery", err <= 0.2, f"recovery_error={err:.4f} (<= 0.2)"))
    checks.append(_check("cav_recovery_tight", err <= 0.05, f"recovery_error={err:.4f} (<= 0.05)",
                         gating=False))
    checks.append(_check("cav_accuracy", cav.test_accuracy >= 0.9,
                         f"test_accuracy={cav.test_accuracy:.4f} (>= 0.9)"))

    null_report, _ = audit(null_ds, [null_split], None, config, seed=seed,
                           with_timestamp=False)
    worst = max(abs(r.mean - 0.5) for r in null_report.tcav)
    n_sig = sum(r.significant for r in null_report.tcav)
    checks.append(_check("null_means", worst <= 0.1, f"max |mean - 0.5| = {worst:.4f} (<= 0.1)"))
    checks.append(_check("null_significance", n_sig == 0,
                         f"{n_sig} of {len(null_report.tcav)} null genres significant",
                         gating=False))

    # biased world: protocol plus debiasing sweep
    ds, truth = generate(biased_cfg)
    split = build_split(ds, gender)
    report, _ = audit(ds, [split], None, config, seed=seed, with_timestamp=with_timestamp,
                      echo={"selftest": {"null_world": null_cfg.to_dict(),
                                         "biased_world": biased_cfg.to_dict()}})
    by_genre = {r.genre: r for r in report.tcav}
    hh = by_genre["hiphop"]
    lowest = min(by_genre.values(), key=lambda r: r.mean).genre
    checks.append(_check(
        "planted_detected",
        hh.significant and hh.direction.value == "negative" and lowest == "hiphop",
        f"hiphop mean={hh.mean:.4f} significant={hh.significant} direction={hh.direction.value}",
    ))

    base_split = build_split(ds, ConceptSpec("genre", "hiphop", seed=seed, stratify_by="gender"))
    base = train_full(ds, base_split, config)
    female = train_full(ds, split, config)
    male_X = ds.rows(split.train_ids())
    male_y = 1.0 - np.array([lbl for _, lbl in split.train], dtype=np.float64)
    male = fit_arrays(male_X, male_y, config.trainer, concept_name="gender=male", seed=seed)
    pool = [ds.get(rid) for rid, lbl in base_split.test if lbl == 1]
    lambdas = [i / 20 for i in range(21)]
    add = sweep(base, female, "add", pool, lambdas, "gender", "male", 0.5, ds)
    sub = sweep(base, male, "subtract", pool, lambdas, "gender", "male", 0.5, ds)
    report.curves.extend([add, sub])
    r = add.ratios
    uptick = max([0.0] + [b - a for a, b in zip(r, r[1:])])
    # one record crossing the top-k boundary moves the ratio by 1/k
    one_record = 1.0 / top_count(len(pool), 0.5)
    gap = max(abs(a - b) for a, b in zip(add.ratios, sub.ratios))
    checks.append(_check("debias_start", r[0] >= 0.9, f"ratio(0)={r[0]:.3f} (>= 0.9)"))
    checks.append(_check("debias_end", r[-1] <= 0.55, f"ratio(1)={r[-1]:.3f} (<= 0.55)"))
    checks.append(_check("debias_monotone", uptick <= one_record + 1e-12,
                         f"largest increase {uptick:.3f} (<= one record, {one_record:.3f})"))
    checks.append(_check("debias_monotone_strict", uptick == 0.0,
                         f"largest increase {uptick:.3f} (== 0)", gating=False))
    checks.append(_check("debias_symmetry", gap <= 0.1, f"max |add - subtract| = {gap:.3f}"))

    report.checks = checks
    ok = all(c["passed"] for c in checks if c["gating"])
    return report, ok

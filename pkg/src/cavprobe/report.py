"""Audit reports: one JSON document plus plot-ready CSV tables.

JSON floats are written with ``repr`` (the shortest string that parses back
to the same double), so reading a report reproduces every number exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .debias import DebiasCurve
from .errors import IoFailure, MalformedFile
from .tcav import TcavResult

SCHEMA_VERSION = 1

TCAV_CSV_COLUMNS = ["genre", "mean", "std", "ci_low", "ci_high", "t", "p_raw",
                    "p_bonferroni", "significant", "direction", "n_reliable"]


@dataclass
class AuditReport:
    run_metadata: dict
    tcav: list[TcavResult] = field(default_factory=list)
    attrition: dict[str, int] = field(default_factory=dict)
    curves: list[DebiasCurve] = field(default_factory=list)
    # concept -> {"genres": [...], "rows": [[score or None, ...], ...]}
    score_matrices: dict[str, dict] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    checks: list[dict] = field(default_factory=list)

    @property
    def m(self) -> int:
        return int(self.run_metadata["m"])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "run_metadata": self.run_metadata,
            "tcav": [r.to_dict() for r in self.tcav],
            "attrition": dict(self.attrition),
            "failures": dict(self.failures),
            "curves": [c.to_dict() for c in self.curves],
            "score_matrices": self.score_matrices,
            "checks": self.checks,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditReport":
        try:
            if d.get("schema_version") != SCHEMA_VERSION:
                raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
            return cls(
                run_metadata=dict(d["run_metadata"]),
                tcav=[TcavResult.from_dict(r) for r in d["tcav"]],
                attrition={k: int(v) for k, v in d.get("attrition", {}).items()},
                curves=[DebiasCurve.from_dict(c) for c in d.get("curves", [])],
                score_matrices=dict(d.get("score_matrices", {})),
                failures=dict(d.get("failures", {})),
                checks=list(d.get("checks", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFile(f"invalid report document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True,
                          ensure_ascii=False, allow_nan=False) + "\n"


def _jsonable(obj):
    """Replace non-finite floats, which JSON cannot carry, by strings."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _restore(obj):
    if isinstance(obj, str) and obj in ("nan", "inf", "-inf"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    return obj


def parse_report(text: str) -> AuditReport:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"invalid JSON: {exc.msg}", None, exc.lineno) from None
    if not isinstance(doc, dict):
        raise MalformedFile("report must be a JSON object")
    doc["tcav"] = [_restore(r) for r in doc.get("tcav", [])]
    return AuditReport.from_dict(doc)


def load_report(path) -> AuditReport:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_report(text)


def safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "concept"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def tcav_table(results: Sequence[TcavResult]) -> str:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TCAV_CSV_COLUMNS)
    for r in results:
        writer.writerow([_cell(v) for v in (
            r.genre, r.mean, r.std, r.ci_low, r.ci_high, r.t_statistic, r.p_raw,
            r.p_bonferroni, r.significant, r.direction.value, r.n_reliable)])
    return buf.getvalue()


def score_table(matrix: dict) -> str:
    """Raw replicate scores: one row per replicate, one column per genre."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["replicate"] + list(matrix["genres"]))
    for i, row in enumerate(matrix["rows"]):
        writer.writerow([i] + [_cell(v) for v in row])
    return buf.getvalue()


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit(report: AuditReport, json_path=None, csv_dir=None) -> list[Path]:
    """Write the JSON report and, if ``csv_dir`` is given, the CSV tables."""
    written = []
    if json_path is not None:
        path = Path(json_path)
        _write_text(path, report.to_json())
        written.append(path)
    if csv_dir is not None:
        out = Path(csv_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create {out}: {exc}") from exc
        by_concept: dict[str, list[TcavResult]] = {}
        for r in report.tcav:
            by_concept.setdefault(r.concept_name, []).append(r)
        for concept, results in by_concept.items():
            path = out / f"tcav_{safe_name(concept)}.csv"
            _write_text(path, tcav_table(results))
            written.append(path)
        for concept, matrix in report.score_matrices.items():
            path = out / f"scores_{safe_name(concept)}.csv"
            _write_text(path, score_table(matrix))
            written.append(path)
        for i, curve in enumerate(report.curves):
            path = out / f"curve_{i}_{safe_name(curve.mode)}.csv"
            _write_text(path, curve.to_csv())
            written.append(path)
    return written


def check_tcav_csv(path, m: int, alpha: float) -> list[str]:
    """Recompute Bonferroni p-values and significance flags from ``p_raw``.

    Returns a list of human-readable inconsistencies (empty when the file is
    self-consistent).
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    problems = []
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != TCAV_CSV_COLUMNS:
        raise MalformedFile("unexpected TCAV CSV header", path, 1)
    for row in reader:
        genre = row["genre"]
        significant = row["significant"] == "true"
        if row["p_raw"] == "":
            if significant:
                problems.append(f"{genre}: flagged significant without a p-value")
            continue
        p_raw, p_b = float(row["p_raw"]), float(row["p_bonferroni"])
        expected = min(1.0, p_raw * m)
        if not math.isclose(p_b, expected, rel_tol=1e-12, abs_tol=1e-300):
            problems.append(f"{genre}: p_bonferroni {p_b} != min(1, {p_raw} * {m})")
        if significant != (expected < alpha):
            problems.append(f"{genre}: significance flag disagrees with p_raw and m")
        mean = float(row["mean"])
        direction = row["direction"]
        want = "null"
        if expected < alpha:
            want = "positive" if mean > 0.5 else "negative" if mean < 0.5 else "null"
        if direction != want:
            problems.append(f"{genre}: direction {direction!r}, expected {want!r}")
    return problems


def check_report(report: AuditReport) -> list[str]:
    """Internal consistency of a parsed report (m, p-values, flags, CIs)."""
    problems = []
    m, alpha = report.m, float(report.run_metadata["alpha"])
    for r in report.tcav:
        tag = f"{r.concept_name}/{r.genre}"
        if r.m != m:
            problems.append(f"{tag}: m={r.m} but run metadata says {m}")
        if r.p_raw is None:
            if r.significant:
                problems.append(f"{tag}: significant without a p-value")
            continue
        expected = min(1.0, r.p_raw * m)
        if not math.isclose(r.p_bonferroni, expected, rel_tol=1e-12, abs_tol=1e-300):
            problems.append(f"{tag}: p_bonferroni inconsistent with p_raw and m")
        if r.significant != (expected < alpha):
            problems.append(f"{tag}: significance flag inconsistent")
        if r.ci_low is not None and not r.ci_low <= r.mean <= r.ci_high:
            problems.append(f"{tag}: mean outside its confidence interval")
    return problems

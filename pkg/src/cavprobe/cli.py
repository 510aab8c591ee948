"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 when
``--strict`` escalates statistical-degeneracy warnings.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .data import FORMATS, Dataset, export_dataset, guess_format, ingest
from .debias import Mode, parse_lambdas, sweep
from .errors import CavprobeError, EmptySampleList, InvalidConfig, IoFailure, UnknownId
from .pipeline import audit, concepts_all, selftest
from .probe import TrainerConfig, accuracy_arrays, fit_arrays, load_cav, save_cav
from .report import AuditReport, check_report, check_tcav_csv, emit, load_report, safe_name, score_table
from .sampler import ConceptSpec, build_split, load_split, save_split
from .synth import SynthConfig, generate, load_config
from .tcav import ProtocolConfig

logger = logging.getLogger("cavprobe")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STRICT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get("CAVPROBE_SEED")
    if raw is None:
        return 42
    try:
        return _seed(raw)
    except argparse.ArgumentTypeError:
        logger.warning("ignoring invalid CAVPROBE_SEED=%r", raw)
        return 42


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _unit_interval(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return value


def _concept(text: str) -> str:
    attribute, sep, value = text.partition("=")
    if not sep or attribute.strip() not in ("gender", "language", "genre") or not value.strip():
        raise argparse.ArgumentTypeError(
            f"concept must look like gender=<v>, language=<v> or genre=<v>, got {text!r}")
    return text


def _lambdas(text: str) -> list[float]:
    try:
        values = parse_lambdas(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid lambda grid {text!r}: {exc}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty lambda grid")
    return values


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=_seed, default=_default_seed(),
                   help="master seed (default: $CAVPROBE_SEED or 42)")
    g.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker threads; never changes results (default: all CPUs)")
    g.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    return p


def _trainer_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("probe training")
    d = TrainerConfig()
    g.add_argument("--l2-lambda", type=float, default=d.l2_lambda,
                   help=f"L2 strength (default {d.l2_lambda})")
    g.add_argument("--max-iterations", type=_positive_int, default=d.max_iterations,
                   help=f"optimizer iteration cap (default {d.max_iterations})")
    g.add_argument("--gradient-tolerance", type=float, default=d.gradient_tolerance,
                   help=f"stop when the gradient norm falls below this (default {d.gradient_tolerance})")
    g.add_argument("--step-rule", choices=("backtracking", "fixed"), default=d.step_rule,
                   help="Newton step control (default backtracking)")
    g.add_argument("--reliability-threshold", type=float, default=d.reliability_threshold,
                   help=f"minimum test accuracy of a usable CAV (default {d.reliability_threshold})")
    g.add_argument("--standardize", action="store_true",
                   help="standardize inputs while fitting; weights are mapped back to raw space")
    return p


def _dataset_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--dataset", required=required, help="embedding file")
    p.add_argument("--meta", required=required, help="metadata CSV (id,genre,gender,language)")
    p.add_argument("--format", choices=FORMATS, default=None,
                   help="embedding format (default: from the file extension)")


def build_parser() -> argparse.ArgumentParser:
    common, trainer = _common(), _trainer_flags()
    parser = _Parser(prog="cavprobe",
                     description="Concept-activation-vector bias audits for embedding models.")
    parser.add_argument("--version", action="version", version=f"cavprobe {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic world")
    p.add_argument("--config", help="JSON world description (default: built-in world)")
    p.add_argument("--out-emb", required=True, help="embedding output path")
    p.add_argument("--out-meta", required=True, help="metadata CSV output path")
    p.add_argument("--out-truth", help="ground-truth JSON output path")
    p.add_argument("--format", choices=FORMATS, default=None,
                   help="embedding format (default: from the file extension)")

    p = sub.add_parser("split", parents=[common], help="build a balanced concept split")
    _dataset_flags(p)
    p.add_argument("--concept", required=True, type=_concept, help="attribute=value")
    p.add_argument("--cell-cap", type=_positive_int, default=50,
                   help="per-cell training cap (default 50)")
    p.add_argument("--split-out", required=True, help="split JSON output path")

    p = sub.add_parser("train", parents=[common, trainer], help="fit one CAV on a split")
    _dataset_flags(p)
    p.add_argument("--split", required=True, help="split JSON from `cavprobe split`")
    p.add_argument("--invert", action="store_true",
                   help="swap labels, giving the CAV of the complementary value")
    p.add_argument("--out", required=True, help="CAV JSON output path")

    p = sub.add_parser("score", parents=[common, trainer], help="run the TCAV replicate protocol")
    _dataset_flags(p)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--concept", action="append", type=_concept,
                       help="attribute=value; repeat for several concepts")
    which.add_argument("--concepts-all", action="store_true",
                       help="every gender/language value with enough positives")
    p.add_argument("--min-support", type=_positive_int, default=50,
                   help="minimum positives for --concepts-all (default 50)")
    p.add_argument("--cell-cap", type=_positive_int, default=50,
                   help="per-cell training cap (default 50)")
    p.add_argument("--genres", default="all", help="comma list or `all` (default all)")
    p.add_argument("--replicates", type=_positive_int, default=500,
                   help="replicate CAVs per concept (default 500)")
    p.add_argument("--fraction", type=_unit_interval, default=0.25,
                   help="training fraction per replicate (default 0.25)")
    p.add_argument("--alpha", type=_unit_interval, default=0.05,
                   help="family-wise significance level (default 0.05)")
    p.add_argument("--out", required=True, help="report JSON output path")
    p.add_argument("--csv-dir", help="directory for per-concept CSV tables")
    p.add_argument("--scores-out", help="raw replicate-score CSV (single concept) or directory")
    p.add_argument("--split-out", help="split JSON (single concept) or directory")
    p.add_argument("--no-timestamp", action="store_true", help="omit the run timestamp")
    p.add_argument("--strict", action="store_true",
                   help="exit 3 when any result is statistically degenerate")

    p = sub.add_parser("debias", parents=[common], help="sweep a concept-mixing debiasing curve")
    _dataset_flags(p)
    p.add_argument("--base", required=True, help="base CAV JSON (e.g. a genre CAV)")
    p.add_argument("--adjust", required=True, help="concept CAV JSON")
    p.add_argument("--mode", required=True, choices=("add", "subtract", Mode.ADD.value,
                                                     Mode.SUBTRACT.value))
    p.add_argument("--pool", required=True,
                   help="`attr=value&attr=value` filter or `@file` with one id per line")
    p.add_argument("--balance-by", help="downsample the pool to equal counts of this attribute")
    p.add_argument("--lambdas", type=_lambdas, default=_lambdas("0:1:0.05"),
                   help="start:stop:step or comma list (default 0:1:0.05)")
    p.add_argument("--top-fraction", type=_unit_interval, default=0.5,
                   help="share of the ranking inspected (default 0.5)")
    p.add_argument("--track", required=True, type=_concept, help="attribute=value to count")
    p.add_argument("--normalize-before-mix", action="store_true",
                   help="scale both CAVs to unit norm before mixing")
    p.add_argument("--out", required=True, help="curve CSV output path (lambda,ratio)")
    p.add_argument("--json-out", help="also write the curve as JSON")

    p = sub.add_parser("selftest", parents=[common],
                       help="run the pipeline on synthetic data and check it against ground truth")
    p.add_argument("--replicates", type=_positive_int, default=100,
                   help="replicates per protocol run (default 100)")
    p.add_argument("--out", help="report JSON output path (default: stdout)")
    p.add_argument("--no-timestamp", action="store_true", help="omit the run timestamp")

    p = sub.add_parser("check", parents=[common], help="verify a report's internal consistency")
    p.add_argument("--report", help="report JSON")
    p.add_argument("--csv", action="append", default=[], help="TCAV CSV table (repeatable)")
    p.add_argument("--m", type=_positive_int, help="family size for --csv (default: from --report)")
    p.add_argument("--alpha", type=_unit_interval, help="alpha for --csv (default: from --report)")
    return parser


# ---------------------------------------------------------------------------
# helpers

def _load_dataset(args) -> Dataset:
    fmt = args.format or guess_format(args.dataset)
    with warnings.catch_warnings():
        # the same message is already logged
        warnings.simplefilter("ignore")
        return ingest(args.dataset, fmt, args.meta)


def _trainer(args) -> TrainerConfig:
    try:
        return TrainerConfig(l2_lambda=args.l2_lambda, max_iterations=args.max_iterations,
                             gradient_tolerance=args.gradient_tolerance,
                             step_rule=args.step_rule,
                             reliability_threshold=args.reliability_threshold,
                             standardize=args.standardize)
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc


def _spec(text: str, args) -> ConceptSpec:
    try:
        return ConceptSpec.parse(text, cell_cap=args.cell_cap, seed=args.seed)
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc


def _target(path: str, name: str, count: int, stem: str, suffix: str) -> Path:
    """A file path for one concept: ``path`` itself, or a file inside it when several."""
    if count == 1 and not Path(path).is_dir():
        return Path(path)
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from exc
    return directory / f"{stem}_{safe_name(name)}{suffix}"


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _pool(ds: Dataset, expr: str, balance_by: str | None, seed: int) -> list:
    if expr.startswith("@"):
        try:
            lines = Path(expr[1:]).read_text(encoding="utf-8").splitlines()
        except (OSError, UnicodeDecodeError) as exc:
            raise IoFailure(f"cannot read {expr[1:]}: {exc}") from exc
        records = []
        for line in lines:
            rid = line.strip()
            if not rid:
                continue
            if rid not in ds:
                raise UnknownId(f"pool id {rid!r} is not in the dataset")
            records.append(ds.get(rid))
    else:
        terms = []
        for part in expr.split("&"):
            attribute, sep, value = part.partition("=")
            if not sep or attribute.strip() not in ("genre", "gender", "language"):
                raise InvalidConfig(f"invalid pool filter term {part!r}")
            terms.append((attribute.strip(), value.strip()))
        records = [r for r in ds.records if all(r.attribute(a) == v for a, v in terms)]
    if balance_by:
        if balance_by not in ("genre", "gender", "language"):
            raise InvalidConfig(f"cannot balance by {balance_by!r}")
        groups: dict[str, list] = {}
        for r in records:
            v = r.attribute(balance_by)
            if v is not None:
                groups.setdefault(v, []).append(r)
        if not groups:
            raise EmptySampleList(f"no pool record has a {balance_by} value")
        k = min(len(g) for g in groups.values())
        rng = np.random.default_rng(np.random.SeedSequence([0x504F, seed]))
        records = []
        for v in sorted(groups):
            members = sorted(groups[v], key=lambda r: r.id)
            keep = sorted(rng.permutation(len(members))[:k])
            records.extend(members[i] for i in keep)
    if not records:
        raise EmptySampleList("the pool is empty")
    return records


def _degeneracies(report: AuditReport) -> list[str]:
    out = [f"{name}: {reason}" for name, reason in report.failures.items()]
    for r in report.tcav:
        tag = f"{r.concept_name}/{r.genre}"
        if r.p_raw is None:
            out.append(f"{tag}: fewer than two reliable replicates, no test possible")
        if r.degenerate:
            out.append(f"{tag}: zero-variance replicate scores")
        if r.ci_out_of_bounds:
            out.append(f"{tag}: confidence interval leaves [0, 1]")
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    config = load_config(args.config) if args.config else SynthConfig(master_seed=args.seed)
    ds, truth = generate(config)
    export_dataset(ds, args.out_emb, args.format or guess_format(args.out_emb), args.out_meta)
    if args.out_truth:
        doc = {"config": config.to_dict(), **truth.to_dict()}
        _write_text(args.out_truth, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    logger.info("wrote %d records of dimension %d", len(ds), ds.dimension)
    return EXIT_OK


def cmd_split(args) -> int:
    ds = _load_dataset(args)
    split = build_split(ds, _spec(args.concept, args))
    save_split(split, args.split_out)
    logger.info("%s: %d train / %d test", split.concept.name, len(split.train), len(split.test))
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load_dataset(args)
    split = load_split(args.split)
    missing = [rid for rid in split.train_ids() + split.test_ids() if rid not in ds]
    if missing:
        raise UnknownId(f"{len(missing)} split id(s) are not in the dataset, e.g. {missing[0]!r}")
    flip = (lambda y: 1 - y) if args.invert else (lambda y: y)
    name = split.concept.name + (" (inverted)" if args.invert else "")
    X = ds.rows(split.train_ids())
    y = np.array([flip(lbl) for _, lbl in split.train], dtype=np.float64)
    cav = fit_arrays(X, y, _trainer(args), concept_name=name, seed=split.concept.seed)
    if split.test:
        ty = np.array([flip(lbl) for _, lbl in split.test])
        cav = cav.with_test_accuracy(accuracy_arrays(cav, ds.rows(split.test_ids()), ty))
    save_cav(cav, args.out)
    logger.info("%s: train accuracy %.4f, test accuracy %s", name, cav.train_accuracy,
                cav.test_accuracy)
    return EXIT_OK


def cmd_score(args) -> int:
    ds = _load_dataset(args)
    if args.concepts_all:
        specs = concepts_all(ds, args.min_support, args.cell_cap, args.seed)
        if not specs:
            raise InvalidConfig(f"no concept has at least {args.min_support} positives")
    else:
        specs = [_spec(c, args) for c in args.concept]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise InvalidConfig("a concept was given more than once")

    splits = [build_split(ds, s) for s in specs]
    if args.split_out:
        for split in splits:
            save_split(split, _target(args.split_out, split.concept.name, len(splits),
                                      "split", ".json"))

    genres = None if args.genres == "all" else [g.strip() for g in args.genres.split(",")
                                                if g.strip()]
    if genres is not None:
        unknown = sorted(set(genres) - ds.attribute_vocabulary["genre"])
        if not genres or unknown:
            raise InvalidConfig(f"unknown genre(s): {unknown}")
    config = ProtocolConfig(replicates=args.replicates, fraction=args.fraction,
                            alpha=args.alpha, trainer=_trainer(args), threads=args.threads)
    echo = {"genres": args.genres, "cell_cap": args.cell_cap,
            "concepts_all": args.concepts_all, "min_support": args.min_support}
    report, _ = audit(ds, splits, genres, config, seed=args.seed, echo={"cli": echo},
                      with_timestamp=not args.no_timestamp)
    emit(report, args.out, args.csv_dir)
    if args.scores_out:
        for name, matrix in report.score_matrices.items():
            path = _target(args.scores_out, name, len(report.score_matrices), "scores", ".csv")
            _write_text(path, score_table(matrix))

    for r in report.tcav:
        logger.info("%s/%s: mean %.4f p_bonf %s %s", r.concept_name, r.genre,
                    r.mean if r.mean is not None else float("nan"), r.p_bonferroni,
                    r.direction.value)
    problems = _degeneracies(report)
    for p in problems:
        logger.warning("%s", p)
    if args.strict and problems:
        return EXIT_STRICT
    if report.failures and not report.tcav:
        return EXIT_DATA
    return EXIT_OK


def cmd_debias(args) -> int:
    ds = _load_dataset(args)
    base, adjustment = load_cav(args.base), load_cav(args.adjust)
    pool = _pool(ds, args.pool, args.balance_by, args.seed)
    attribute, _, value = args.track.partition("=")
    curve = sweep(base, adjustment, args.mode, pool, args.lambdas, attribute.strip(),
                  value.strip(), args.top_fraction, ds, args.normalize_before_mix)
    curve.write_csv(args.out)
    if args.json_out:
        _write_text(args.json_out, json.dumps(curve.to_dict(), indent=2, sort_keys=True) + "\n")
    logger.info("ratio %.3f at lambda=%g, %.3f at lambda=%g", curve.ratios[0],
                curve.lambdas[0], curve.ratios[-1], curve.lambdas[-1])
    return EXIT_OK


def cmd_selftest(args) -> int:
    report, ok = selftest(seed=args.seed, threads=args.threads, replicates=args.replicates,
                          with_timestamp=not args.no_timestamp)
    text = report.to_json()
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    for c in report.checks:
        status = "PASS" if c["passed"] else "FAIL"
        note = "" if c["gating"] else " (informational)"
        print(f"{status} {c['name']}: {c['detail']}{note}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_DATA


def cmd_check(args) -> int:
    if not args.report and not args.csv:
        raise InvalidConfig("give --report and/or --csv")
    problems = []
    m, alpha = args.m, args.alpha
    if args.report:
        report = load_report(args.report)
        problems += check_report(report)
        m = m if m is not None else report.m
        alpha = alpha if alpha is not None else float(report.run_metadata["alpha"])
    if args.csv and (m is None or alpha is None):
        raise InvalidConfig("--csv needs --m and --alpha, or a --report to take them from")
    for path in args.csv:
        problems += [f"{path}: {p}" for p in check_tcav_csv(path, m, alpha)]
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return EXIT_DATA
    print("consistent", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "score": cmd_score,
    "debias": cmd_debias,
    "selftest": cmd_selftest,
    "check": cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="cavprobe: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except CavprobeError as exc:
        print(f"cavprobe: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # configuration values that pass argparse but fail domain validation
        print(f"cavprobe: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

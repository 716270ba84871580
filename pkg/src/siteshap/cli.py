"""Command-line entry point: ``siteshap {attribute,exact,auc,synth,report}``.

Exit codes: 0 success, 2 configuration error, 3 data validation error
(including malformed report files), 4 attribution infeasible.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import FORMATS, RunConfig, load_config, load_datasets
from .dataset import Schema, ingest, write_dataset
from .errors import AttributionInfeasible, ConfigError, DataValidationError, InsufficientSupport, UndefinedMetricError
from .metric import bootstrap_ci
from .report import format_table, load_report, summarize, write_csv
from .shapley import AttributionReport, attribute, drill_down, exact_attribute
from .synth import bundled_scenarios, generate, ground_truth, load_scenario

logger = logging.getLogger("siteshap")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INFEASIBLE = 4


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", type=Path, help="run configuration (JSON)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--tolerance", type=float, help="standard-error stopping threshold")
    p.add_argument("--max-iters", type=int, dest="max_iterations", help="maximum sampled permutations")
    p.add_argument("--min-stratum", type=int, help="minimum distinct external rows per required stratum")
    p.add_argument("--format", choices=[*FORMATS, "all"], help="output format (default: config, else json+csv)")
    p.add_argument("--workers", type=int, help="worker threads")
    p.add_argument("--out-dir", type=Path, help="output directory (overrides config)")
    p.add_argument("--name", help="base name for output files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="siteshap",
        description="Attribute a model's cross-site performance gap to site factors with Shapley values.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attribute", help="Monte Carlo Shapley attribution from a run config")
    _add_run_flags(p)
    p = sub.add_parser("exact", help="exact attribution by enumerating every factor order")
    _add_run_flags(p)

    p = sub.add_parser("auc", help="AUC with a bootstrap interval for one scored dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--schema", type=Path, help="JSON file with score/label column names")
    p.add_argument("--score", help="score column (default: score)")
    p.add_argument("--label", help="label column (default: label)")
    p.add_argument("--replicates", type=int, default=1000, help="bootstrap replicates; 0 disables the interval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=float, default=0.95)

    p = sub.add_parser("synth", help="sample a synthetic scenario and write a ready-to-run config")
    p.add_argument("scenario", help=f"scenario JSON path or bundled name ({', '.join(bundled_scenarios())})")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--seed", type=int, help="scenario seed (overrides the file)")
    p.add_argument("--n", type=int, help="records per site (overrides the file)")
    p.add_argument("--no-truth", action="store_true", help="skip the ground-truth computation")

    p = sub.add_parser("report", help="summarise report JSONs; optional CSV and SVG")
    p.add_argument("reports", type=Path, nargs="+")
    p.add_argument("--csv", type=Path, help="write the summary rows here")
    p.add_argument("--svg", type=Path, help="write the stacked-bar figure here")
    p.add_argument("--title")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {
        "seed": args.seed,
        "tolerance": args.tolerance,
        "max_iterations": args.max_iterations,
        "min_stratum": args.min_stratum,
        "workers": args.workers,
    }
    return {k: v for k, v in out.items() if v is not None}


def _apply_output_flags(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    from dataclasses import replace

    changes = {}
    if args.format:
        changes["formats"] = FORMATS if args.format == "all" else (args.format,)
    if args.out_dir:
        changes["output_dir"] = args.out_dir
    if args.name:
        changes["output_name"] = args.name
    return replace(config, **changes) if changes else config


class _RunLog:
    """File handler for one run; warnings are routed through logging too."""

    def __init__(self, path: Path):
        self.path = path
        self.handler = logging.FileHandler(path, mode="w", encoding="utf-8")
        self.handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))

    def __enter__(self):
        root = logging.getLogger()
        root.addHandler(self.handler)
        self._level = root.level
        root.setLevel(min(root.level or logging.INFO, logging.INFO))
        logging.captureWarnings(True)
        return self

    def __exit__(self, *exc):
        root = logging.getLogger()
        root.removeHandler(self.handler)
        root.setLevel(self._level)
        logging.captureWarnings(False)
        self.handler.close()


def _log_skips(report: AttributionReport) -> None:
    logger.info("sampled %d permutations, skipped %d, converged=%s",
                report.sampled_permutations, report.skipped_permutations, report.converged)
    for s in report.support:
        logger.info("support failure: factor=%s member=%s value=%s skipped_permutations=%s",
                    s.get("factor"), s.get("member"), s.get("value"), s.get("skipped_permutations"))
    if not report.converged:
        logger.warning("stopping tolerance not reached within %d permutations", report.sampled_permutations)


def _write_outputs(reports: list[AttributionReport], config: RunConfig, stem: str) -> list[Path]:
    from .plotting import plot_disparity

    out = config.output_dir
    written = []
    for r in reports:
        suffix = "" if r is reports[0] else f".{r.config.get('engine', {}).get('group', 'extra')}"
        if "json" in config.formats:
            p = out / f"{stem}{suffix}.json"
            r.to_json(p)
            written.append(p)
    if "csv" in config.formats:
        written.append(write_csv(reports, out / f"{stem}.csv"))
    if "svg" in config.formats:
        written.append(plot_disparity(reports[:1], out / f"{stem}.svg"))
    return written


def _run(args: argparse.Namespace, exact: bool) -> int:
    config = _apply_output_flags(load_config(args.config, _overrides(args)), args)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    stem = config.output_name + (".exact" if exact else "")
    with _RunLog(config.output_dir / f"{stem}.log"):
        logger.info("config %s, seed %d", args.config, config.seed)
        reference, external = load_datasets(config)
        for ds in (reference, external):
            for line in ds.diagnostics:
                logger.warning("%s: %s", ds.site, line)
        names = [f.name for f in config.factors]
        common = dict(seed=config.seed, min_stratum=config.min_stratum, resample_reps=config.resample_reps,
                      bootstrap_replicates=config.bootstrap_replicates, workers=config.workers)
        if exact:
            report = exact_attribute(reference, external, names, **common)
        else:
            report = attribute(reference, external, names, rule=config.stopping, seeding=config.seeding, **common)
        reports = [report]
        for group in () if exact else config.drill_down:
            reports.append(drill_down(reference, external, group, names, rule=config.stopping,
                                      seeding=config.seeding, **common))
        for r in reports:
            r.label = config.label if (r is report and config.label) else r.label
            r.config = {**config.resolved(), "engine": r.config}
            _log_skips(r)
        written = _write_outputs(reports, config, stem)
        logger.info("wrote %s", ", ".join(str(p) for p in written))
    print(format_table(reports[:1]))
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_auc(args: argparse.Namespace) -> int:
    schema = {}
    if args.schema:
        try:
            schema = json.loads(args.schema.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read schema {args.schema}: {exc}") from None
    if args.score:
        schema["score"] = args.score
    if args.label:
        schema["label"] = args.label
    ds = ingest(args.dataset, Schema.from_dict(schema))
    for line in ds.diagnostics:
        logger.warning("%s", line)
    if args.replicates:
        result = bootstrap_ci(ds.scores, ds.labels, replicates=args.replicates, seed=args.seed, level=args.level)
    else:
        from .metric import point_result

        result = point_result(ds.scores, ds.labels)
    print(json.dumps(result.to_dict(), indent=2))
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n is not None:
        overrides["sizes"] = {"reference": args.n, "external": args.n}
    if overrides:
        scenario = scenario.with_overrides(**overrides)
    reference, external = generate(scenario)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(reference, out / "reference.csv")
    write_dataset(external, out / "external.csv")
    (out / "scenario.json").write_text(json.dumps(scenario.to_dict(), indent=2) + "\n", encoding="utf-8")
    config = {
        "seed": scenario.seed,
        "reference": {"path": "reference.csv", "site": reference.site},
        "external": {"path": "external.csv", "site": external.site},
        "factors": [spec.to_dict() for spec in external.specs],
        "output": {"dir": "out", "name": scenario.name or "report", "formats": ["json", "csv"]},
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out / 'reference.csv'} ({len(reference)} rows), {out / 'external.csv'} ({len(external)} rows)")
    if not args.no_truth:
        truth = ground_truth(scenario)
        (out / "ground_truth.json").write_text(json.dumps(truth.to_dict(), indent=2) + "\n", encoding="utf-8")
        print(f"wrote {out / 'ground_truth.json'}")
    print(f"wrote {out / 'config.json'}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    reports = [load_report(p) for p in args.reports]
    print(format_table(reports))
    if args.csv:
        write_csv(reports, args.csv)
        print(f"wrote {args.csv}")
    if args.svg:
        from .plotting import plot_disparity

        plot_disparity(reports, args.svg, title=args.title)
        print(f"wrote {args.svg}")
    summary = summarize(reports)
    logger.debug("mean %s max %s", summary.mean, summary.max)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    for h in logging.getLogger().handlers:
        if isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler):
            h.setLevel(logging.INFO if args.verbose else logging.WARNING)
    handlers = {
        "attribute": lambda a: _run(a, exact=False),
        "exact": lambda a: _run(a, exact=True),
        "auc": _cmd_auc,
        "synth": _cmd_synth,
        "report": _cmd_report,
    }
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataValidationError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AttributionInfeasible, InsufficientSupport) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())

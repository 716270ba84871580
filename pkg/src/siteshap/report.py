"""Reading, summarising and tabulating attribution reports.

Report JSON carries ``"schema": "siteshap.report/1"``. The CSV summary has
one row per report: the evaluation label, one column per factor's Shapley
value, then ``Unexplained`` and ``Total``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataValidationError
from .shapley import REPORT_SCHEMA, AttributionReport

logger = logging.getLogger(__name__)

NEGLIGIBLE_TOTAL = 1e-3
_REQUIRED = ("reference_performance", "external_performance", "contributions", "explained",
             "unexplained", "total_disparity")


def load_report(path: str | Path) -> AttributionReport:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataValidationError(f"cannot read report {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"report {path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise DataValidationError(f"report {path}: expected a JSON object")
    if data.get("schema", REPORT_SCHEMA) != REPORT_SCHEMA:
        raise DataValidationError(f"report {path}: unsupported schema {data.get('schema')!r}")
    missing = [k for k in _REQUIRED if k not in data]
    if missing:
        raise DataValidationError(f"report {path}: missing field(s) {missing}")
    try:
        report = AttributionReport.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataValidationError(f"report {path}: malformed ({exc})") from None
    residual = report.explained + report.unexplained - report.total_disparity
    if abs(residual) > 1e-6:
        logger.warning("report %s: explained + unexplained differs from total by %.3g", path.name, residual)
    return report


def explained_fraction(report: AttributionReport) -> float | None:
    """Share of the total disparity recovered by matching; None when the
    total is too small for the ratio to mean anything."""
    total = report.total_disparity
    if abs(total) < NEGLIGIBLE_TOTAL:
        return None
    return (total - report.unexplained) / total


@dataclass(frozen=True)
class Summary:
    labels: list[str]
    fractions: list[float | None]

    @property
    def valid(self) -> list[float]:
        return [f for f in self.fractions if f is not None]

    @property
    def mean(self) -> float | None:
        v = self.valid
        return sum(v) / len(v) if v else None

    @property
    def max(self) -> float | None:
        v = self.valid
        return max(v) if v else None


def summarize(reports: Sequence[AttributionReport]) -> Summary:
    return Summary([r.evaluation for r in reports], [explained_fraction(r) for r in reports])


def _fmt(x: float | None, digits: int = 3) -> str:
    return "n/a" if x is None else f"{x:.{digits}f}"


def format_table(reports: Sequence[AttributionReport]) -> str:
    """Plain-text summary: the three performance levels, the split, and the fraction."""
    summary = summarize(reports)
    head = ["evaluation", "external", "matched", "within-site", "explained", "unexplained", "total", "fraction"]
    rows = [head]
    for r, frac in zip(reports, summary.fractions):
        rows.append([
            r.evaluation,
            _fmt(r.external_performance.value),
            _fmt(r.matched_level),
            _fmt(r.reference_performance.value),
            _fmt(r.total_disparity - r.unexplained),
            _fmt(r.unexplained),
            _fmt(r.total_disparity),
            _fmt(frac),
        ])
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    lines.append("")
    lines.append(f"mean explained fraction: {_fmt(summary.mean)}")
    lines.append(f"max explained fraction:  {_fmt(summary.max)}")
    return "\n".join(lines)


def factor_columns(reports: Iterable[AttributionReport]) -> list[str]:
    cols: list[str] = []
    for r in reports:
        cols.extend(f for f in r.factors if f not in cols)
    return cols


def write_csv(reports: Sequence[AttributionReport], path: str | Path) -> Path:
    """The per-evaluation row of factor contributions, Unexplained and Total."""
    path = Path(path)
    cols = factor_columns(reports)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Evaluation", *cols, "Unexplained", "Total"])
        for r in reports:
            phi = r.phi
            w.writerow([r.evaluation, *(repr(phi[c]) if c in phi else "" for c in cols),
                        repr(r.unexplained), repr(r.total_disparity)])
    return path


def read_csv(path: str | Path) -> list[dict]:
    """Parse a summary CSV back into dicts of floats (label kept as text)."""
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed = {"Evaluation": row.pop("Evaluation")}
            for k, v in row.items():
                parsed[k] = float(v) if v not in ("", None) else math.nan
            out.append(parsed)
    return out

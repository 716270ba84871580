"""Stacked disparity bars, one row per evaluation.

Each row starts at the raw external performance, adds one segment per
factor contribution (negative contributions run leftward), and closes with
a hatched unexplained segment that ends at the within-site performance.
The three levels (external, matched, within-site) are annotated.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .report import factor_columns  # noqa: E402
from .shapley import AttributionReport  # noqa: E402

logger = logging.getLogger(__name__)

_SPACING = 1.6


def _running(start: float, steps) -> list[float]:
    out, cur = [], start
    for v in steps:
        cur += v
        out.append(cur)
    return out


def geometry_ok(report: AttributionReport) -> bool:
    """Whether the matched level sits between the external and within-site levels.

    Only guaranteed when every contribution shares the sign of the total.
    """
    lo, hi = sorted((report.external_performance.value, report.reference_performance.value))
    return lo - 1e-12 <= report.matched_level <= hi + 1e-12


def plot_disparity(reports: Sequence[AttributionReport], path: str | Path, title: str | None = None) -> Path:
    path = Path(path)
    factors = factor_columns(reports)
    cmap = plt.get_cmap("tab10")
    colors = {f: cmap(i % 10) for i, f in enumerate(factors)}
    height = max(2.2, 1.2 * len(reports) + 1.2)
    with plt.rc_context({"svg.hashsalt": "siteshap", "font.size": 9}):
        fig, ax = plt.subplots(figsize=(8, height))
        lows: list[float] = []
        highs: list[float] = []
        for row, r in enumerate(reports):
            y = _SPACING * (len(reports) - 1 - row)
            ext = r.external_performance.value
            ref = r.reference_performance.value
            cursor = ext
            for f in factors:
                phi = r.phi.get(f, 0.0)
                if phi == 0.0:
                    continue
                ax.barh(y, phi, left=cursor, height=0.6, color=colors[f], edgecolor="white", linewidth=0.5)
                cursor += phi
            ax.barh(y, ref - cursor, left=cursor, height=0.6, color="none", edgecolor="0.4",
                    hatch="///", linewidth=0.5)
            for level, style in ((ext, "|"), (r.matched_level, "d"), (ref, "|")):
                ax.plot([level], [y + 0.38], marker=style, color="black", markersize=5)
            lo_side, hi_side = ("right", "left") if ext <= ref else ("left", "right")
            ax.annotate(f"external {ext:.3f}", (ext, y - 0.36), ha=lo_side, va="top", fontsize=7)
            ax.annotate(f"within-site {ref:.3f}", (ref, y - 0.36), ha=hi_side, va="top", fontsize=7)
            ax.annotate(f"matched {r.matched_level:.3f}", (r.matched_level, y + 0.45), ha="center",
                        va="bottom", fontsize=7)
            lows.append(min(ext, ref, r.matched_level, *_running(ext, r.phi.values())))
            highs.append(max(ext, ref, r.matched_level, *_running(ext, r.phi.values())))
            if not geometry_ok(r):
                logger.warning(
                    "%s: matched level %.4f lies outside [external, within-site]; some contributions "
                    "oppose the total", r.evaluation, r.matched_level,
                )
        handles = [plt.Rectangle((0, 0), 1, 1, color=colors[f]) for f in factors]
        handles.append(plt.Rectangle((0, 0), 1, 1, facecolor="none", edgecolor="0.4", hatch="///"))
        ax.legend(handles, [*factors, "unexplained"], loc="upper left", bbox_to_anchor=(1.01, 1), frameon=False)
        if lows:
            pad = 0.15 * max(max(highs) - min(lows), 1e-3)
            ax.set_xlim(min(lows) - pad, max(highs) + pad)
        ax.set_ylim(-0.9, _SPACING * (len(reports) - 1) + 0.9)
        ax.set_yticks([_SPACING * i for i in range(len(reports))])
        ax.set_yticklabels([r.evaluation for r in reversed(reports)])
        ax.set_xlabel(reports[0].metric.upper() if reports else "")
        ax.spines[["top", "right"]].set_visible(False)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format=path.suffix.lstrip(".") or "svg", metadata={"Date": None} if path.suffix == ".svg" else None)
        plt.close(fig)
    return path

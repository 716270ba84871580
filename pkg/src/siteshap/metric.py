"""Site performance: weighted Mann-Whitney AUC and bootstrap intervals.

A metric is any callable ``metric(scores, labels, weights=None) -> float``
that raises :class:`UndefinedMetricError` when it cannot be computed. Weights
are nonnegative record multiplicities; the resampling code evaluates a
resample as the original records weighted by how often each was drawn.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .errors import UndefinedMetricError
from .rng import Seed, substream

Metric = Callable[..., float]


@dataclass(frozen=True)
class MetricResult:
    value: float
    ci_low: float
    ci_high: float
    n_pos: int
    n_neg: int
    replicates: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricResult":
        return cls(
            value=float(d["value"]),
            ci_low=float(d["ci_low"]),
            ci_high=float(d["ci_high"]),
            n_pos=int(d.get("n_pos", 0)),
            n_neg=int(d.get("n_neg", 0)),
            replicates=int(d.get("replicates", 0)),
        )


def _check_inputs(scores, labels, weights):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    if weights is None:
        w = np.ones(len(s))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != s.shape:
            raise ValueError("weights must match scores in length")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
    return s, y == 1, w


def _auc_from_groups(inverse: np.ndarray, n_unique: int, pos: np.ndarray, w: np.ndarray) -> float:
    wp = np.bincount(inverse, weights=np.where(pos, w, 0.0), minlength=n_unique)
    wn = np.bincount(inverse, weights=np.where(pos, 0.0, w), minlength=n_unique)
    total_p, total_n = wp.sum(), wn.sum()
    if total_p <= 0 or total_n <= 0:
        raise UndefinedMetricError("AUC needs positive weight on both label classes")
    # negatives strictly below each score level, plus half of the tied ones
    below = np.cumsum(wn) - wn
    return float(np.dot(wp, below + 0.5 * wn) / (total_p * total_n))


def auc(scores, labels, weights=None) -> float:
    """Probability that a random positive outscores a random negative, ties ½.

    With ``weights`` every record counts with its weight in both the pair
    count and the normaliser, so integer weights are equivalent to repeating
    records.
    """
    s, pos, w = _check_inputs(scores, labels, weights)
    uniq, inverse = np.unique(s, return_inverse=True)
    return _auc_from_groups(inverse, len(uniq), pos, w)


auc.name = "auc"  # type: ignore[attr-defined]


def metric_name(metric: Metric) -> str:
    return getattr(metric, "name", getattr(metric, "__name__", "metric"))


def prepare(metric: Metric, scores, labels) -> Callable[[Optional[np.ndarray]], float]:
    """Bind a metric to fixed records; the result maps weights to a value.

    For AUC the score grouping is computed once, so repeated evaluation on
    resample weights avoids re-sorting.
    """
    if metric is auc:
        s, pos, _ = _check_inputs(scores, labels, None)
        uniq, inverse = np.unique(s, return_inverse=True)
        n_unique = len(uniq)
        ones = np.ones(len(s))

        def evaluate(weights=None):
            w = ones if weights is None else np.asarray(weights, dtype=np.float64)
            return _auc_from_groups(inverse, n_unique, pos, w)

        return evaluate
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    return lambda weights=None: float(metric(s, y, weights))


def bootstrap_ci(
    scores,
    labels,
    metric: Metric = auc,
    replicates: int = 1000,
    seed: Seed = 0,
    level: float = 0.95,
    workers: int = 1,
) -> MetricResult:
    """Nonparametric percentile bootstrap interval over records.

    Replicate ``r`` draws from its own substream of ``seed``, so the result
    does not depend on ``workers``. Replicates that come out single-class are
    dropped. The interval is widened if needed to contain the point value.
    """
    if replicates < 100:
        raise ValueError("replicates must be at least 100")
    y = np.asarray(labels)
    evaluate = prepare(metric, scores, y)
    value = evaluate(None)
    n = len(y)

    def one(r: int) -> float:
        idx = substream(seed, r).integers(0, n, size=n)
        try:
            return evaluate(np.bincount(idx, minlength=n).astype(np.float64))
        except UndefinedMetricError:
            return np.nan

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = np.array(list(pool.map(one, range(replicates))))
    else:
        vals = np.array([one(r) for r in range(replicates)])
    vals = vals[~np.isnan(vals)]
    if len(vals) == 0:
        raise UndefinedMetricError("every bootstrap replicate was single-class")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(vals, [alpha, 1.0 - alpha])
    n_pos = int(np.sum(y == 1))
    return MetricResult(
        value=value,
        ci_low=float(min(lo, value)),
        ci_high=float(max(hi, value)),
        n_pos=n_pos,
        n_neg=n - n_pos,
        replicates=len(vals),
    )


def point_result(scores, labels, metric: Metric = auc, weights=None) -> MetricResult:
    """A :class:`MetricResult` without an interval (bounds equal the value)."""
    value = float(metric(scores, labels, weights))
    y = np.asarray(labels)
    if weights is None:
        n_pos = int(np.sum(y == 1))
        n_neg = len(y) - n_pos
    else:
        w = np.asarray(weights)
        n_pos = int(w[y == 1].sum())
        n_neg = int(w[y != 1].sum())
    return MetricResult(value, value, value, n_pos, n_neg, 0)

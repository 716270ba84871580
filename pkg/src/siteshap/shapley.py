"""Shapley attribution of a cross-site performance gap to site factors.

Each sampled permutation of the factors defines a chain of matched
resamples of the external dataset: ``p_0`` is the raw external performance
and ``p_i`` the performance after matching the first ``i`` factors of the
permutation. Factor ``k[i]`` is credited with ``p_i - p_{i-1}``, i.e. the
performance recovered by matching it. A factor's Shapley value is the mean
of its increments over permutations, and whatever the fully matched
external set still lacks relative to the reference is the unexplained
remainder, so ``sum(phi) + unexplained == reference - external``.

Two seeding modes are supported:

``"permutation"``
    every permutation draws fresh resamples keyed by ``(seed, permutation
    index)``; estimates average over resampling noise.
``"prefix"``
    every distinct ordered prefix has one fixed resample keyed by a hash of
    the prefix; the Monte Carlo estimate then converges to the exact
    enumeration over all ``K!`` orders.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dataset import GROUP, ScoredDataset
from .errors import AttributionInfeasible, ConfigError, InsufficientSupport
from .matching import Matcher, Variable
from .metric import Metric, MetricResult, auc, bootstrap_ci, metric_name, point_result
from .rng import Seed, derive_seed, prefix_seed, substream

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "siteshap.report/1"
SEEDING_MODES = ("permutation", "prefix")
MAX_EXACT_FACTORS = 8
_PERM_KEY, _STEP_KEY, _BOOT_KEY = 0, 1, 2


@dataclass(frozen=True)
class StoppingRule:
    """Stop once every factor's Monte Carlo standard error is below ``tolerance``."""

    tolerance: float = 0.005
    max_iterations: int = 2000
    min_iterations: int = 30

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ConfigError("stopping.tolerance must be positive")
        if self.min_iterations < 1 or self.max_iterations < self.min_iterations:
            raise ConfigError("stopping requires 1 <= min_iterations <= max_iterations")


@dataclass(frozen=True)
class FactorContribution:
    phi: float
    se: float
    n_permutations: int


@dataclass
class AttributionReport:
    reference_site: str
    external_site: str
    metric: str
    reference_performance: MetricResult
    external_performance: MetricResult
    factors: list[str]
    contributions: dict[str, FactorContribution]
    explained: float
    unexplained: float
    total_disparity: float
    sampled_permutations: int
    skipped_permutations: int
    converged: bool
    seed: Any
    method: str = "monte-carlo"
    config: dict = field(default_factory=dict)
    support: list[dict] = field(default_factory=list)
    label: str | None = None

    @property
    def matched_level(self) -> float:
        """External performance after matching every factor (raw + explained)."""
        return self.external_performance.value + self.explained

    @property
    def phi(self) -> dict[str, float]:
        return {k: c.phi for k, c in self.contributions.items()}

    @property
    def evaluation(self) -> str:
        return self.label or f"{self.reference_site} on {self.external_site}"

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "label": self.evaluation,
            "method": self.method,
            "metric": self.metric,
            "reference_site": self.reference_site,
            "external_site": self.external_site,
            "reference_performance": self.reference_performance.to_dict(),
            "external_performance": self.external_performance.to_dict(),
            "matched_performance": self.matched_level,
            "factors": list(self.factors),
            "contributions": {k: asdict(v) for k, v in self.contributions.items()},
            "explained": self.explained,
            "unexplained": self.unexplained,
            "total_disparity": self.total_disparity,
            "sampled_permutations": self.sampled_permutations,
            "skipped_permutations": self.skipped_permutations,
            "converged": self.converged,
            "seed": self.seed,
            "config": self.config,
            "support": self.support,
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=False)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "AttributionReport":
        contributions = {
            k: FactorContribution(float(v["phi"]), float(v.get("se", 0.0)), int(v.get("n_permutations", 0)))
            for k, v in d["contributions"].items()
        }
        return cls(
            reference_site=str(d.get("reference_site", "reference")),
            external_site=str(d.get("external_site", "external")),
            metric=str(d.get("metric", "auc")),
            reference_performance=MetricResult.from_dict(d["reference_performance"]),
            external_performance=MetricResult.from_dict(d["external_performance"]),
            factors=list(d.get("factors", contributions)),
            contributions=contributions,
            explained=float(d["explained"]),
            unexplained=float(d["unexplained"]),
            total_disparity=float(d["total_disparity"]),
            sampled_permutations=int(d.get("sampled_permutations", 0)),
            skipped_permutations=int(d.get("skipped_permutations", 0)),
            converged=bool(d.get("converged", False)),
            seed=d.get("seed"),
            method=str(d.get("method", "monte-carlo")),
            config=dict(d.get("config", {})),
            support=list(d.get("support", [])),
            label=d.get("label"),
        )


class _Game:
    """The permutation walk shared by the Monte Carlo and exact estimators."""

    def __init__(self, matcher: Matcher, players: list[tuple[str, list[Variable]]], seed: Seed,
                 seeding: str, resample_reps: int, base: np.ndarray | None):
        self.matcher = matcher
        self.players = players
        self.seed = seed
        self.seeding = seeding
        self.reps = resample_reps
        self.base = base
        self.p0 = matcher.performance(base)
        self._cache: dict[tuple[str, ...], float] = {}
        self._lock = threading.Lock()

    @property
    def k(self) -> int:
        return len(self.players)

    def _active(self, idx: int) -> bool:
        return not all(self.matcher.is_identity(v) for v in self.players[idx][1])

    def prefix_value(self, prefix: Sequence[int]) -> float:
        """Performance of the fixed resample for an ordered prefix (prefix seeding)."""
        eff = tuple(self.players[i][0] for i in prefix if self._active(i))
        if not eff:
            return self.p0
        with self._lock:
            hit = self._cache.get(eff)
        if hit is not None:
            return hit
        names = {name: vs for name, vs in self.players}
        variables = [v for name in eff for v in names[name]]
        seed = prefix_seed(self.seed, list(eff))
        vals = [
            self.matcher.performance(self.matcher.resample(variables, seed, rep, start=self.base)[0])
            for rep in range(self.reps)
        ]
        value = float(np.mean(vals))
        with self._lock:
            self._cache.setdefault(eff, value)
        return value

    def walk(self, perm: Sequence[int], index: int) -> np.ndarray:
        """Increments credited to each player along one permutation."""
        levels = np.empty(self.k + 1)
        levels[0] = self.p0
        if self.seeding == "prefix":
            for pos in range(self.k):
                levels[pos + 1] = self.prefix_value(perm[: pos + 1])
        else:
            acc = np.zeros(self.k)
            for rep in range(self.reps):
                current = self.matcher.identity_ranks if self.base is None else self.base
                value = self.p0
                j = 0
                for pos, idx in enumerate(perm):
                    moved = False
                    for var in self.players[idx][1]:
                        if self.matcher.is_identity(var):
                            continue
                        rng = substream(self.seed, _STEP_KEY, index, rep, j)
                        current, _ = self.matcher.step(current, var, rng)
                        moved = True
                        j += 1
                    if moved:
                        value = self.matcher.performance(current)
                    acc[pos] += value
            levels[1:] = acc / self.reps
        inc = np.empty(self.k)
        inc[np.asarray(perm)] = np.diff(levels)
        return inc

    def sampled(self, index: int):
        perm = substream(self.seed, _PERM_KEY, index).permutation(self.k)
        try:
            return self.walk(perm, index), None
        except InsufficientSupport as exc:
            return None, exc.strata


def _players(dataset: ScoredDataset, matcher: Matcher, factors: Sequence[str]) -> list[tuple[str, list[Variable]]]:
    return [(f, matcher.variables([f])) for f in factors]


def _summaries(increments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = increments.shape[0]
    phi = increments.mean(axis=0)
    if n < 2:
        return phi, np.full(increments.shape[1], np.inf)
    se = increments.std(axis=0, ddof=1) / math.sqrt(n)
    return phi, se


def _support_summary(failures: Counter) -> list[dict]:
    out = []
    for (factor, member, value), count in failures.most_common():
        out.append({"factor": factor, "member": member, "value": value, "skipped_permutations": count})
    return out


def _performance(scores, labels, metric, replicates, seed, workers, weights=None) -> MetricResult:
    if replicates and replicates > 0:
        if weights is not None:
            idx = np.repeat(np.arange(len(scores)), weights.astype(np.int64))
            scores, labels = np.asarray(scores)[idx], np.asarray(labels)[idx]
        return bootstrap_ci(scores, labels, metric, replicates=replicates, seed=seed, workers=workers)
    return point_result(scores, labels, metric, weights)


def _setup(reference, external, factors, seed, min_stratum, metric):
    if seed is None:
        raise ConfigError("seed is required")
    factors = list(factors if factors is not None else reference.factor_names)
    if not factors:
        raise ConfigError("at least one factor is required")
    if len(set(factors)) != len(factors):
        raise ConfigError("factor names must be unique")
    matcher = Matcher(reference, external, min_stratum, metric)
    return factors, matcher


def _finish(reference, external, matcher, game, factors, increments, sampled, skipped, converged,
            failures, seed, metric, bootstrap_replicates, workers, method, config, base_weights=None):
    kept = increments.shape[0]
    if sampled and (kept == 0 or skipped / sampled > 0.5):
        raise AttributionInfeasible(
            f"{skipped} of {sampled} sampled permutations lacked stratum support",
            _support_summary(failures),
        )
    phi, se = _summaries(increments)
    if method == "exact":
        se = np.zeros_like(phi)
    ref_perf = _performance(reference.scores, reference.labels, metric, bootstrap_replicates,
                            derive_seed(seed, _BOOT_KEY, 0), workers)
    if base_weights is None:
        ext_perf = _performance(external.scores, external.labels, metric, bootstrap_replicates,
                                derive_seed(seed, _BOOT_KEY, 1), workers)
    else:
        ext_perf = _performance(matcher.scores, matcher.labels, metric, bootstrap_replicates,
                                derive_seed(seed, _BOOT_KEY, 1), workers, weights=base_weights)
    contributions = {
        f: FactorContribution(float(phi[i]), float(se[i]), int(kept)) for i, f in enumerate(factors)
    }
    total = ref_perf.value - ext_perf.value
    explained = float(np.sum(phi))
    unexplained = total - explained
    if failures:
        for row in _support_summary(failures):
            logger.warning("skipped permutations for support: %s", row)
    return AttributionReport(
        reference_site=reference.site,
        external_site=external.site,
        metric=metric_name(metric),
        reference_performance=ref_perf,
        external_performance=ext_perf,
        factors=list(factors),
        contributions=contributions,
        explained=explained,
        unexplained=unexplained,
        total_disparity=total,
        sampled_permutations=sampled,
        skipped_permutations=skipped,
        converged=converged,
        seed=seed,
        method=method,
        config=config,
        support=_support_summary(failures),
    )


def attribute(
    reference: ScoredDataset,
    external: ScoredDataset,
    factors: Sequence[str] | None = None,
    *,
    seed: Seed,
    rule: StoppingRule | None = None,
    min_stratum: int = 5,
    metric: Metric = auc,
    resample_reps: int = 1,
    seeding: str = "permutation",
    workers: int = 1,
    bootstrap_replicates: int = 1000,
    base_factors: Sequence[str] = (),
) -> AttributionReport:
    """Monte Carlo permutation estimate of each factor's Shapley contribution.

    Permutations are evaluated in parallel batches but consumed strictly in
    index order, and permutation ``i`` depends only on ``(seed, i)``, so the
    report is identical for any ``workers``. Sampling stops at the first
    permutation after which at least ``rule.min_iterations`` permutations
    have been retained and every factor's standard error is below
    ``rule.tolerance``, or after ``rule.max_iterations`` sampled
    permutations. Permutations that hit a support failure are skipped; more
    than half skipped raises :class:`AttributionInfeasible`.

    ``base_factors`` are matched first, once, with a fixed seed; the walk
    then starts from that resample (used by :func:`drill_down`).
    """
    rule = rule or StoppingRule()
    if seeding not in SEEDING_MODES:
        raise ConfigError(f"seeding must be one of {SEEDING_MODES}")
    if resample_reps < 1:
        raise ConfigError("resample_reps must be at least 1")
    factors, matcher = _setup(reference, external, factors, seed, min_stratum, metric)
    return _run(reference, external, matcher, _players(external, matcher, factors), seed=seed, rule=rule,
                metric=metric, resample_reps=resample_reps, seeding=seeding, workers=workers,
                bootstrap_replicates=bootstrap_replicates, base_factors=base_factors,
                config_extra={"min_stratum": min_stratum})


def _base_resample(matcher: Matcher, base_factors: Sequence[str], seed: Seed):
    if not base_factors:
        return None
    variables = matcher.variables(base_factors)
    ranks, _ = matcher.resample(variables, prefix_seed(seed, ["<base>", *base_factors]))
    return ranks


def _run(reference, external, matcher, players, *, seed, rule, metric, resample_reps, seeding,
         workers, bootstrap_replicates, base_factors, config_extra):
    base = _base_resample(matcher, base_factors, seed)
    game = _Game(matcher, players, seed, seeding, resample_reps, base)
    k = len(players)
    names = [p[0] for p in players]
    rows: list[np.ndarray] = []
    failures: Counter = Counter()
    sampled = skipped = 0
    converged = False
    batch = max(1, 4 * workers) if workers > 1 else 1
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        next_index = 0
        while sampled < rule.max_iterations and not converged:
            todo = range(next_index, min(next_index + batch, rule.max_iterations))
            next_index = todo.stop
            results = list(pool.map(game.sampled, todo)) if pool else [game.sampled(i) for i in todo]
            for inc, strata in results:
                sampled += 1
                if inc is None:
                    skipped += 1
                    for s in strata:
                        failures[(s["factor"], s.get("member"), s["value"])] += 1
                else:
                    rows.append(inc)
                if len(rows) >= rule.min_iterations:
                    _, se = _summaries(np.array(rows))
                    if np.max(se) < rule.tolerance:
                        converged = True
                        break
    finally:
        if pool:
            pool.shutdown()
    increments = np.array(rows).reshape(len(rows), k)
    config = {
        "seeding": seeding,
        "resample_reps": resample_reps,
        "stopping": asdict(rule),
        "bootstrap_replicates": bootstrap_replicates,
        "base_factors": list(base_factors),
        **config_extra,
    }
    base_weights = None if base is None else np.bincount(base, minlength=matcher.n).astype(np.float64)
    return _finish(reference, external, matcher, game, names, increments, sampled, skipped, converged,
                   failures, seed, metric, bootstrap_replicates, workers, "monte-carlo", config, base_weights)


def exact_attribute(
    reference: ScoredDataset,
    external: ScoredDataset,
    factors: Sequence[str] | None = None,
    *,
    seed: Seed,
    min_stratum: int = 5,
    metric: Metric = auc,
    resample_reps: int = 1,
    bootstrap_replicates: int = 1000,
    workers: int = 1,
) -> AttributionReport:
    """Exact Shapley values by enumerating all ``K!`` factor orders.

    Each distinct ordered prefix uses one fixed resample seeded from the
    prefix, as in ``attribute(..., seeding="prefix")``. Matching is order
    dependent, so orders rather than subsets are enumerated; with an
    order-free value function this reduces to the usual subset weighting.
    """
    factors, matcher = _setup(reference, external, factors, seed, min_stratum, metric)
    if len(factors) > MAX_EXACT_FACTORS:
        raise ConfigError(f"exact enumeration supports at most {MAX_EXACT_FACTORS} factors, got {len(factors)}")
    players = _players(external, matcher, factors)
    game = _Game(matcher, players, seed, "prefix", resample_reps, None)
    rows, failures = [], Counter()
    perms = list(itertools.permutations(range(len(players))))
    for i, perm in enumerate(perms):
        try:
            rows.append(game.walk(perm, i))
        except InsufficientSupport as exc:
            for s in exc.strata:
                failures[(s["factor"], s.get("member"), s["value"])] += 1
    increments = np.array(rows).reshape(len(rows), len(players))
    config = {"seeding": "prefix", "resample_reps": resample_reps, "min_stratum": min_stratum,
              "bootstrap_replicates": bootstrap_replicates}
    return _finish(reference, external, matcher, game, factors, increments, len(perms),
                   len(perms) - len(rows), True, failures, seed, metric, bootstrap_replicates, workers,
                   "exact", config)


def drill_down(
    reference: ScoredDataset,
    external: ScoredDataset,
    group: str,
    factors: Sequence[str] | None = None,
    *,
    seed: Seed,
    rule: StoppingRule | None = None,
    min_stratum: int = 5,
    metric: Metric = auc,
    resample_reps: int = 1,
    seeding: str = "permutation",
    workers: int = 1,
    bootstrap_replicates: int = 1000,
) -> AttributionReport:
    """Split a group factor's contribution among its member flags.

    Every other factor is matched first (one fixed resample); the members
    then play as individual players starting from that resample. The
    report's external performance is that of the base resample.
    """
    rule = rule or StoppingRule()
    if seeding not in SEEDING_MODES:
        raise ConfigError(f"seeding must be one of {SEEDING_MODES}")
    factors, matcher = _setup(reference, external, factors, seed, min_stratum, metric)
    if group not in factors:
        raise ConfigError(f"group {group!r} is not among the attributed factors")
    if external.spec(group).kind != GROUP:
        raise ConfigError(f"factor {group!r} is not a group factor")
    base = [f for f in factors if f != group]
    players = [(v.member, [v]) for v in matcher.variables([group])]
    report = _run(reference, external, matcher, players, seed=seed, rule=rule, metric=metric,
                  resample_reps=resample_reps, seeding=seeding, workers=workers,
                  bootstrap_replicates=bootstrap_replicates, base_factors=base,
                  config_extra={"min_stratum": min_stratum, "group": group})
    report.method = "drill-down"
    report.label = f"{reference.site} on {external.site} [{group}]"
    return report

"""Sequential marginal matching of an external dataset toward a reference.

Matching a prefix of factors walks them in order. At each step the current
resample (a multiset of external rows) is stratified by that factor and
redrawn with replacement so the factor's marginal equals the reference
marginal, with stratum counts fixed by largest-remainder rounding. Later
steps may disturb the marginals of earlier ones; the joint distribution is
never matched. Group factors are matched one member flag at a time.

Internally the external rows are put in a canonical order (by score, label,
then factor values) and resamples are kept as sorted arrays of canonical
positions. Draws therefore depend only on record content, never on the row
order of the input file.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import CONTINUOUS, GROUP, ScoredDataset, check_compatible
from .errors import ConfigError, InsufficientSupport, UndefinedMetricError
from .metric import Metric, auc, prepare
from .rng import Seed, substream


@dataclass(frozen=True)
class Variable:
    """One matching unit: a factor, or one member flag of a group factor."""

    factor: str
    member: str | None = None

    def __str__(self) -> str:
        return self.factor if self.member is None else f"{self.factor}.{self.member}"


def variables_of(dataset: ScoredDataset, factor: str) -> list[Variable]:
    spec = dataset.spec(factor)
    if spec.kind == GROUP:
        return [Variable(factor, m) for m in spec.members]
    return [Variable(factor)]


@dataclass(frozen=True)
class StepPlan:
    """What one matching step did: stratum weights, targets and dropped strata."""

    variable: Variable
    identity: bool
    weights: dict[str, float] = field(default_factory=dict)
    targets: dict[str, int] = field(default_factory=dict)
    dropped: tuple[str, ...] = ()


@dataclass(frozen=True)
class ResamplePlan:
    prefix: tuple[str, ...]
    steps: tuple[StepPlan, ...]


@dataclass(frozen=True, eq=False)
class ResampledDataset:
    """A matched resample of ``source``: row indices with multiplicity."""

    source: ScoredDataset
    indices: np.ndarray
    prefix: tuple[str, ...]
    plan: ResamplePlan

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=len(self.source))

    def to_dataset(self, site: str | None = None) -> ScoredDataset:
        return self.source.subset(self.indices, site=site or f"{self.source.site}[matched]")


def largest_remainder(counts: np.ndarray, total_in: int, n: int) -> np.ndarray:
    """Integer allocation of ``n`` proportional to ``counts / total_in``.

    Floors first, then hands the leftover units to the largest remainders,
    breaking ties by stratum order. Exact integer arithmetic throughout.
    """
    counts = np.asarray(counts, dtype=np.int64)
    scaled = counts * n
    base = scaled // total_in
    rem = scaled % total_in
    short = n - int(base.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(counts)), -rem))
        base[order[:short]] += 1
    return base


@dataclass
class _Table:
    tokens: tuple[str, ...]
    codes: np.ndarray  # stratum code of each canonical external row
    ref_counts: np.ndarray
    n_ref: int
    identity: bool


class Matcher:
    """Precomputed matching state for one (reference, external) pair.

    Safe to share between threads: all per-call state is local, and the
    table cache is filled under a lock.
    """

    def __init__(
        self,
        reference: ScoredDataset,
        external: ScoredDataset,
        min_stratum: int = 5,
        metric: Metric = auc,
    ):
        if min_stratum < 0:
            raise ConfigError("min_stratum must be nonnegative")
        self.reference = reference
        self.external = external
        self.min_stratum = int(min_stratum)
        self.n = len(external)
        keys = []
        for spec in reversed(external.specs):
            col = external.columns[spec.name]
            if spec.kind == GROUP:
                keys.extend(col[:, j] for j in reversed(range(col.shape[1])))
            elif spec.kind == CONTINUOUS:
                keys.append(col)
            else:
                # vocabularies may be inferred per file; order by token, not code
                rank = np.argsort(np.argsort(np.array(spec.vocabulary, dtype=object)))
                keys.append(rank[col])
        keys.extend([external.labels, external.scores])
        self.order = np.lexsort(keys)
        self.scores = external.scores[self.order]
        self.labels = external.labels[self.order]
        self._evaluate = prepare(metric, self.scores, self.labels)
        self._tables: dict[Variable, _Table] = {}
        self._lock = threading.Lock()

    @property
    def identity_ranks(self) -> np.ndarray:
        return np.arange(self.n)

    def variables(self, factors: Sequence[str]) -> list[Variable]:
        check_compatible(self.reference, self.external, factors)
        out = []
        for f in factors:
            out.extend(variables_of(self.external, f))
        return out

    def table(self, var: Variable) -> _Table:
        tab = self._tables.get(var)
        if tab is not None:
            return tab
        ext_codes, ext_tokens = self.external.strata(var.factor, var.member)
        ref_codes, ref_tokens = self.reference.strata(var.factor, var.member)
        tokens = list(ext_tokens) + [t for t in ref_tokens if t not in ext_tokens]
        pos = {t: i for i, t in enumerate(tokens)}
        ref_counts = np.zeros(len(tokens), dtype=np.int64)
        rc = np.bincount(ref_codes, minlength=len(ref_tokens))
        for t, c in zip(ref_tokens, rc):
            ref_counts[pos[t]] += c
        codes = ext_codes[self.order]
        raw = np.bincount(codes, minlength=len(tokens))
        n_ref = len(self.reference)
        target = largest_remainder(ref_counts, n_ref, self.n)
        tab = _Table(tuple(tokens), codes, ref_counts, n_ref, bool(np.array_equal(target, raw)))
        with self._lock:
            self._tables.setdefault(var, tab)
        return tab

    def is_identity(self, var: Variable) -> bool:
        """True when the reference marginal already equals the raw external
        marginal up to rounding; matching such a variable is a no-op."""
        return self.table(var).identity

    def step(self, current: np.ndarray, var: Variable, rng: np.random.Generator) -> tuple[np.ndarray, StepPlan]:
        """Match one variable's marginal on the sorted multiset ``current``."""
        tab = self.table(var)
        if tab.identity:
            return current, StepPlan(var, True)
        T = len(tab.tokens)
        codes = tab.codes[current]
        cur_counts = np.bincount(codes, minlength=T)
        distinct = current[np.r_[True, current[1:] != current[:-1]]]
        avail = np.bincount(tab.codes[distinct], minlength=T)
        required = tab.ref_counts * self.n >= tab.n_ref
        short = required & (avail < max(self.min_stratum, 1))
        if short.any():
            raise InsufficientSupport([
                {
                    "factor": var.factor,
                    "member": var.member,
                    "value": tab.tokens[v],
                    "reference_proportion": float(tab.ref_counts[v] / tab.n_ref),
                    "available": int(avail[v]),
                    "needed": max(self.min_stratum, 1),
                }
                for v in np.flatnonzero(short)
            ])
        eligible = (tab.ref_counts > 0) & (cur_counts > 0)
        kept = np.where(eligible, tab.ref_counts, 0)
        targets = largest_remainder(kept, int(kept.sum()), self.n)
        pieces = []
        sorted_pos = np.argsort(codes, kind="stable")
        bounds = np.r_[0, np.cumsum(cur_counts)]
        for v in np.flatnonzero(targets):
            pool = current[sorted_pos[bounds[v]:bounds[v + 1]]]
            pieces.append(pool[rng.integers(0, len(pool), size=int(targets[v]))])
        new = np.sort(np.concatenate(pieces))
        ref_p = tab.ref_counts / tab.n_ref
        cur_p = cur_counts / self.n
        plan = StepPlan(
            var,
            False,
            weights={tab.tokens[v]: float(ref_p[v] / cur_p[v]) for v in range(T) if cur_counts[v] > 0},
            targets={tab.tokens[v]: int(targets[v]) for v in range(T) if targets[v] > 0},
            dropped=tuple(tab.tokens[v] for v in range(T) if tab.ref_counts[v] > 0 and not eligible[v]),
        )
        return new, plan

    def resample(
        self,
        variables: Sequence[Variable],
        seed: Seed,
        rep: int = 0,
        start: np.ndarray | None = None,
    ) -> tuple[np.ndarray, list[StepPlan]]:
        """Apply ``variables`` in order; step j draws from ``substream(seed, rep, j)``.

        ``j`` counts only non-identity steps, so identity variables can be
        inserted anywhere without changing the draws of the others.
        """
        current = self.identity_ranks if start is None else start
        plans = []
        j = 0
        for var in variables:
            if self.is_identity(var):
                plans.append(StepPlan(var, True))
                continue
            current, plan = self.step(current, var, substream(seed, rep, j))
            plans.append(plan)
            j += 1
        return current, plans

    def performance(self, ranks: np.ndarray | None = None) -> float:
        """Metric on a resample given as canonical positions (None = raw data)."""
        if ranks is None:
            return self._evaluate(None)
        weights = np.bincount(ranks, minlength=self.n).astype(np.float64)
        try:
            return self._evaluate(weights)
        except UndefinedMetricError as exc:
            raise InsufficientSupport([
                {"factor": "<label>", "member": None, "value": "single-class",
                 "reference_proportion": float("nan"), "available": 0, "needed": 1}
            ]) from exc

    def to_indices(self, ranks: np.ndarray) -> np.ndarray:
        return np.sort(self.order[ranks])


def match_prefix(
    reference: ScoredDataset,
    external: ScoredDataset,
    prefix: Sequence[str],
    seed: Seed,
    min_stratum: int = 5,
    *,
    matcher: Matcher | None = None,
) -> ResampledDataset:
    """Resample ``external`` so the prefix factors follow the reference, in order.

    Raises :class:`InsufficientSupport` when a reference stratum with
    proportion at least ``1/|external|`` has fewer than ``min_stratum``
    distinct external rows available at its step.
    """
    m = matcher or Matcher(reference, external, min_stratum)
    ranks, plans = m.resample(m.variables(prefix), seed)
    return ResampledDataset(
        source=external,
        indices=m.to_indices(ranks),
        prefix=tuple(prefix),
        plan=ResamplePlan(tuple(prefix), tuple(plans)),
    )


def matched_performance(
    reference: ScoredDataset,
    external: ScoredDataset,
    prefix: Sequence[str],
    seed: Seed,
    min_stratum: int = 5,
    metric: Metric = auc,
    resample_reps: int = 1,
    *,
    matcher: Matcher | None = None,
) -> float:
    """Metric on the matched external resample, averaged over ``resample_reps`` draws."""
    if resample_reps < 1:
        raise ConfigError("resample_reps must be at least 1")
    m = matcher or Matcher(reference, external, min_stratum, metric)
    variables = m.variables(prefix)
    if not variables:
        return m.performance(None)
    vals = [m.performance(m.resample(variables, seed, rep)[0]) for rep in range(resample_reps)]
    return float(np.mean(vals))


def effective_prefix(
    reference: ScoredDataset,
    external: ScoredDataset,
    prefix: Sequence[str],
    *,
    matcher: Matcher | None = None,
) -> tuple[str, ...]:
    """The prefix without factors whose matching is the identity."""
    m = matcher or Matcher(reference, external)
    return tuple(f for f in prefix if not all(m.is_identity(v) for v in m.variables([f])))

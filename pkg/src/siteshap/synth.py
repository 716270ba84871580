"""Synthetic two-site scenarios with closed-form performance.

A scenario declares discrete site factors with per-site distributions, an
optional log-odds tilt between pairs of factor variables, and a score model
that is constant within each joint stratum (uniform or normal class-
conditional score distributions plus a class prevalence). Because every
stratum's pairwise comparison probability has a closed form, the population
AUC of any mixture of strata is exact, which makes the scenario an
independent ground truth for matching and attribution.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import expit, logit, ndtr

from .dataset import CATEGORICAL, CONTINUOUS, GROUP, FactorSpec, ScoredDataset
from .errors import ConfigError, DataValidationError
from .rng import substream

SITES = ("reference", "external")
FAMILIES = ("normal", "uniform")
MAX_GROUND_TRUTH_FACTORS = 6
_LOGISTIC_SCALE = 0.1


@dataclass(frozen=True)
class ScoreDist:
    """Normal(mean=a, sd=b) or Uniform(low=a, high=b)."""

    family: str
    a: float
    b: float

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoreDist":
        family = d.get("family", "normal")
        if family == "normal":
            dist = cls(family, float(d["mean"]), float(d["sd"]))
        elif family == "uniform":
            dist = cls(family, float(d["low"]), float(d["high"]))
        else:
            raise ConfigError(f"unsupported score distribution family {family!r}; use one of {FAMILIES}")
        dist.validate()
        return dist

    def validate(self):
        if self.family == "normal" and not self.b > 0:
            raise ConfigError("normal score distribution needs sd > 0")
        if self.family == "uniform" and not self.b > self.a:
            raise ConfigError("uniform score distribution needs low < high")

    def to_dict(self) -> dict:
        if self.family == "normal":
            return {"family": "normal", "mean": self.a, "sd": self.b}
        return {"family": "uniform", "low": self.a, "high": self.b}


def _uniform_cdf_integral(x, c, d):
    """Integral of the U(c, d) CDF from -inf to x."""
    x, c, d = np.broadcast_arrays(np.asarray(x, float), np.asarray(c, float), np.asarray(d, float))
    out = np.where(x <= c, 0.0, np.where(x >= d, (d - c) / 2 + (x - d), (x - c) ** 2 / (2 * (d - c))))
    return out


def _normal_partial(z):
    """Antiderivative of the standard normal CDF: z*Phi(z) + phi(z)."""
    return z * ndtr(z) + np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def prob_greater(fx: str, ax, bx, fy: str, ay, by) -> np.ndarray:
    """P(X > Y) for independent X ~ (fx, ax, bx) and Y ~ (fy, ay, by).

    Parameters broadcast; the result is exact for every family pair.
    """
    ax, bx, ay, by = (np.asarray(v, dtype=float) for v in (ax, bx, ay, by))
    if fx == "normal" and fy == "normal":
        return ndtr((ax - ay) / np.sqrt(bx ** 2 + by ** 2))
    if fx == "uniform" and fy == "uniform":
        g = _uniform_cdf_integral
        return (g(bx, ay, by) - g(ax, ay, by)) / (bx - ax)
    if fx == "uniform" and fy == "normal":
        return by / (bx - ax) * (_normal_partial((bx - ay) / by) - _normal_partial((ax - ay) / by))
    if fx == "normal" and fy == "uniform":
        return 1.0 - prob_greater("uniform", ay, by, "normal", ax, bx)
    raise ConfigError(f"unsupported family pair {fx!r}/{fy!r}")


@dataclass(frozen=True)
class SynthFactor:
    """A scenario factor. For groups, ``values`` are the member names and the
    site tuples hold each member's flag probability."""

    name: str
    kind: str
    values: tuple[str, ...]
    reference: tuple[float, ...]
    external: tuple[float, ...]
    ranges: tuple[tuple[float, float], ...] | None = None

    def probs(self, site: str) -> tuple[float, ...]:
        return self.reference if site == "reference" else self.external


@dataclass(frozen=True)
class _Var:
    key: str
    factor: str
    member: str | None
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Effect:
    factor: str
    value: str
    positive_shift: float = 0.0
    negative_shift: float = 0.0
    prevalence_logit: float = 0.0


@dataclass(frozen=True)
class SiteShift:
    positive_shift: float = 0.0
    negative_shift: float = 0.0
    prevalence_logit: float = 0.0


def _shift(d: Mapping[str, Any], cls):
    unknown = set(d) - {"positive_shift", "negative_shift", "prevalence_logit", "factor", "value"}
    if unknown:
        raise ConfigError(f"unknown score-effect fields {sorted(unknown)}")
    return cls(**{k: (float(v) if k not in ("factor", "value") else str(v)) for k, v in d.items()})


@dataclass(frozen=True, eq=False)
class SynthScenario:
    name: str
    factors: tuple[SynthFactor, ...]
    positive: ScoreDist
    negative: ScoreDist
    prevalence: float
    sizes: Mapping[str, int]
    seed: int = 0
    effects: tuple[Effect, ...] = ()
    site_shift: Mapping[str, SiteShift] = field(default_factory=dict)
    dependence: tuple[tuple[str, str, float, float], ...] = ()
    exchangeable: tuple[tuple[str, str], ...] = ()
    link: str = "auto"
    site_names: Mapping[str, str] = field(default_factory=dict)

    # -- construction ----------------------------------------------------

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SynthScenario":
        try:
            factors = tuple(_parse_factor(f) for f in d["factors"])
            scores = d["scores"]
            sizes = {s: int(d["sizes"][s]) for s in SITES}
        except KeyError as exc:
            raise ConfigError(f"scenario is missing field {exc.args[0]!r}") from None
        dependence = []
        for dep in d.get("dependence", []):
            a, b = dep["pair"]
            lo = dep["log_odds"]
            if isinstance(lo, Mapping):
                dependence.append((a, b, float(lo.get("reference", 0.0)), float(lo.get("external", 0.0))))
            else:
                dependence.append((a, b, float(lo), float(lo)))
        scenario = cls(
            name=str(d.get("name", "scenario")),
            factors=factors,
            positive=ScoreDist.from_dict(scores["positive"]),
            negative=ScoreDist.from_dict(scores["negative"]),
            prevalence=float(scores.get("prevalence", 0.5)),
            sizes=sizes,
            seed=int(d.get("seed", 0)),
            effects=tuple(_shift(e, Effect) for e in scores.get("effects", [])),
            site_shift={s: _shift(v, SiteShift) for s, v in scores.get("site_shift", {}).items()},
            dependence=tuple(dependence),
            exchangeable=tuple(tuple(p) for p in d.get("exchangeable", [])),
            link=str(scores.get("link", "auto")),
            site_names=dict(d.get("site_names", {})),
        )
        scenario.validate()
        return scenario

    def to_dict(self) -> dict:
        factors = []
        for f in self.factors:
            if f.kind == GROUP:
                factors.append({"name": f.name, "kind": GROUP, "members": list(f.values),
                                "reference": dict(zip(f.values, f.reference)),
                                "external": dict(zip(f.values, f.external))})
            else:
                entry = {"name": f.name, "values": list(f.values),
                         "reference": list(f.reference), "external": list(f.external)}
                if f.ranges:
                    entry["ranges"] = [list(r) for r in f.ranges]
                factors.append(entry)
        return {
            "name": self.name,
            "seed": self.seed,
            "sizes": dict(self.sizes),
            "site_names": dict(self.site_names),
            "factors": factors,
            "dependence": [{"pair": [a, b], "log_odds": {"reference": r, "external": e}}
                           for a, b, r, e in self.dependence],
            "exchangeable": [list(p) for p in self.exchangeable],
            "scores": {
                "positive": self.positive.to_dict(),
                "negative": self.negative.to_dict(),
                "prevalence": self.prevalence,
                "effects": [vars(e) for e in self.effects],
                "site_shift": {s: vars(v) for s, v in self.site_shift.items()},
                "link": self.link,
            },
        }

    def with_overrides(self, *, sizes: Mapping[str, int] | None = None, seed: int | None = None) -> "SynthScenario":
        d = self.to_dict()
        if sizes is not None:
            d["sizes"] = {**d["sizes"], **sizes}
        if seed is not None:
            d["seed"] = seed
        return SynthScenario.from_dict(d)

    def validate(self):
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ConfigError("scenario factor names must be unique")
        if not 0 < self.prevalence < 1:
            raise ConfigError("prevalence must lie strictly between 0 and 1")
        for s, n in self.sizes.items():
            if n < 2:
                raise ConfigError(f"size of site {s!r} must be at least 2")
        keys = {v.key for v in self.variables}
        for a, b, _, _ in self.dependence:
            for k in (a, b):
                if k not in keys:
                    raise ConfigError(f"dependence refers to unknown variable {k!r}; known: {sorted(keys)}")
        for e in self.effects:
            f = self._factor(e.factor)
            if e.value not in f.values:
                raise ConfigError(f"effect on {e.factor!r} names unknown value {e.value!r}")
        if self.link not in ("auto", "identity", "logistic"):
            raise ConfigError("link must be auto, identity or logistic")
        for site in SITES:
            pos_a, pos_b, neg_a, neg_b, _ = self.stratum_params(site)
            for fam, a, b in ((self.positive.family, pos_a, pos_b), (self.negative.family, neg_a, neg_b)):
                if fam == "uniform" and np.any(b <= a):
                    raise ConfigError("uniform score bounds collapsed after effects")
        if self.resolved_link == "identity":
            for site in SITES:
                pos_a, pos_b, neg_a, neg_b, _ = self.stratum_params(site)
                lo = min(pos_a.min(), neg_a.min())
                hi = max(pos_b.max(), neg_b.max())
                if self.positive.family != "uniform" or self.negative.family != "uniform" or lo < 0 or hi > 1:
                    raise ConfigError("identity link needs uniform scores inside [0, 1]; use link 'logistic'")
        for a, b in self.exchangeable:
            self._check_exchangeable(a, b)

    def _factor(self, name: str) -> SynthFactor:
        for f in self.factors:
            if f.name == name:
                return f
        raise ConfigError(f"unknown scenario factor {name!r}")

    # -- structure ---------------------------------------------------------

    @cached_property
    def variables(self) -> list[_Var]:
        out = []
        for f in self.factors:
            if f.kind == GROUP:
                out.extend(_Var(f"{f.name}.{m}", f.name, m, ("0", "1")) for m in f.values)
            else:
                out.append(_Var(f.name, f.name, None, f.values))
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(v.tokens) for v in self.variables)

    @property
    def factor_names(self) -> list[str]:
        return [f.name for f in self.factors]

    def var_axes(self, factor: str) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.factor == factor]

    def _base_marginal(self, var: _Var, site: str) -> np.ndarray:
        f = self._factor(var.factor)
        probs = f.probs(site)
        if var.member is None:
            return np.asarray(probs, dtype=float)
        p = probs[f.values.index(var.member)]
        return np.array([1.0 - p, p])

    def marginal(self, site: str, key: str) -> np.ndarray:
        axis = [v.key for v in self.variables].index(key)
        other = tuple(i for i in range(len(self.shape)) if i != axis)
        return self.joint(site).sum(axis=other)

    def joint(self, site: str) -> np.ndarray:
        """Population joint distribution over variable strata for a site."""
        cache = self.__dict__.setdefault("_joint_cache", {})
        if site in cache:
            return cache[site]
        margins = [self._base_marginal(v, site) for v in self.variables]
        w = np.ones(self.shape)
        for i, m in enumerate(margins):
            w = w * m.reshape([-1 if j == i else 1 for j in range(len(margins))])
        keys = [v.key for v in self.variables]
        tilted = False
        for a, b, lo_ref, lo_ext in self.dependence:
            theta = lo_ref if site == "reference" else lo_ext
            if theta == 0:
                continue
            tilted = True
            ia, ib = keys.index(a), keys.index(b)
            na, nb = self.shape[ia], self.shape[ib]
            tilt = np.ones((na, nb))
            tilt[1:, 1:] = math.exp(theta)
            shape = [1] * len(self.shape)
            shape[ia], shape[ib] = na, nb
            w = w * tilt.reshape(shape)
        w = w / w.sum()
        if tilted:
            w = _rake(w, margins)
        cache[site] = w
        return w

    def stratum_params(self, site: str):
        """Arrays (over the joint shape) of score parameters and prevalence."""
        pos_a = np.full(self.shape, self.positive.a)
        pos_b = np.full(self.shape, self.positive.b)
        neg_a = np.full(self.shape, self.negative.a)
        neg_b = np.full(self.shape, self.negative.b)
        plogit = np.full(self.shape, float(logit(self.prevalence)))
        keys = [v.key for v in self.variables]

        def shift(arr_a, arr_b, family, amount, mask):
            arr_a[mask] += amount
            if family == "uniform":
                arr_b[mask] += amount

        for e in self.effects:
            f = self._factor(e.factor)
            mask = np.zeros(self.shape, dtype=bool)
            idx: list[Any] = [slice(None)] * len(self.shape)
            if f.kind == GROUP:
                idx[keys.index(f"{f.name}.{e.value}")] = 1
            else:
                idx[keys.index(f.name)] = f.values.index(e.value)
            mask[tuple(idx)] = True
            shift(pos_a, pos_b, self.positive.family, e.positive_shift, mask)
            shift(neg_a, neg_b, self.negative.family, e.negative_shift, mask)
            plogit[mask] += e.prevalence_logit
        s = self.site_shift.get(site)
        if s is not None:
            everywhere = np.ones(self.shape, dtype=bool)
            shift(pos_a, pos_b, self.positive.family, s.positive_shift, everywhere)
            shift(neg_a, neg_b, self.negative.family, s.negative_shift, everywhere)
            plogit += s.prevalence_logit
        return pos_a, pos_b, neg_a, neg_b, expit(plogit)

    @property
    def resolved_link(self) -> str:
        if self.link != "auto":
            return self.link
        if self.positive.family == "uniform" and self.negative.family == "uniform":
            ok = True
            for site in SITES:
                pa, pb, na, nb, _ = self.stratum_params(site)
                ok &= min(pa.min(), na.min()) >= 0 and max(pb.max(), nb.max()) <= 1
            if ok:
                return "identity"
        return "logistic"

    def pair_matrix(self, site: str) -> np.ndarray:
        """M[s, t] = P(positive score in stratum s > negative score in stratum t)."""
        cache = self.__dict__.setdefault("_pair_cache", {})
        if site not in cache:
            pa, pb, na, nb, _ = self.stratum_params(site)
            cache[site] = prob_greater(
                self.positive.family, pa.reshape(-1, 1), pb.reshape(-1, 1),
                self.negative.family, na.reshape(1, -1), nb.reshape(1, -1),
            )
        return cache[site]

    def _check_exchangeable(self, a: str, b: str):
        fa, fb = self._factor(a), self._factor(b)
        if fa.kind == GROUP or fb.kind == GROUP or fa.values != fb.values:
            raise ConfigError(f"exchangeable factors {a!r} and {b!r} need the same categorical values")
        ia, ib = self.var_axes(a)[0], self.var_axes(b)[0]
        for site in SITES:
            w = self.joint(site)
            if not np.allclose(w, np.swapaxes(w, ia, ib), rtol=0, atol=1e-12):
                raise ConfigError(f"factors {a!r} and {b!r} are not exchangeable at site {site!r}")
            for arr in self.stratum_params(site):
                if not np.allclose(arr, np.swapaxes(arr, ia, ib), rtol=0, atol=1e-12):
                    raise ConfigError(f"score model is not symmetric in {a!r} and {b!r}")

    def site_name(self, site: str) -> str:
        return self.site_names.get(site, site)


def _parse_factor(d: Mapping[str, Any]) -> SynthFactor:
    kind = d.get("kind", CATEGORICAL)
    name = d["name"]
    if kind == GROUP:
        members = tuple(d["members"])
        ref = tuple(float(d["reference"][m]) for m in members)
        ext = tuple(float(d["external"][m]) for m in members)
        for p in ref + ext:
            if not 0 <= p <= 1:
                raise ConfigError(f"group {name!r}: flag probabilities must be in [0, 1]")
        return SynthFactor(name, GROUP, members, ref, ext)
    if kind != CATEGORICAL:
        raise ConfigError(f"scenario factor {name!r}: kind must be categorical or group")
    values = tuple(str(v) for v in d["values"])
    ref = tuple(float(p) for p in d["reference"])
    ext = tuple(float(p) for p in d["external"])
    for probs in (ref, ext):
        if len(probs) != len(values) or min(probs) < 0 or abs(sum(probs) - 1) > 1e-9:
            raise ConfigError(f"scenario factor {name!r}: site distribution must match values and sum to 1")
    ranges = None
    if "ranges" in d:
        ranges = tuple((float(lo), float(hi)) for lo, hi in d["ranges"])
        if len(ranges) != len(values):
            raise ConfigError(f"factor {name!r}: one range per value required")
        for (lo, hi), nxt in zip(ranges, list(ranges[1:]) + [None]):
            if not lo < hi or (nxt is not None and nxt[0] != hi):
                raise ConfigError(f"factor {name!r}: ranges must be increasing and contiguous")
    return SynthFactor(name, CATEGORICAL, values, ref, ext, ranges)


def _rake(w: np.ndarray, margins: Sequence[np.ndarray], tol: float = 1e-14, max_iter: int = 10000) -> np.ndarray:
    """Iterative proportional fitting of ``w`` to the given one-way margins."""
    nd = w.ndim
    for _ in range(max_iter):
        worst = 0.0
        for i, target in enumerate(margins):
            axes = tuple(j for j in range(nd) if j != i)
            cur = w.sum(axis=axes)
            worst = max(worst, float(np.max(np.abs(cur - target))))
            ratio = np.divide(target, cur, out=np.zeros_like(target), where=cur > 0)
            w = w * ratio.reshape([-1 if j == i else 1 for j in range(nd)])
        if worst < tol:
            break
    return w


# -- oracles ---------------------------------------------------------------


def _weights_array(scenario: SynthScenario, weights) -> np.ndarray:
    if isinstance(weights, Mapping):
        w = np.zeros(scenario.shape)
        single = len(scenario.shape) == 1
        for key, p in weights.items():
            key = (key,) if single and not isinstance(key, tuple) else tuple(key)
            idx = tuple(v.tokens.index(str(t)) for v, t in zip(scenario.variables, key))
            if len(idx) != len(scenario.shape):
                raise ConfigError(f"stratum key {key!r} must name one value per variable")
            w[idx] += float(p)
        return w
    w = np.asarray(weights, dtype=float)
    if w.size != int(np.prod(scenario.shape)):
        raise ConfigError("weights must cover every joint stratum")
    return w.reshape(scenario.shape)


def analytic_auc(scenario: SynthScenario, site_weights, site: str = "external") -> float:
    """Exact population AUC when strata occur with ``site_weights``.

    Positives and negatives of every stratum pair are compared in closed
    form under ``site``'s score model; each pair is weighted by the
    positive mass of one stratum times the negative mass of the other.
    """
    w = _weights_array(scenario, site_weights).reshape(-1)
    if np.any(w < 0) or not w.sum() > 0:
        raise ConfigError("stratum weights must be nonnegative with positive total")
    w = w / w.sum()
    prev = scenario.stratum_params(site)[4].reshape(-1)
    wp, wn = w * prev, w * (1 - prev)
    return float(wp @ scenario.pair_matrix(site) @ wn / (wp.sum() * wn.sum()))


def population_match(scenario: SynthScenario, prefix: Sequence[str], start: np.ndarray | None = None) -> np.ndarray:
    """External joint after sequentially matching ``prefix`` to the reference.

    Each step rescales the strata of one variable so its marginal equals the
    reference marginal, keeping the conditional distribution of everything
    else within the stratum, the population counterpart of resampling.
    """
    w = scenario.joint("external").copy() if start is None else start.copy()
    ref = scenario.joint("reference")
    nd = w.ndim
    for factor in prefix:
        for axis in scenario.var_axes(factor):
            others = tuple(j for j in range(nd) if j != axis)
            cur = w.sum(axis=others)
            target = ref.sum(axis=others)
            if np.any((cur <= 0) & (target > 0)):
                raise ConfigError(f"external population has no mass where the reference needs {factor!r}")
            ratio = np.divide(target, cur, out=np.zeros_like(target), where=cur > 0)
            w = w * ratio.reshape([-1 if j == axis else 1 for j in range(nd)])
    return w


@dataclass(frozen=True)
class GroundTruth:
    phi: dict[str, float]
    reference_auc: float
    external_auc: float
    matched_auc: float

    @property
    def total(self) -> float:
        return self.reference_auc - self.external_auc

    @property
    def unexplained(self) -> float:
        return self.reference_auc - self.matched_auc

    def to_dict(self) -> dict:
        return {"phi": self.phi, "reference_auc": self.reference_auc, "external_auc": self.external_auc,
                "matched_auc": self.matched_auc, "total": self.total, "unexplained": self.unexplained}


def ground_truth(scenario: SynthScenario) -> GroundTruth:
    """Exact population Shapley values by enumerating every factor order."""
    names = scenario.factor_names
    k = len(names)
    if k > MAX_GROUND_TRUTH_FACTORS:
        raise ConfigError(f"ground truth supports at most {MAX_GROUND_TRUTH_FACTORS} factors, got {k}")
    states: dict[tuple[str, ...], np.ndarray] = {(): scenario.joint("external")}
    values: dict[tuple[str, ...], float] = {}

    def value(prefix: tuple[str, ...]) -> float:
        if prefix not in values:
            if prefix not in states:
                value(prefix[:-1])
                states[prefix] = population_match(scenario, prefix[-1:], start=states[prefix[:-1]])
            values[prefix] = analytic_auc(scenario, states[prefix], "external")
        return values[prefix]

    totals = np.zeros(k)
    perms = list(itertools.permutations(names))
    for perm in perms:
        prev = value(())
        for i, name in enumerate(perm):
            cur = value(tuple(perm[: i + 1]))
            totals[names.index(name)] += cur - prev
            prev = cur
    phi = totals / len(perms)
    ref = analytic_auc(scenario, scenario.joint("reference"), "reference")
    return GroundTruth(
        phi={n: float(p) for n, p in zip(names, phi)},
        reference_auc=ref,
        external_auc=value(()),
        matched_auc=float(np.mean([value(tuple(p)) for p in perms])),
    )


def ground_truth_phi(scenario: SynthScenario) -> dict[str, float]:
    return ground_truth(scenario).phi


# -- sampling --------------------------------------------------------------


def _dataset_specs(scenario: SynthScenario) -> list[FactorSpec]:
    specs = []
    for f in scenario.factors:
        if f.kind == GROUP:
            specs.append(FactorSpec(f.name, GROUP, members=f.values))
        elif f.ranges:
            specs.append(FactorSpec(f.name, CONTINUOUS, edges=tuple(hi for _, hi in f.ranges[:-1])))
        else:
            specs.append(FactorSpec(f.name, CATEGORICAL, vocabulary=f.values))
    return specs


def _sample_site(scenario: SynthScenario, site: str, rng: np.random.Generator) -> ScoredDataset:
    n = scenario.sizes[site]
    shape = scenario.shape
    flat = scenario.joint(site).reshape(-1)
    mirror_axes = [(scenario.var_axes(a)[0], scenario.var_axes(b)[0]) for a, b in scenario.exchangeable]
    if mirror_axes and n % 2:
        raise ConfigError(f"site {site!r}: exchangeable scenarios need an even sample size")
    n_draw = n // 2 if mirror_axes else n
    strata = rng.choice(flat.size, size=n_draw, p=flat / flat.sum())
    pa, pb, na, nb, prev = (arr.reshape(-1) for arr in scenario.stratum_params(site))
    labels = (rng.random(n_draw) < prev[strata]).astype(np.int8)
    pos = labels == 1
    latent = np.empty(n_draw)
    for mask, fam, a, b in ((pos, scenario.positive.family, pa, pb), (~pos, scenario.negative.family, na, nb)):
        s = strata[mask]
        if fam == "normal":
            latent[mask] = a[s] + b[s] * rng.standard_normal(mask.sum())
        else:
            latent[mask] = a[s] + (b[s] - a[s]) * rng.random(mask.sum())
    if mirror_axes:
        idx = np.array(np.unravel_index(strata, shape))
        mirrored = idx.copy()
        for ia, ib in mirror_axes:
            mirrored[[ia, ib]] = idx[[ib, ia]]
        strata = np.concatenate([strata, np.ravel_multi_index(tuple(mirrored), shape)])
        labels = np.concatenate([labels, labels])
        latent = np.concatenate([latent, latent])
    if scenario.resolved_link == "logistic":
        scores = expit((latent - 0.5) / _LOGISTIC_SCALE)
    else:
        scores = latent
    if labels.min() == labels.max():
        raise DataValidationError(f"scenario {scenario.name!r}: site {site!r} sampled a single label class")
    codes = np.unravel_index(strata, shape)
    columns = {}
    for f in scenario.factors:
        axes = scenario.var_axes(f.name)
        if f.kind == GROUP:
            columns[f.name] = np.stack([codes[a] == 1 for a in axes], axis=1)
        elif f.ranges:
            lo = np.array([r[0] for r in f.ranges])[codes[axes[0]]]
            hi = np.array([r[1] for r in f.ranges])[codes[axes[0]]]
            columns[f.name] = lo + (hi - lo) * rng.random(len(strata))
        else:
            columns[f.name] = codes[axes[0]].astype(np.int32)
    return ScoredDataset(
        site=scenario.site_name(site),
        scores=scores,
        labels=labels,
        specs=tuple(_dataset_specs(scenario)),
        columns=columns,
    )


def generate(scenario: SynthScenario) -> tuple[ScoredDataset, ScoredDataset]:
    """Sample the reference and external datasets; deterministic per scenario seed.

    Each site draws from its own substream. Exchangeable factor pairs are
    sampled symmetrically: every record is emitted together with its mirror
    image (pair values swapped, same label and score).
    """
    return tuple(_sample_site(scenario, site, substream(scenario.seed, i)) for i, site in enumerate(SITES))


# -- scenario files --------------------------------------------------------


def bundled_scenarios() -> list[str]:
    root = resources.files("siteshap") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(source: str | Path | Mapping[str, Any]) -> SynthScenario:
    """Load a scenario from a mapping, a JSON file, or a bundled scenario name."""
    if isinstance(source, Mapping):
        return SynthScenario.from_dict(source)
    path = Path(source)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    else:
        res = resources.files("siteshap") / "scenarios" / f"{source}.json"
        if not res.is_file():
            raise ConfigError(f"no scenario file or bundled scenario named {str(source)!r}; bundled: {bundled_scenarios()}")
        text = res.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario {source}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return SynthScenario.from_dict(data)

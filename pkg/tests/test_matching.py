from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siteshap.dataset import marginal
from siteshap.errors import ConfigError, InsufficientSupport
from siteshap.matching import (
    Matcher,
    effective_prefix,
    largest_remainder,
    match_prefix,
    matched_performance,
)
from siteshap.metric import auc
from siteshap.synth import analytic_auc, generate, load_scenario

from conftest import make_dataset, random_site


def race_sites():
    n = 100
    ref = make_dataset(np.linspace(0.01, 0.99, n), np.arange(n) % 2, site="ref",
                       race=["Black"] * 60 + ["White"] * 40)
    scores = np.random.default_rng(1).random(n)
    ext = make_dataset(scores, np.arange(n) % 2, site="ext", race=["Black"] * 30 + ["White"] * 70)
    return ref, ext


def test_sixty_forty_match():
    ref, ext = race_sites()
    res = match_prefix(ref, ext, ["race"], seed=0)
    assert len(res) == 100
    matched = res.to_dataset()
    assert marginal(matched, "race") == {"Black": 0.6, "White": 0.4}
    step = res.plan.steps[0]
    assert step.targets == {"Black": 60, "White": 40}
    assert step.weights == pytest.approx({"Black": 2.0, "White": 40 / 70})


def test_empty_prefix_identity():
    ref, ext = race_sites()
    res = match_prefix(ref, ext, [], seed=3)
    assert res.indices.tolist() == list(range(len(ext)))
    assert matched_performance(ref, ext, [], seed=3) == auc(ext.scores, ext.labels)


def binary_pair(joint: dict, n: int, site: str, seed: int = 0):
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for (x, y), p in joint.items():
        k = round(p * n)
        xs += [str(x)] * k
        ys += [str(y)] * k
    labels = np.arange(len(xs)) % 2
    return make_dataset(rng.random(len(xs)), labels, site=site, x=xs, y=ys)


def test_perfectly_correlated_pair_sequential():
    ref = binary_pair({(0, 0): 0.25, (0, 1): 0.25, (1, 0): 0.25, (1, 1): 0.25}, 100, "ref")
    ext = binary_pair({(0, 0): 0.4, (1, 1): 0.6}, 100, "ext")
    m = Matcher(ref, ext)
    after_x, _ = m.resample(m.variables(["x"]), seed=9)
    x_codes, _ = ext.strata("x")
    assert np.bincount(x_codes[m.order][after_x]).tolist() == [50, 50]
    after_xy, _ = m.resample(m.variables(["x", "y"]), seed=9)
    y_codes, _ = ext.strata("y")
    assert np.bincount(y_codes[m.order][after_xy]).tolist() == [50, 50]
    # x and y always agree in this external site, so the x marginal cannot drift
    assert np.bincount(x_codes[m.order][after_xy]).tolist() == [50, 50]


def simulate_two_steps(x, y, ref_x, ref_y, rng):
    """Direct re-implementation of sequential stratified resampling on (x, y) pairs."""
    n = len(x)
    idx = np.arange(n)
    for col, target in ((x, ref_x), (y, ref_y)):
        counts = largest_remainder(np.asarray(target) * 1000, 1000 * sum(target), n)
        vals = col[idx]
        new = []
        for v, c in enumerate(counts):
            pool = idx[vals == v]
            new.append(pool[rng.integers(0, len(pool), c)])
        idx = np.concatenate(new)
    return float(np.mean(x[idx] == 1))


def test_second_step_drift_matches_simulation():
    joint = {(0, 0): 0.35, (0, 1): 0.15, (1, 0): 0.1, (1, 1): 0.4}
    ref = binary_pair({(0, 0): 0.25, (0, 1): 0.25, (1, 0): 0.3, (1, 1): 0.2}, 1000, "ref")
    ext = binary_pair(joint, 1000, "ext")
    m = Matcher(ref, ext)
    x_codes = ext.strata("x")[0][m.order]
    y_codes = ext.strata("y")[0][m.order]
    ours = []
    for seed in range(200):
        ranks, _ = m.resample(m.variables(["x", "y"]), seed)
        ours.append(np.mean(x_codes[ranks] == 1))
        assert np.bincount(y_codes[ranks]).tolist() == [550, 450]
    rng = np.random.default_rng(99)
    theirs = [simulate_two_steps(x_codes, y_codes, [500, 500], [550, 450], rng) for _ in range(200)]
    ours, theirs = np.array(ours), np.array(theirs)
    # x was matched to 50% first; y's correction pulls it below
    assert ours.mean() < 0.5
    se = np.sqrt(ours.var(ddof=1) / 200 + theirs.var(ddof=1) / 200)
    assert abs(ours.mean() - theirs.mean()) < 4 * se


def test_last_factor_marginal_exact():
    rng = np.random.default_rng(5)
    ref = random_site(rng, 700, {"a": [0.2, 0.3, 0.5], "b": [0.6, 0.4]}, site="ref")
    ext = random_site(rng, 555, {"a": [0.5, 0.3, 0.2], "b": [0.3, 0.7]}, site="ext")
    for prefix in (["a"], ["b"], ["a", "b"], ["b", "a"]):
        res = match_prefix(ref, ext, prefix, seed=1)
        last = prefix[-1]
        got = marginal(res.to_dataset(), last)
        want = marginal(ref, last)
        assert max(abs(got[k] - want[k]) for k in want) < 1 / len(ext)


def test_row_order_invariance():
    rng = np.random.default_rng(8)
    ref = random_site(rng, 400, {"a": [0.2, 0.8], "b": [0.5, 0.5]}, site="ref")
    ext = random_site(rng, 300, {"a": [0.7, 0.3], "b": [0.2, 0.8]}, site="ext")
    perm = rng.permutation(len(ext))
    shuffled = ext.subset(perm)
    a = match_prefix(ref, ext, ["a", "b"], seed=4).to_dataset()
    b = match_prefix(ref, shuffled, ["a", "b"], seed=4).to_dataset()
    key = lambda d: sorted((r.score, r.label, tuple(sorted(r.factors.items()))) for r in d.records)  # noqa: E731
    assert key(a) == key(b)
    assert matched_performance(ref, ext, ["a", "b"], 4) == matched_performance(ref, shuffled, ["a", "b"], 4)


def test_identical_marginals_identity():
    rng = np.random.default_rng(2)
    ext = random_site(rng, 200, {"a": [0.5, 0.5]}, site="ext")
    ref = ext.subset(np.arange(200), site="ref")
    m = Matcher(ref, ext)
    assert all(m.is_identity(v) for v in m.variables(["a"]))
    res = match_prefix(ref, ext, ["a"], seed=0)
    assert res.counts.tolist() == [1] * 200
    assert res.plan.steps[0].identity
    assert matched_performance(ref, ext, ["a"], seed=0) == auc(ext.scores, ext.labels)
    assert effective_prefix(ref, ext, ["a"]) == ()


def test_same_distribution_unbiased():
    diffs = []
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        probs = {"a": [0.3, 0.7], "b": [0.5, 0.2, 0.3]}
        ref = random_site(rng, 400, probs, site="ref", shift={"a": {"1": -0.1}})
        ext = random_site(rng, 400, probs, site="ext", shift={"a": {"1": -0.1}})
        raw = auc(ext.scores, ext.labels)
        diffs.append(matched_performance(ref, ext, ["a", "b"], seed) - raw)
    diffs = np.array(diffs)
    assert abs(diffs.mean()) < 2 * diffs.std(ddof=1) / np.sqrt(len(diffs))


def test_insufficient_support():
    n = 100
    ref = make_dataset(np.linspace(0, 1, n), np.arange(n) % 2, site="ref", v=["AP"] * 50 + ["PA"] * 50)
    ext = make_dataset(np.linspace(0, 1, n), np.arange(n) % 2, site="ext", v=["AP"] * 97 + ["PA"] * 3)
    with pytest.raises(InsufficientSupport) as info:
        match_prefix(ref, ext, ["v"], seed=0, min_stratum=5)
    (s,) = info.value.strata
    assert (s["factor"], s["value"], s["available"], s["needed"]) == ("v", "PA", 3, 5)
    assert s["reference_proportion"] == 0.5
    assert "v=PA" in str(info.value)
    # a lower threshold lets it through
    res = match_prefix(ref, ext, ["v"], seed=0, min_stratum=3)
    assert marginal(res.to_dataset(), "v") == {"AP": 0.5, "PA": 0.5}


def test_absent_rare_stratum_dropped():
    # reference proportion below 1/n and no external rows: dropped, not an error
    ref = make_dataset(np.linspace(0, 1, 1000), np.arange(1000) % 2, site="ref",
                       v=["AP"] * 600 + ["PA"] * 399 + ["LL"])
    ext = make_dataset(np.linspace(0, 1, 100), np.arange(100) % 2, site="ext", v=["AP"] * 20 + ["PA"] * 80)
    res = match_prefix(ref, ext, ["v"], seed=0)
    assert res.plan.steps[0].dropped == ("LL",)
    assert marginal(res.to_dataset(), "v") == {"AP": 0.6, "PA": 0.4}


def test_group_members_matched_individually():
    rng = np.random.default_rng(4)
    n = 400
    flags_ref = rng.random((n, 2)) < [0.5, 0.2]
    flags_ext = rng.random((n, 2)) < [0.2, 0.4]
    ref = make_dataset(rng.random(n), np.arange(n) % 2, site="ref", c=(("atel", "card"), flags_ref))
    ext = make_dataset(rng.random(n), np.arange(n) % 2, site="ext", c=(("atel", "card"), flags_ext))
    res = match_prefix(ref, ext, ["c"], seed=2)
    assert [str(s.variable) for s in res.plan.steps] == ["c.atel", "c.card"]
    got = marginal(res.to_dataset(), "c")
    assert got["card"] == pytest.approx(marginal(ref, "c")["card"], abs=1 / n)


def test_unknown_factor():
    ref, ext = race_sites()
    with pytest.raises(ConfigError, match="unknown factor"):
        match_prefix(ref, ext, ["age"], seed=0)


def test_mixture_auc_oracle():
    scenario = load_scenario({
        "name": "mixture", "seed": 17, "sizes": {"reference": 40000, "external": 40000},
        "factors": [{"name": "stratum", "values": ["A", "B"], "reference": [0.8, 0.2], "external": [0.2, 0.8]}],
        "scores": {
            "positive": {"family": "normal", "mean": 0.6812, "sd": 0.1},
            "negative": {"family": "normal", "mean": 0.5, "sd": 0.1},
            "effects": [{"factor": "stratum", "value": "B", "positive_shift": -0.1454}],
        },
    })
    assert analytic_auc(scenario, {"A": 1.0}) == pytest.approx(0.9, abs=1e-3)
    assert analytic_auc(scenario, {"B": 1.0}) == pytest.approx(0.6, abs=1e-3)
    ref, ext = generate(scenario)
    want = analytic_auc(scenario, {"A": 0.8, "B": 0.2})
    got = matched_performance(ref, ext, ["stratum"], seed=3, resample_reps=4)
    assert got == pytest.approx(want, abs=0.01)
    assert auc(ext.scores, ext.labels) == pytest.approx(analytic_auc(scenario, {"A": 0.2, "B": 0.8}), abs=0.01)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=8).filter(lambda c: sum(c) > 0), st.integers(0, 500))
def test_largest_remainder(counts, n):
    total = sum(counts)
    out = largest_remainder(np.array(counts), total, n)
    assert out.sum() == n
    exact = np.array(counts) * n / total
    assert np.all(np.abs(out - exact) < 1)
    assert np.all(out[np.array(counts) == 0] == 0)

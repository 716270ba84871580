from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siteshap.errors import UndefinedMetricError
from siteshap.metric import MetricResult, auc, bootstrap_ci, point_result


def pair_count_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, q in itertools.product(pos, neg):
        total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def test_perfect_separation():
    assert auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0


def test_all_ties():
    assert auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5


def test_hand_enumerated_pairs():
    assert auc([0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75
    assert pair_count_auc([0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75


def test_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2, 0.3], [1, 0, 1], weights=[1, 0, 1])


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 0], weights=[1, -1])


def test_exhaustive_pair_counting_1000_datasets():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        # coarse grid forces ties
        scores = rng.integers(0, 8, n) / 7.0
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        assert auc(scores, labels) == pair_count_auc(scores.tolist(), labels.tolist())


labelled = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 20).map(lambda k: k / 20), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)),
))


@settings(max_examples=200, deadline=None)
@given(labelled)
def test_matches_pair_oracle(data):
    scores, labels = data
    assert auc(scores, labels) == pair_count_auc(scores, labels)


@settings(max_examples=200, deadline=None)
@given(labelled)
def test_monotone_transform_invariance(data):
    scores, labels = data
    s = np.asarray(scores)
    assert auc(s, labels) == auc(s ** 3, labels) == auc(np.sqrt(s) * 0.5 + 0.25, labels)


@settings(max_examples=200, deadline=None)
@given(labelled)
def test_label_flip(data):
    scores, labels = data
    flipped = [1 - y for y in labels]
    assert auc(scores, flipped) == pytest.approx(1 - auc(scores, labels), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(labelled.flatmap(lambda d: st.tuples(
    st.just(d), st.lists(st.integers(1, 5), min_size=len(d[0]), max_size=len(d[0])))))
def test_integer_weights_equal_replication(data):
    (scores, labels), w = data
    rep_scores = np.repeat(scores, w)
    rep_labels = np.repeat(labels, w)
    assert auc(scores, labels, weights=w) == auc(rep_scores, rep_labels)


def test_zero_weight_drops_record():
    assert auc([0.9, 0.1, 0.5, 0.2], [1, 0, 0, 1], weights=[1, 1, 1, 0]) == auc([0.9, 0.1, 0.5], [1, 0, 0])


# -- bootstrap ----------------------------------------------------------------


def test_degenerate_bootstrap():
    res = bootstrap_ci([0.9, 0.8, 0.7, 0.3, 0.2, 0.1], [1, 1, 1, 0, 0, 0], replicates=200, seed=1)
    assert (res.ci_low, res.value, res.ci_high) == (1.0, 1.0, 1.0)


def test_bootstrap_width_ballpark():
    # noise wide enough that AUC lands near 0.89, the level of the comparable reported intervals
    rng = np.random.default_rng(7)
    labels = np.repeat([0, 1], 1000)
    raw = labels + rng.uniform(-0.94, 0.94, labels.size)
    scores = (raw + 0.94) / 2.88
    res = bootstrap_ci(scores, labels, replicates=1000, seed=11)
    assert 0.87 < res.value < 0.91
    half = (res.ci_high - res.ci_low) / 2
    assert 0.008 <= half <= 0.019


def test_bootstrap_deterministic_and_worker_invariant():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, 300)
    scores = np.clip(0.5 + 0.2 * (labels - 0.5) + 0.2 * rng.standard_normal(300), 0, 1)
    a = bootstrap_ci(scores, labels, replicates=300, seed=5)
    b = bootstrap_ci(scores, labels, replicates=300, seed=5)
    c = bootstrap_ci(scores, labels, replicates=300, seed=5, workers=4)
    assert a == b == c
    assert a != bootstrap_ci(scores, labels, replicates=300, seed=6)
    assert a.ci_low <= a.value <= a.ci_high
    assert 0 <= a.ci_low and a.ci_high <= 1
    assert (a.n_pos, a.n_neg) == (int(labels.sum()), int(300 - labels.sum()))


def test_bootstrap_needs_replicates():
    with pytest.raises(ValueError):
        bootstrap_ci([0.9, 0.1], [1, 0], replicates=10)


def test_metric_result_round_trip():
    r = point_result([0.9, 0.2, 0.4], [1, 0, 1])
    assert r.ci_low == r.value == r.ci_high == 1.0
    assert MetricResult.from_dict(r.to_dict()) == r


def test_pluggable_metric():
    def accuracy(scores, labels, weights=None):
        w = np.ones(len(scores)) if weights is None else np.asarray(weights, float)
        hit = (np.asarray(scores) >= 0.5) == (np.asarray(labels) == 1)
        return float((w * hit).sum() / w.sum())

    res = bootstrap_ci([0.9, 0.6, 0.4, 0.7], [1, 1, 0, 0], metric=accuracy, replicates=100, seed=0)
    assert res.value == 0.75

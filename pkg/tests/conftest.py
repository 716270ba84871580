from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from siteshap.dataset import CATEGORICAL, GROUP, FactorSpec, ScoredDataset

FIXTURES = Path(__file__).parent / "fixtures"


def make_dataset(scores, labels, site="site", **factors) -> ScoredDataset:
    """Build a dataset from token lists (categorical) or bool matrices (group, via a (members, rows) tuple)."""
    specs, columns = [], {}
    for name, values in factors.items():
        if isinstance(values, tuple):
            members, rows = values
            specs.append(FactorSpec(name, GROUP, members=tuple(members)))
            columns[name] = np.asarray(rows, dtype=bool).reshape(len(scores), len(members))
        else:
            vocab = tuple(sorted(set(map(str, values))))
            specs.append(FactorSpec(name, CATEGORICAL, vocabulary=vocab))
            columns[name] = np.array([vocab.index(str(v)) for v in values], dtype=np.int32)
    return ScoredDataset(site=site, scores=np.asarray(scores, dtype=float),
                         labels=np.asarray(labels, dtype=np.int8), specs=tuple(specs), columns=columns)


def random_site(rng: np.random.Generator, n: int, probs: dict[str, list[float]], site="site", shift=None):
    """Random categorical site; ``shift[factor][value]`` moves positive scores."""
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    latent = 0.5 + 0.2 * labels + 0.1 * rng.standard_normal(n)
    cols = {}
    for name, p in probs.items():
        codes = rng.choice(len(p), size=n, p=p)
        cols[name] = [str(c) for c in codes]
        for value, amount in (shift or {}).get(name, {}).items():
            latent[(codes == int(value)) & (labels == 1)] += amount
    scores = 1 / (1 + np.exp(-(latent - 0.5) / 0.1))
    return make_dataset(scores, labels, site=site, **cols)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES

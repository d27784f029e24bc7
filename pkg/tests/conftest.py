import numpy as np
import pytest

from batchcal import GroupCollection, ScoreTable


def make_table(rng, n, n_groups, ensure_nonempty=True, jitterless=False):
    """Random table with uniform scores and Bernoulli group membership."""
    scores = rng.uniform(0.0, 1.0, size=n)
    membership = rng.uniform(size=(n, n_groups)) < rng.uniform(0.3, 0.8)
    if ensure_nonempty:
        for g in range(n_groups):
            if not membership[:, g].any():
                membership[rng.integers(0, n), g] = True
    if jitterless:
        scores = np.round(scores, 6)
    groups = GroupCollection(tuple(f"g{i}" for i in range(n_groups)))
    return ScoreTable(scores, membership), groups


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)

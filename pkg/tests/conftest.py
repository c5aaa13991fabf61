import numpy as np
import pytest

from gnnrerank.feature_io import SynthSpec, make_feature_set, synth_dataset

BENCH_SPEC = SynthSpec(n_classes=50, per_class=20, dim=64, noise_sigma=0.1, queries_per_class=5, seed=1)


@pytest.fixture(scope="session")
def bench_data():
    """The seeded synthetic benchmark: 250 queries, 750 gallery items, d=64."""
    return synth_dataset(BENCH_SPEC)


def random_pair(rng, n, d, n_query=None, grid=False):
    """Random query/gallery split of n points; ``grid`` draws from {-2..2}^d
    so that duplicates and exact similarity ties are common."""
    if grid:
        x = rng.integers(-2, 3, (n, d)).astype(float)
        x[np.abs(x).sum(axis=1) == 0, 0] = 1.0
    else:
        x = rng.standard_normal((n, d))
    nq = n_query if n_query is not None else int(rng.integers(1, min(10, n - 1) + 1))
    return make_feature_set(x[:nq], role="query"), make_feature_set(x[nq:], role="gallery")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)

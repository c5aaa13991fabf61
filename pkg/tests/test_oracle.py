"""Sanity checks of the reference transcriptions themselves."""
import numpy as np

import oracle
from conftest import random_pair
from gnnrerank.baselines import KReciprocalConfig
from gnnrerank.feature_io import make_feature_set
from gnnrerank.gnn import GnnConfig


class TestOracleGnn:
    def test_single_gallery_item(self, rng):
        q, g = random_pair(rng, 4, 3, n_query=3)
        rr = oracle.oracle_gnn_rerank(q, g, GnnConfig(2, 1))
        assert rr.indices.tolist() == [[0], [0], [0]]

    def test_alpha_zero_ignores_weights(self, rng):
        n = 12
        h = [np.abs(r) for r in rng.standard_normal((n, n))]
        nbrs = [rng.choice(n, 3, replace=False).tolist() for _ in range(n)]
        w1 = [rng.uniform(0.1, 1, 3).tolist() for _ in range(n)]
        w2 = [rng.uniform(0.1, 9, 3).tolist() for _ in range(n)]
        a = oracle.dense_propagate(h, nbrs, w1, 0.0, 2, "sum")
        b = oracle.dense_propagate(h, nbrs, w2, 0.0, 2, "sum")
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)

    def test_unit_rows(self, rng):
        q, g = random_pair(rng, 15, 4)
        h, _ = oracle.gnn_features(q, g, 5, 3, 2.0, 3, "max")
        np.testing.assert_allclose([np.linalg.norm(r) for r in h], 1.0, atol=1e-12)


class TestOracleKReciprocal:
    def test_lambda_one_is_cosine_order(self, rng):
        q, g = random_pair(rng, 20, 3)
        a = oracle.oracle_k_reciprocal(q, g, KReciprocalConfig(5, 3, 1.0))
        assert a.same_order(oracle.oracle_cosine_rank(q, g))

    def test_two_clusters(self):
        rng = np.random.default_rng(2)
        a = np.array([1.0, 0.0, 0.0]) + 0.05 * rng.standard_normal((5, 3))
        b = np.array([0.0, 0.0, 1.0]) + 0.05 * rng.standard_normal((5, 3))
        q = make_feature_set(np.vstack([a[:1], b[:1]]), role="query")
        g = make_feature_set(np.vstack([a[1:], b[1:]]))
        rr = oracle.oracle_k_reciprocal(q, g, KReciprocalConfig(4, 2, 0.3))
        assert set(rr.indices[0, :4].tolist()) == {0, 1, 2, 3}
        assert set(rr.indices[1, :4].tolist()) == {4, 5, 6, 7}


class TestOracleAp:
    def test_reciprocal_rank(self):
        labels = np.zeros(8, dtype=int)
        labels[4] = 1
        assert oracle.oracle_average_precision(list(range(8)), labels, 1, -1, np.full(8, -1)) == 0.2

    def test_quantizer_matches_numpy(self, rng):
        x = rng.uniform(-2, 2, 5000)
        x[:100] = np.round(x[:100], 10) + 5e-11
        np.testing.assert_array_equal([oracle._q(v) for v in x], np.round(x, 10) + 0.0)

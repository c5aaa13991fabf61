import csv
import json

import numpy as np
import pytest

from conftest import random_pair
from gnnrerank.bench import CSV_FIELDS, _median_run, append_csv, run_bench
from gnnrerank.feature_io import SynthSpec, synth_dataset
from gnnrerank.pipeline import MethodParams, run_method


@pytest.fixture(scope="module")
def small():
    return synth_dataset(SynthSpec(10, 8, 16, 0.2, 2, seed=5))


class TestMedian:
    def test_odd(self):
        assert _median_run([(1, 1, 5), (2, 2, 3), (3, 3, 9)]) == (1.0, 1.0, 5.0)

    def test_even(self):
        assert _median_run([(1, 1, 4), (3, 3, 2), (5, 5, 8), (7, 7, 6)]) == (4.0, 4.0, 5.0)


class TestRunBench:
    def test_repeats_and_invariants(self, small):
        q, g = small
        (r,) = run_bench(q, g, ["gnn"], MethodParams(n_classes=10), repeats=3)
        assert len(r.per_repeat) == 3
        assert r.total_s == sorted(r.per_repeat)[1]
        assert r.total_s >= max(r.phase1_s, r.phase2_s)
        assert r.phase1_s + r.phase2_s <= r.total_s + 1e-3
        assert r.params.k1 == 8

    def test_rankings_match_unbenchmarked(self, small):
        q, g = small
        params = MethodParams(n_classes=10)
        results = run_bench(q, g, ["none", "gnn", "kreciprocal", "aqe", "alpha-qe"], params, repeats=1)
        for r in results:
            plain = run_method(r.method, q, g, params)
            assert r.ranking.same_order(plain), r.method

    def test_deterministic_rankings(self, small):
        q, g = small
        a = run_bench(q, g, ["gnn"], MethodParams(k1=8), repeats=1, warmup=False)[0]
        b = run_bench(q, g, ["gnn"], MethodParams(k1=8), repeats=1, warmup=False)[0]
        assert a.ranking.same_order(b.ranking)
        assert a.map == b.map

    def test_per_method_params(self, small):
        q, g = small
        res = run_bench(q, g, ["gnn", "aqe"], {"gnn": MethodParams(k1=8), "aqe": MethodParams(qe_k=3)},
                        repeats=1, warmup=False)
        assert [r.method for r in res] == ["gnn", "aqe"]

    def test_rejects_zero_repeats(self, small):
        with pytest.raises(ValueError):
            run_bench(*small, ["none"], MethodParams(), repeats=0)

    @pytest.mark.slow
    def test_phase2_scaling(self):
        rng = np.random.default_rng(8)
        times = []
        for n in (3000, 6000):
            q, g = random_pair(rng, n, 32, n_query=100)
            (r,) = run_bench(q, g, ["gnn"], MethodParams(k1=20), repeats=3)
            times.append(r.phase2_s)
        assert times[1] <= 4 * times[0]


class TestCsv:
    def test_append(self, small, tmp_path):
        q, g = small
        out = tmp_path / "bench.csv"
        res = run_bench(q, g, ["none", "gnn"], MethodParams(k1=8), repeats=1, warmup=False)
        append_csv(res, out)
        append_csv(res[:1], out)
        with open(out, newline="") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == CSV_FIELDS
        assert [r["method"] for r in rows] == ["none", "gnn", "none"]
        assert rows[1]["k1"] == "8" and rows[1]["n_gallery"] == str(g.n)
        machine = json.loads((tmp_path / "bench.csv.machine.json").read_text())
        assert machine["cpu_count"] >= 1

import numpy as np
import pytest

from oracles import dense_grid
from treeopt.benchmarks import make_benchmark, random_search
from treeopt.bo import (
    BOConfig,
    init_design,
    propose,
    random_acq_optimize,
    relative_model_error,
    run_campaign,
    uncertainty_study,
)
from treeopt.data import Dataset
from treeopt.solver import SolverConfig, build_problem, evaluate_many, solve, warm_start
from treeopt.tree_model import GBRTParams, train

SMALL = GBRTParams(num_trees=20, min_samples_leaf=3)


def small_config(**kw):
    base = dict(budget=14, init_points=8, gbrt=SMALL, solver=SolverConfig(node_limit=100), seed=101)
    base.update(kw)
    return BOConfig(**base)


class TestConfig:
    def test_defaults(self):
        c = BOConfig()
        assert (c.budget, c.init_points, c.kappa, c.zeta) == (300, 50, 1.96, 0.5)
        assert (c.gbrt.num_trees, c.gbrt.max_depth, c.gbrt.max_leaves, c.gbrt.min_samples_leaf) == (400, 3, 5, 20)

    @pytest.mark.parametrize("kw", [dict(init_points=300), dict(kappa=-1.0), dict(zeta=-0.1), dict(mode="ucb")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            BOConfig(**kw)


class TestPropose:
    def test_within_bounds_and_deterministic(self):
        b = make_benchmark("rosenbrock", 2)
        X = init_design(b.lower, b.upper, 20, 3)
        data = Dataset(X, b.evaluate_many(X))
        for mode in ("explore", "penalty", "cluster-penalty"):
            cfg = small_config(mode=mode, cluster_count=4)
            p1 = propose(data, (b.lower, b.upper), cfg)
            p2 = propose(data, (b.lower, b.upper), cfg)
            np.testing.assert_array_equal(p1.x, p2.x)
            assert np.all(p1.x >= b.lower) and np.all(p1.x <= b.upper)

    def test_large_kappa_maximizes_distance_1d(self):
        # with kappa huge and a generous cap, the proposal is the point farthest from the data
        X = np.array([[0.1], [0.35], [0.4], [0.9]])
        data = Dataset(X, np.array([1.0, -1.0, 3.0, 0.0]))
        cfg = small_config(kappa=1e4, zeta=1e6, metric="manhattan", solver=SolverConfig(rel_gap=1e-9))
        x = propose(data, ([0.0], [1.0]), cfg).x
        grid = np.linspace(0, 1, 10001)
        std = X.std()
        far = np.min(np.abs(grid[:, None] - X[:, 0][None, :]), axis=1) / std
        assert x[0] == pytest.approx(grid[np.argmax(far)], abs=1e-4)

    def test_duplicate_guard(self):
        # kappa = 0 penalty proposes the best reference, which is already in the data
        X = np.array([[0.2], [0.5], [0.8]])
        data = Dataset(X, np.array([1.0, 0.0, 2.0]))
        cfg = small_config(mode="penalty", kappa=5.0, gbrt=GBRTParams(num_trees=3, min_samples_leaf=1))
        p = propose(data, ([0.0], [1.0]), cfg)
        assert p.guarded in ("midpoint", "random")
        assert np.min(np.abs(X[:, 0] - p.x[0])) > 1e-9


class TestCampaign:
    def test_trace_shape(self):
        b = make_benchmark("sphere", 2)
        tr = run_campaign(b, (b.lower, b.upper), small_config())
        assert len(tr) == 14
        assert [r["phase"] for r in tr.rows] == ["init"] * 8 + ["optimize"] * 6
        assert np.all(np.diff(tr.best) <= 0)
        for r in tr.rows:
            assert r["f"] == b(r["x"])
            assert np.all(r["x"] >= b.lower) and np.all(r["x"] <= b.upper)

    def test_deterministic_csv(self):
        b = make_benchmark("sphere", 2)
        a = run_campaign(b, (b.lower, b.upper), small_config()).to_csv()
        assert a == run_campaign(b, (b.lower, b.upper), small_config()).to_csv()
        assert a.splitlines()[0] == "iter,phase,x_0,x_1,f,best,ub,lb,gap,nodes,seconds"

    def test_init_matches_random_search(self):
        b = make_benchmark("ackley", 3)
        tr = run_campaign(b, (b.lower, b.upper), small_config())
        rs = random_search(b, 30, seed=101)
        np.testing.assert_array_equal(tr.X[:8], rs.X[:8])

    def test_modes_share_init_design(self):
        b = make_benchmark("sphere", 2)
        a = run_campaign(b, (b.lower, b.upper), small_config(mode="explore"))
        c = run_campaign(b, (b.lower, b.upper), small_config(mode="penalty"))
        np.testing.assert_array_equal(a.X[:8], c.X[:8])

    def test_failure_flags_partial_trace(self):
        calls = []

        def flaky(x):
            calls.append(x)
            if len(calls) == 5:
                raise RuntimeError("instrument offline")
            return float(np.sum(x))

        tr = run_campaign(flaky, ([0, 0], [1, 1]), small_config())
        assert len(tr) == 4
        assert "instrument offline" in tr.aborted

    def test_sphere_improves_on_init(self):
        b = make_benchmark("sphere", 2)
        cfg = BOConfig(budget=80, init_points=50, gbrt=GBRTParams(num_trees=50), seed=101,
                       solver=SolverConfig(node_limit=200))
        tr = run_campaign(b, (b.lower, b.upper), cfg)
        assert tr.best[-1] <= tr.best[49]


class TestRandomAcquisition:
    def _problem(self):
        b = make_benchmark("rosenbrock", 2)
        X = init_design(b.lower, b.upper, 30, 0)
        data = Dataset(X, b.evaluate_many(X))
        return build_problem(train(data, SMALL), data, b.lower, b.upper, mode="penalty", metric="manhattan")

    def test_single_sample(self):
        prob = self._problem()
        x, v = random_acq_optimize(prob, 1, seed=3)
        expected = np.random.default_rng(3).uniform(prob.grid.lower, prob.grid.upper, size=(1, 2))[0]
        np.testing.assert_array_equal(x, expected)
        assert v == evaluate_many(prob, x[None])[0]

    def test_seeded_and_dominated(self):
        prob = self._problem()
        a = random_acq_optimize(prob, 500, seed=1)
        b = random_acq_optimize(prob, 500, seed=1)
        np.testing.assert_array_equal(a[0], b[0])
        assert solve(prob).upper_bound <= a[1]
        assert solve(prob).upper_bound <= warm_start(prob)[1]


class TestStudy:
    def test_error_formula(self):
        assert relative_model_error(2.0, 1.0) == 0.5
        assert np.isnan(relative_model_error(0.0, 1.0))

    def test_table(self):
        b = make_benchmark("rosenbrock", 2)
        res = uncertainty_study(b, (b.lower, b.upper), [8, 0.5, 2], n_train=40, seeds=[1, 2],
                                gbrt=SMALL, solver=SolverConfig(node_limit=200))
        assert res.kappas == [0.5, 2.0, 8.0]
        assert [row["kappa"] for row in res.table] == [0.5, 2.0, 8.0]
        assert res.to_csv().splitlines()[0] == ("kappa,n,excluded,median_error,q1_error,q3_error,"
                                                "band_lo_error,band_hi_error,median_mu,q1_mu,q3_mu")
        for seed, kappa, mu, f, err, x in res.records:
            assert f == b(x)

    def test_huge_kappa_returns_training_point(self):
        b = make_benchmark("rosenbrock", 2)
        res = uncertainty_study(b, (b.lower, b.upper), [1e6], n_train=30, seeds=[5], gbrt=SMALL)
        X = init_design(b.lower, b.upper, 30, 5)
        x = res.records[0][5]
        assert np.min(np.abs(X - x).sum(axis=1)) < 1e-9

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            uncertainty_study(lambda x: 0.0, ([0], [1]), [], n_train=5, seeds=[1])

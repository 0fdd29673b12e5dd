import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import all_cells, interior_thresholds, naive_predict, random_ensemble, walk
from treeopt.tree_model import (
    Box,
    IntervalGrid,
    LeafTable,
    Tree,
    TreeEnsemble,
    build_interval_grid,
    min_prediction_bound,
    partition_refine_bound,
    reachable_leaves,
)


def stump(t, feature=0, left=1.0, right=2.0):
    return Tree.from_nodes([{"feature": feature, "threshold": t, "left": 1, "right": 2},
                            {"value": left}, {"value": right}])


def random_box(rng, grid):
    lo, hi = [], []
    for m in grid.m:
        a, b = sorted(rng.integers(0, m + 1, size=2))
        lo.append(int(a))
        hi.append(int(b))
    return Box(tuple(lo), tuple(hi))


def cells_in(box, ens, grid):
    for idx, lo, hi in all_cells(ens, grid.lower, grid.upper):
        if all(a <= k <= b for a, k, b in zip(box.lo, idx, box.hi)):
            yield idx, lo, hi


class TestBuildGrid:
    def test_single_threshold(self):
        g = build_interval_grid(TreeEnsemble((stump(0.5),), 0.0, 1), [0.0], [1.0])
        np.testing.assert_array_equal(g.edges[0], [0.0, 0.5, 1.0])
        assert g.m[0] == 1

    def test_duplicates_collapse(self):
        g = build_interval_grid(TreeEnsemble((stump(0.5), stump(0.5), stump(0.5 + 1e-13)), 0.0, 1), [0.0], [1.0])
        assert g.m[0] == 1

    def test_outside_thresholds_dropped(self):
        g = build_interval_grid(TreeEnsemble((stump(1.5), stump(-0.5), stump(1.0), stump(0.25)), 0.0, 1),
                                [0.0], [1.0])
        np.testing.assert_array_equal(g.thresholds[0], [0.25])

    def test_threshold_on_lower_bound_kept(self):
        # x = 0 goes left at a split on 0.0, so the face {0} is its own cell
        ens = TreeEnsemble((stump(0.0, left=-5.0, right=1.0),), 0.0, 1)
        g = build_interval_grid(ens, [0.0], [1.0])
        np.testing.assert_array_equal(g.edges[0], [0.0, 0.0, 1.0])
        assert g.cell_of([0.0]) == (0,) and g.cell_of([1e-300]) == (1,)
        assert min_prediction_bound(ens, Box.cell((0,)), g) == -5.0
        assert min_prediction_bound(ens, Box.cell((1,)), g) == 1.0

    def test_degenerate_bounds(self):
        with pytest.raises(ValueError, match="degenerate"):
            build_interval_grid(TreeEnsemble((stump(0.5),), 0.0, 1), [1.0], [1.0])

    def test_matches_set_oracle(self, rng):
        for _ in range(20):
            ens = random_ensemble(rng, 3, 6)
            g = build_interval_grid(ens, np.zeros(3), np.ones(3))
            for mine, ref in zip(g.thresholds, interior_thresholds(ens, np.zeros(3), np.ones(3))):
                np.testing.assert_array_equal(mine, ref)

    def test_cell_of_half_open(self):
        g = IntervalGrid(np.array([0.0]), np.array([1.0]), (np.array([0.5]),))
        assert g.cell_of([0.0]) == (0,)
        assert g.cell_of([0.5]) == (0,)
        assert g.cell_of([0.50001]) == (1,)
        assert g.cell_of([1.0]) == (1,)


class TestReachable:
    def test_full_box_reaches_all(self):
        tree = Tree.from_nodes([
            {"feature": 0, "threshold": 0.3, "left": 1, "right": 2},
            {"value": 1.0},
            {"feature": 1, "threshold": 0.6, "left": 3, "right": 4},
            {"value": 2.0},
            {"value": 3.0},
        ])
        g = build_interval_grid(TreeEnsemble((tree,), 0.0, 2), [0.0, 0.0], [1.0, 1.0])
        assert reachable_leaves(tree, Box.full(g), g) == [1, 3, 4]

    def test_out_of_domain_branch_unreachable(self):
        tree = stump(1.5)
        g = build_interval_grid(TreeEnsemble((tree,), 0.0, 1), [0.0], [1.0])
        assert reachable_leaves(tree, Box.full(g), g) == [1]

    def test_cell_reaches_one_leaf(self, rng):
        ens = random_ensemble(rng, 2, 3)
        g = build_interval_grid(ens, np.zeros(2), np.ones(2))
        for idx, lo, hi in all_cells(ens, g.lower, g.upper):
            for tree in ens.trees:
                reach = reachable_leaves(tree, Box.cell(idx), g)
                assert len(reach) == 1
                assert tree.value[reach[0]] == walk(tree, 0.5 * (lo + hi))

    def test_matches_cell_union(self, rng):
        for _ in range(30):
            ens = random_ensemble(rng, 2, 3)
            g = build_interval_grid(ens, np.zeros(2), np.ones(2))
            box = random_box(rng, g)
            for tree in ens.trees:
                expected = set()
                for _, lo, hi in cells_in(box, ens, g):
                    mid = 0.5 * (lo + hi)
                    k = 0
                    while tree.feature[k] >= 0:
                        k = tree.left[k] if mid[tree.feature[k]] <= tree.threshold[k] else tree.right[k]
                    expected.add(int(k))
                assert set(reachable_leaves(tree, box, g)) == expected


class TestBounds:
    def test_cell_bound_is_prediction(self, rng):
        ens = random_ensemble(rng, 2, 5)
        g = build_interval_grid(ens, np.zeros(2), np.ones(2))
        for idx, lo, hi in all_cells(ens, g.lower, g.upper):
            b = min_prediction_bound(ens, Box.cell(idx), g)
            assert b == pytest.approx(naive_predict(ens, 0.5 * (lo + hi)), abs=1e-12)

    def test_single_tree_bound_is_exact(self, rng):
        for _ in range(20):
            ens = random_ensemble(rng, 2, 1)
            g = build_interval_grid(ens, np.zeros(2), np.ones(2))
            box = random_box(rng, g)
            exact = min(naive_predict(ens, 0.5 * (lo + hi)) for _, lo, hi in cells_in(box, ens, g))
            assert min_prediction_bound(ens, box, g) == pytest.approx(exact, abs=1e-12)

    def test_group_of_all_trees_is_exact(self, rng):
        for _ in range(20):
            ens = random_ensemble(rng, 2, 5)
            g = build_interval_grid(ens, np.zeros(2), np.ones(2))
            box = random_box(rng, g)
            exact = min(naive_predict(ens, 0.5 * (lo + hi)) for _, lo, hi in cells_in(box, ens, g))
            assert partition_refine_bound(ens, box, g, group_size=5) == pytest.approx(exact, abs=1e-12)

    def test_group_of_one_is_plain_bound(self, rng):
        ens = random_ensemble(rng, 3, 6)
        g = build_interval_grid(ens, np.zeros(3), np.ones(3))
        box = random_box(rng, g)
        assert partition_refine_bound(ens, box, g, group_size=1) == min_prediction_bound(ens, box, g)

    def test_budget_overrun_falls_back(self, rng):
        ens = random_ensemble(rng, 3, 6)
        g = build_interval_grid(ens, np.zeros(3), np.ones(3))
        box = Box.full(g)
        assert partition_refine_bound(ens, box, g, group_size=6, node_budget=1) == min_prediction_bound(ens, box, g)

    def test_group_size_range(self, rng):
        ens = random_ensemble(rng, 1, 3)
        g = build_interval_grid(ens, np.zeros(1), np.ones(1))
        with pytest.raises(ValueError):
            partition_refine_bound(ens, Box.full(g), g, group_size=4)

    def test_empty_ensemble(self):
        ens = TreeEnsemble((), 2.5, 1)
        g = build_interval_grid(ens, [0.0], [1.0])
        assert min_prediction_bound(ens, Box.full(g), g) == 2.5
        assert partition_refine_bound(ens, Box.full(g), g) == 2.5


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 6), st.integers(1, 6))
def test_bound_sandwich(seed, n, n_trees, group):
    rng = np.random.default_rng(seed)
    ens = random_ensemble(rng, n, n_trees)
    g = build_interval_grid(ens, np.zeros(n), np.ones(n))
    if g.n_cells > 2000:
        return
    box = random_box(rng, g)
    plain = min_prediction_bound(ens, box, g)
    refined = partition_refine_bound(ens, box, g, group_size=min(group, n_trees))
    exact = min(naive_predict(ens, 0.5 * (lo + hi)) for _, lo, hi in cells_in(box, ens, g))
    assert plain <= refined + 1e-12
    assert refined <= exact + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_bound_monotone_under_shrinking(seed, n):
    rng = np.random.default_rng(seed)
    ens = random_ensemble(rng, n, 4)
    g = build_interval_grid(ens, np.zeros(n), np.ones(n))
    outer = random_box(rng, g)
    lo, hi = [], []
    for a, b in zip(outer.lo, outer.hi):
        c, d = sorted(rng.integers(a, b + 1, size=2))
        lo.append(int(c))
        hi.append(int(d))
    inner = Box(tuple(lo), tuple(hi))
    assert outer.contains(inner)
    table = LeafTable(ens, g)
    assert min_prediction_bound(ens, inner, g, table) >= min_prediction_bound(ens, outer, g, table)

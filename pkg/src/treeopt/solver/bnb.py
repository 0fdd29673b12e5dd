"""Best-bound-first spatial branch-and-bound over the interval grid.

Node lower bounds split into a tree-model part (sum of per-tree minima over
reachable leaves, optionally tightened by grouped exact minima) and an
uncertainty part computed from the reference points and the node box:

* penalty modes: ``kappa`` times the smallest distance from any reference
  to its projection onto the box, which is exact on a single cell;
* explore mode: ``-kappa * min(alpha_limit, min_r maxdist(r, box))``, which
  over-estimates the max-min distance and is closed by bisecting single
  cells along their longest standardized side.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from ..tree_model import Box
from ..tree_model.grid import refine_bound, total
from .problem import AcquisitionProblem, Mode, evaluate_many

MIN_WIDTH = 1e-10  # standardized width below which explore cells are not bisected further


@dataclass(frozen=True)
class SolverConfig:
    rel_gap: float = 1e-4
    time_limit: float = 120.0
    lookahead: int = 200
    group_size: int = 20
    refine: bool = True
    refine_budget: int = 10_000
    node_limit: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.rel_gap > 0:
            raise ValueError("rel_gap must be positive")
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.lookahead < 1:
            raise ValueError("lookahead must be >= 1")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node_limit must be >= 1")


@dataclass(frozen=True)
class SolveResult:
    x_next: np.ndarray
    upper_bound: float
    lower_bound: float
    rel_gap: float
    nodes_explored: int
    wall_time: float
    termination: str  # "gap" | "time" | "node-limit"
    history: tuple = field(default=(), repr=False)  # (nodes, ub, lb) whenever a bound moves

    def as_dict(self) -> dict:
        return {
            "x_next": [float(v) for v in self.x_next],
            "upper_bound": float(self.upper_bound),
            "lower_bound": float(self.lower_bound),
            "rel_gap": float(self.rel_gap),
            "nodes_explored": int(self.nodes_explored),
            "termination": self.termination,
        }


@dataclass(eq=False)
class BnBNode:
    lo: np.ndarray
    hi: np.ndarray
    lower: np.ndarray  # continuous box, raw coordinates
    upper: np.ndarray
    mu_bound: float = -np.inf
    unc_bound: float = -np.inf
    lower_bound: float = -np.inf
    depth: int = 0
    creation_index: int = 0
    refined: bool = False

    @property
    def is_cell(self) -> bool:
        return bool(np.array_equal(self.lo, self.hi))

    @property
    def box(self) -> Box:
        return Box(tuple(int(v) for v in self.lo), tuple(int(v) for v in self.hi))


def relative_gap(ub: float, lb: float) -> float:
    return (ub - lb) / max(1.0, abs(ub))


def _margin(ub: float, rel_gap: float) -> float:
    return rel_gap * max(1.0, abs(ub)) if np.isfinite(ub) else 0.0


def make_node(problem: AcquisitionProblem, box: Box, creation_index: int = 0, depth: int = 0) -> BnBNode:
    box.validate(problem.grid)
    lower, upper = box.continuous_bounds(problem.grid)
    node = BnBNode(np.array(box.lo), np.array(box.hi), lower, upper, depth=depth, creation_index=creation_index)
    _bound(problem, node)
    return node


def _std_box(problem: AcquisitionProblem, node: BnBNode):
    return problem.std.transform(node.lower), problem.std.transform(node.upper)


def _uncertainty_bound(problem: AcquisitionProblem, slo, shi) -> float:
    r = problem.refs.points
    if problem.mode is Mode.EXPLORE:
        far = np.maximum(np.abs(shi - r), np.abs(r - slo))
        d = problem.metric.aggregate(far).min()
    else:
        d = problem.metric.aggregate(r - np.clip(r, slo, shi)).min()
    return float(problem.uncertainty_term(d))


def _bound(problem: AcquisitionProblem, node: BnBNode, floor: float = -np.inf) -> None:
    node.mu_bound = problem.table.bound(node.lo, node.hi)
    node.unc_bound = _uncertainty_bound(problem, *_std_box(problem, node))
    node.lower_bound = max(floor, node.mu_bound + node.unc_bound)


def node_lower_bound(problem: AcquisitionProblem, node: BnBNode, refine: bool = False,
                     group_size: int = 20, budget: int = 10_000) -> float:
    """Valid lower bound of the acquisition over the node's region."""
    mu = problem.table.bound(node.lo, node.hi)
    if refine and problem.table.n_trees:
        mu = max(mu, refine_bound(problem.table, node.lo, node.hi,
                                  min(group_size, problem.table.n_trees), budget))
    return mu + _uncertainty_bound(problem, *_std_box(problem, node))


def _nudge_into(problem: AcquisitionProblem, node: BnBNode, x: np.ndarray) -> np.ndarray:
    """Move points sitting on an excluded lower cell face just inside the node."""
    x = np.clip(x, node.lower, node.upper)
    for d in np.flatnonzero(node.lo > 0):
        face = problem.grid.edges[d][node.lo[d]]
        if x[d] <= face:
            x[d] = min(np.nextafter(face, np.inf), node.upper[d])
    return x


def _candidates(problem: AcquisitionProblem, node: BnBNode) -> np.ndarray:
    slo, shi = _std_box(problem, node)
    r = problem.refs.points
    if problem.mode.is_penalty:
        k = int(problem.metric.aggregate(r - np.clip(r, slo, shi)).argmin())
        proj = problem.std.inverse(np.clip(r[k], slo, shi))
        return _nudge_into(problem, node, proj)[None, :]
    center = 0.5 * (node.lower + node.upper)
    uc = problem.std.transform(center)
    k = int(problem.metric.aggregate(uc - r).argmin())
    corner = np.where(np.abs(shi - r[k]) >= np.abs(r[k] - slo), node.upper, node.lower)
    return np.stack([_nudge_into(problem, node, center), _nudge_into(problem, node, corner)])


def warm_start(problem: AcquisitionProblem, seed: int = 0) -> tuple[np.ndarray, float]:
    """Initial incumbent.

    Penalty modes take the reference point with the lowest prediction, where
    the distance term vanishes. Explore mode picks the best of the
    references, up to 64 domain corners and 64 random points.
    """
    grid = problem.grid
    refs = np.clip(problem.std.inverse(problem.refs.points), grid.lower, grid.upper)
    if problem.mode.is_penalty:
        cand = refs
    else:
        rng = np.random.default_rng(seed)
        n = problem.dim
        if n <= 6:
            bits = np.array(list(itertools.product([0, 1], repeat=n)), dtype=bool)
        else:
            bits = rng.integers(0, 2, size=(64, n)).astype(bool)
        corners = np.where(bits, grid.upper, grid.lower)
        rand = rng.uniform(grid.lower, grid.upper, size=(64, n))
        cand = np.vstack([refs, corners, rand])
    if problem.mode.is_penalty:
        from ..tree_model import predict_many
        k = int(np.argmin(predict_many(problem.ensemble, cand)))
        x = cand[k]
        return x.copy(), float(evaluate_many(problem, x[None, :])[0])
    values = evaluate_many(problem, cand)
    k = int(np.argmin(values))
    return cand[k].copy(), float(values[k])


def _branch_candidates(node: BnBNode, lookahead: int) -> list[tuple[int, int]]:
    """Grid splits inside the node, median-outward per dimension, interleaved across dimensions."""
    per_dim = []
    for d in range(len(node.lo)):
        lo, hi = int(node.lo[d]), int(node.hi[d])
        js = list(range(lo + 1, hi + 1))
        mid = 0.5 * (lo + 1 + hi)
        js.sort(key=lambda j: (abs(j - mid), j))
        per_dim.append([(d, j) for j in js])
    out = []
    for rank in itertools.count():
        added = False
        for lst in per_dim:
            if rank < len(lst):
                out.append(lst[rank])
                added = True
                if len(out) == lookahead:
                    return out
        if not added:
            return out


def _child_scores(problem: AcquisitionProblem, node: BnBNode, cands):
    """Lower bounds of both children for every candidate split; arrays of shape (C,)."""
    tab = problem.table
    lo, hi = node.lo, node.hi
    M = (tab.lo <= hi) & (tab.hi >= lo)
    n = len(lo)
    cnt = M.sum(axis=2)
    slo, shi = _std_box(problem, node)
    r = problem.refs.points
    explore = problem.mode is Mode.EXPLORE
    if explore:
        per = problem.metric.per_dim(np.maximum(np.abs(shi - r), np.abs(r - slo)))
    else:
        per = problem.metric.per_dim(r - np.clip(r, slo, shi))
    dtot = per.sum(axis=1)

    left = np.empty(len(cands))
    right = np.empty(len(cands))
    cands = np.asarray(cands)
    for d in np.unique(cands[:, 0]):
        sel = np.flatnonzero(cands[:, 0] == d)
        js = cands[sel, 1]
        other = (cnt - M[:, :, d]) == n - 1
        ld, hd = tab.lo[:, :, d], tab.hi[:, :, d]
        lmask = other & (hd >= lo[d]) & (ld[None] <= (js - 1)[:, None, None])
        rmask = other & (ld <= hi[d]) & (hd[None] >= js[:, None, None])
        lmu = tab.base + np.where(lmask, tab.value, np.inf).min(axis=2).sum(axis=1)
        rmu = tab.base + np.where(rmask, tab.value, np.inf).min(axis=2).sum(axis=1)
        cut = problem.std_edges[d][js]  # standardized split coordinate
        rd = r[:, d][:, None]
        if explore:
            lper = problem.metric.per_dim(np.maximum(np.abs(cut[None, :] - rd), np.abs(rd - slo[d])))
            rper = problem.metric.per_dim(np.maximum(np.abs(shi[d] - rd), np.abs(rd - cut[None, :])))
        else:
            lper = problem.metric.per_dim(rd - np.clip(rd, slo[d], cut[None, :]))
            rper = problem.metric.per_dim(rd - np.clip(rd, cut[None, :], shi[d]))
        base = (dtot - per[:, d])[:, None]
        lunc = problem.uncertainty_term((base + lper).min(axis=0))
        runc = problem.uncertainty_term((base + rper).min(axis=0))
        left[sel] = lmu + lunc
        right[sel] = rmu + runc
    return np.maximum(left, node.lower_bound), np.maximum(right, node.lower_bound)


def select_branch(problem: AcquisitionProblem, node: BnBNode, lookahead: int = 200):
    """Strong branching over up to ``lookahead`` grid splits.

    Returns ``("grid", dim, j)`` for the split maximizing the smaller child
    bound (then the larger child bound, then balance; remaining ties go to
    the lower dimension and lower index), or ``("bisect", dim, midpoint)``
    for a single explore-mode cell.
    """
    if node.is_cell:
        if problem.mode is not Mode.EXPLORE:
            raise ValueError("single cells are solved exactly in penalty modes and cannot be split")
        width = (node.upper - node.lower) / problem.std.std
        d = int(np.argmax(width))
        if width[d] <= MIN_WIDTH:
            raise ValueError("node is below the refinement tolerance")
        return ("bisect", d, 0.5 * (node.lower[d] + node.upper[d]))
    cands = _branch_candidates(node, lookahead)
    if len(cands) == 1:
        d, j = cands[0]
        return ("grid", d, j)
    left, right = _child_scores(problem, node, cands)
    best_key, best = None, None
    for (d, j), a, b in zip(cands, left, right):
        size = node.hi[d] - node.lo[d] + 1
        balance = -abs((j - node.lo[d]) - (node.hi[d] + 1 - j)) / size
        key = (min(a, b), max(a, b), balance, -d, -j)
        if best_key is None or key > best_key:
            best_key, best = key, (d, j)
    return ("grid", best[0], best[1])


def _children(problem: AcquisitionProblem, node: BnBNode, branch, counter) -> list[BnBNode]:
    kind, d, where = branch
    lchild = BnBNode(node.lo.copy(), node.hi.copy(), node.lower.copy(), node.upper.copy(), depth=node.depth + 1)
    rchild = BnBNode(node.lo.copy(), node.hi.copy(), node.lower.copy(), node.upper.copy(), depth=node.depth + 1)
    if kind == "grid":
        cut = problem.grid.edges[d][where]
        lchild.hi[d] = where - 1
        lchild.upper[d] = cut
        rchild.lo[d] = where
        rchild.lower[d] = cut
    else:
        lchild.upper[d] = where
        rchild.lower[d] = where
    for child in (lchild, rchild):
        child.creation_index = next(counter)
        _bound(problem, child, floor=node.lower_bound)
        child.refined = False
    return [lchild, rchild]


def solve(problem: AcquisitionProblem, config: SolverConfig | None = None) -> SolveResult:
    config = config or SolverConfig()
    t0 = time.perf_counter()
    counter = itertools.count()
    x_inc, ub = warm_start(problem, config.seed)
    root = make_node(problem, Box.full(problem.grid), creation_index=next(counter))
    heap = [(root.lower_bound, root.depth, root.creation_index, root)]
    closed_floor = np.inf
    lb = min(root.lower_bound, ub)
    nodes = 1  # the root is bounded before the loop
    history = [(nodes, ub, lb)]
    termination = "gap"
    use_refine = config.refine and problem.table.n_trees > 1
    group = min(config.group_size, max(problem.table.n_trees, 1))

    def offer(points):
        nonlocal x_inc, ub
        values = evaluate_many(problem, points)
        k = int(np.argmin(values))
        if values[k] < ub:
            ub, x_inc = float(values[k]), points[k].copy()

    while True:
        open_min = heap[0][0] if heap else np.inf
        new_lb = min(max(lb, min(open_min, closed_floor)), ub)
        if new_lb != lb or history[-1][1] != ub:
            lb = new_lb
            history.append((nodes, ub, lb))
        if not heap or relative_gap(ub, lb) <= config.rel_gap:
            break
        if config.node_limit is not None and nodes >= config.node_limit:
            termination = "node-limit"
            break
        if time.perf_counter() - t0 > config.time_limit:
            termination = "time"
            break

        bound, _, _, node = heapq.heappop(heap)
        if bound >= ub - _margin(ub, config.rel_gap):
            closed_floor = min(closed_floor, bound)
            continue
        if node is not root:
            nodes += 1

        if use_refine and not node.refined and not node.is_cell:
            node.refined = True
            mu = refine_bound(problem.table, node.lo, node.hi, group, config.refine_budget)
            if mu > node.mu_bound:
                node.mu_bound = mu
                tightened = max(node.lower_bound, mu + node.unc_bound)
                if tightened > node.lower_bound:
                    node.lower_bound = tightened
                    heapq.heappush(heap, (node.lower_bound, node.depth, node.creation_index, node))
                    continue

        offer(_candidates(problem, node))

        if node.is_cell and problem.mode.is_penalty:
            # exact: the cell value plus the distance to the nearest projection
            closed_floor = min(closed_floor, node.lower_bound)
            continue
        if node.lower_bound >= ub - _margin(ub, config.rel_gap):
            closed_floor = min(closed_floor, node.lower_bound)
            continue
        if node.is_cell and np.max((node.upper - node.lower) / problem.std.std) <= MIN_WIDTH:
            closed_floor = min(closed_floor, node.lower_bound)
            continue

        for child in _children(problem, node, select_branch(problem, node, config.lookahead), counter):
            if child.lower_bound >= ub - _margin(ub, config.rel_gap):
                closed_floor = min(closed_floor, child.lower_bound)
            else:
                heapq.heappush(heap, (child.lower_bound, child.depth, child.creation_index, child))

    if not heap:
        lb = min(max(lb, closed_floor), ub)
        if history[-1][1:] != (ub, lb):
            history.append((nodes, ub, lb))
    return SolveResult(
        x_next=x_inc,
        upper_bound=ub,
        lower_bound=lb,
        rel_gap=relative_gap(ub, lb),
        nodes_explored=nodes,
        wall_time=time.perf_counter() - t0,
        termination=termination,
        history=tuple(history),
    )

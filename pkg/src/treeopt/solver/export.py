"""CPLEX-LP export of the explicit mixed-integer formulation.

Variables:

* ``x_i``      continuous inputs within the domain bounds
* ``u_i``      standardized inputs, ``u_i = (x_i - mean_i) / std_i``
* ``y_i_j``    binary, 1 iff ``x_i <= v_{i,j}``
* ``z_t_l``    leaf activations, one unit of weight per tree
* ``alpha``    uncertainty (distance to the closest reference)
* ``b_d``      binary reference selectors (penalty modes)
* ``rp_d_i``, ``rm_d_i``   positive/negative parts of Manhattan offsets
* ``const``    fixed to 1, carries the ensemble's base offset

Squared distances are written as quadratic rows. Manhattan complementarity
``rp * rm = 0`` is declared as SOS1 pairs; in penalty modes minimization
already enforces it, so the pairs may be dropped with ``sos=False``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..uncertainty import Metric
from .problem import AcquisitionProblem, Mode

_TERMS_PER_LINE = 6


def _num(v: float) -> str:
    return repr(float(v))


def _linear(terms) -> str:
    """Format ``[(coef, name), ...]`` as an LP expression, wrapping long rows."""
    parts = []
    for k, (c, name) in enumerate(terms):
        sign = "-" if c < 0 else "+"
        if k == 0 and sign == "+":
            parts.append(f"{_num(abs(c))} {name}")
        else:
            parts.append(f"{sign} {_num(abs(c))} {name}")
    lines = [" ".join(parts[i:i + _TERMS_PER_LINE]) for i in range(0, len(parts), _TERMS_PER_LINE)]
    return "\n   ".join(lines) if lines else "0 const"


@dataclass
class _Model:
    objective: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (name, text)
    bounds: list = field(default_factory=list)
    binaries: list = field(default_factory=list)
    continuous: list = field(default_factory=list)
    sos: list = field(default_factory=list)
    kinds: dict = field(default_factory=dict)

    def row(self, kind: str, name: str, text: str) -> None:
        self.rows.append((name, text))
        self.kinds[kind] = self.kinds.get(kind, 0) + 1


def build_lp(problem: AcquisitionProblem, sos: bool = True) -> tuple[str, dict]:
    """Return the LP text and the manifest dictionary."""
    grid, ens, std = problem.grid, problem.ensemble, problem.std
    n = grid.dim
    R = problem.refs.points
    model = _Model()

    xs = [f"x{i}" for i in range(n)]
    us = [f"u{i}" for i in range(n)]
    for i in range(n):
        model.bounds.append(f" {_num(grid.lower[i])} <= {xs[i]} <= {_num(grid.upper[i])}")
        model.bounds.append(f" {us[i]} free")
        model.continuous += [xs[i], us[i]]
        # u_i - x_i / std_i = -mean_i / std_i
        model.row("standardize", f"std_{i}", f"{_linear([(1.0, us[i]), (-1.0 / std.std[i], xs[i])])} = "
                  f"{_num(-std.mean[i] / std.std[i])}")

    # interval indicators and x-to-interval linking
    for i in range(n):
        e = grid.edges[i]
        m = int(grid.m[i])
        ys = [f"y_{i}_{j}" for j in range(1, m + 1)]
        model.binaries += ys
        for j in range(m - 1):
            model.row("order", f"ord_{i}_{j + 1}", f"{_linear([(1.0, ys[j]), (-1.0, ys[j + 1])])} <= 0")
        if m:
            # x_i >= v_0 + sum_j (v_j - v_{j-1}) (1 - y_j)
            lo_terms = [(1.0, xs[i])] + [(e[j] - e[j - 1], ys[j - 1]) for j in range(1, m + 1)]
            model.row("link", f"linklo_{i}", f"{_linear(lo_terms)} >= {_num(e[0] + sum(e[j] - e[j - 1] for j in range(1, m + 1)))}")
            # x_i <= v_{m+1} - sum_j (v_{j+1} - v_j) y_j
            hi_terms = [(1.0, xs[i])] + [(e[j + 1] - e[j], ys[j - 1]) for j in range(1, m + 1)]
            model.row("link", f"linkhi_{i}", f"{_linear(hi_terms)} <= {_num(e[m + 1])}")

    # tree encoding
    n_z = 0
    for t, tree in enumerate(ens.trees):
        zs = {k: f"z_{t}_{k}" for k in tree.leaves}
        n_z += len(zs)
        model.continuous += list(zs.values())
        model.row("leaf-sum", f"one_{t}", f"{_linear([(1.0, z) for z in zs.values()])} = 1")
        for s in tree.splits:
            d = int(tree.feature[s])
            j = grid.split_index(d, float(tree.threshold[s]))
            left = [(1.0, zs[k]) for k in tree.leaves_under(int(tree.left[s]))]
            right = [(1.0, zs[k]) for k in tree.leaves_under(int(tree.right[s]))]
            if j == 0:  # threshold at or below the domain: left side unreachable
                model.row("split", f"l_{t}_{s}", f"{_linear(left)} = 0")
            elif j == grid.m[d] + 1:  # at or above the domain: right side unreachable
                model.row("split", f"r_{t}_{s}", f"{_linear(right)} = 0")
            else:
                y = f"y_{d}_{j}"
                model.row("split", f"l_{t}_{s}", f"{_linear(left + [(-1.0, y)])} <= 0")
                model.row("split", f"r_{t}_{s}", f"{_linear(right + [(1.0, y)])} <= 1")
        for k, z in zs.items():
            model.objective.append((float(tree.value[k]), z))
    model.objective.append((ens.base_offset, "const"))
    model.bounds.append(" const = 1")

    # uncertainty
    kappa = problem.kappa
    sign = -1.0 if problem.mode is Mode.EXPLORE else 1.0
    model.objective.append((sign * kappa, "alpha"))
    model.continuous.append("alpha")
    if problem.mode is Mode.EXPLORE:
        model.bounds.append(f" 0 <= alpha <= {_num(problem.alpha_limit)}")
    else:
        model.bounds.append(" alpha >= 0")
    penalty = problem.mode.is_penalty
    M = problem.big_m
    n_b = len(R) if penalty else 0
    if penalty:
        bs = [f"b_{d}" for d in range(len(R))]
        model.binaries += bs
        model.row("select", "select", f"{_linear([(1.0, b) for b in bs])} = 1")

    n_r = 0
    for d, r in enumerate(R):
        if problem.metric is Metric.MANHATTAN:
            rp = [f"rp_{d}_{i}" for i in range(n)]
            rm = [f"rm_{d}_{i}" for i in range(n)]
            n_r += 2 * n
            model.continuous += rp + rm
            for i in range(n):
                # rp - rm = u_i - r_i
                model.row("manhattan", f"abs_{d}_{i}",
                          f"{_linear([(1.0, rp[i]), (-1.0, rm[i]), (-1.0, us[i])])} = {_num(-r[i])}")
                model.sos.append(f" sos_{d}_{i}: S1 :: {rp[i]}:1 {rm[i]}:2")
            dist = [(1.0, v) for pair in zip(rp, rm) for v in pair]
            if penalty:
                # alpha >= dist - M (1 - b_d)
                model.row("distance", f"dist_{d}",
                          f"{_linear([(1.0, 'alpha')] + [(-c, v) for c, v in dist] + [(-M, f'b_{d}')])} >= {_num(-M)}")
            else:
                model.row("distance", f"dist_{d}", f"{_linear([(1.0, 'alpha')] + [(-c, v) for c, v in dist])} <= 0")
        else:
            # sum_i (u_i - r_i)^2 = sum u_i^2 - 2 r_i u_i + r_i^2
            lin = [(2.0 * r[i], us[i]) for i in range(n)]
            quad = " + ".join(f"{u} ^ 2" for u in us)
            const = float(np.sum(np.square(r)))
            if penalty:
                # dist - alpha + M b_d <= M
                text = (f"{_linear([(-1.0, 'alpha'), (M, f'b_{d}')] + [(-c, u) for c, u in lin])}"
                        f" + [ {quad} ] <= {_num(M - const)}")
            else:
                # alpha - dist <= 0
                neg = " ".join(f"- {u} ^ 2" for u in us)
                text = f"{_linear([(1.0, 'alpha')] + lin)} + [ {neg} ] <= {_num(const)}"
            model.row("distance", f"dist_{d}", text)

    lines = ["\\ acquisition problem, mode " + problem.mode.value, "Minimize", f" obj: {_linear(model.objective)}",
             "Subject To"]
    lines += [f" {name}: {text}" for name, text in model.rows]
    lines.append("Bounds")
    lines += model.bounds
    lines += [f" {v} >= 0" for v in model.continuous if v.startswith(("z_", "rp_", "rm_"))]
    if model.binaries:
        lines.append("Binaries")
        lines += [f" {b}" for b in model.binaries]
    if sos and model.sos:
        lines.append("SOS")
        lines += model.sos
    lines.append("End")

    counts = {
        "x": n,
        "u": n,
        "y": int(np.sum(grid.m)),
        "z": n_z,
        "b": n_b,
        "r": n_r,
        "alpha": 1,
        "rows": len(model.rows),
        "rows_by_kind": dict(sorted(model.kinds.items())),
        "sos1": len(model.sos) if sos else 0,
    }
    manifest = {
        "mode": problem.mode.value,
        "metric": problem.metric.value,
        "counts": counts,
        "kappa": float(kappa),
        "alpha_limit": None if problem.alpha_limit is None else float(problem.alpha_limit),
        "M": float(M),
        "base_offset": float(ens.base_offset),
    }
    return "\n".join(lines) + "\n", manifest


def export_mip(problem: AcquisitionProblem, destination, sos: bool = True) -> dict:
    """Write ``destination`` (LP) and ``destination + '.json'`` (manifest); returns the manifest."""
    path = Path(destination)
    text, manifest = build_lp(problem, sos=sos)
    try:
        path.write_text(text)
        Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write export to {path}: {exc.strerror or exc}") from exc
    return manifest

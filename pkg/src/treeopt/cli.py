"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 input error, 4 solver limit hit
(the result is still written).
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import benchmark_names, make_benchmark
from .bo import BOConfig, init_design, manifest, propose, run_campaign, uncertainty_study, write_manifest
from .data import DataFormatError, Dataset, csv_header, format_float, parse_csv, read_csv
from .solver import Mode, SolverConfig, build_problem, solve
from .solver.export import export_mip
from .tree_model import GBRTParams, ModelFormatError, load_model, save_model, train
from .uncertainty import Metric, fit_standardizer, lloyd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_LIMIT = 0, 2, 3, 4

GBRT_KEYS = ("num_trees", "max_depth", "max_leaves", "min_samples_leaf", "learning_rate")
SOLVER_KEYS = ("rel_gap", "time_limit", "lookahead", "group_size", "node_limit", "refine", "refine_budget")
BO_KEYS = ("budget", "init_points", "kappa", "zeta", "mode", "metric", "cluster_count", "seed", "record_time")
CONFIG_KEYS = set(GBRT_KEYS + SOLVER_KEYS + BO_KEYS + ("preset",))


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


# ---------------------------------------------------------------- config


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: invalid TOML: {exc}") from None
    unknown = sorted(set(doc) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"{path}: unknown config keys: {', '.join(unknown)}")
    return doc


def merged(args) -> dict:
    """Config file values overridden by explicitly given flags."""
    conf = load_config(getattr(args, "config", None))
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            conf[key] = value
    return conf


def gbrt_params(conf: dict) -> GBRTParams:
    base = GBRTParams.large() if conf.get("preset") == "large" else GBRTParams()
    if conf.get("preset") not in (None, "default", "large"):
        raise ValueError(f"unknown preset {conf['preset']!r}")
    return replace(base, **{k: conf[k] for k in GBRT_KEYS if k in conf}, seed=int(conf.get("seed", 0)))


def solver_config(conf: dict, node_limit_default=None) -> SolverConfig:
    kw = {k: conf[k] for k in SOLVER_KEYS if k in conf}
    kw.setdefault("node_limit", node_limit_default)
    return SolverConfig(seed=int(conf.get("seed", 0)), **kw)


def bo_config(conf: dict) -> BOConfig:
    from .bo import DEFAULT_BO_NODE_LIMIT

    kw = {k: conf[k] for k in BO_KEYS if k in conf}
    return BOConfig(gbrt=gbrt_params(conf), solver=solver_config(conf, DEFAULT_BO_NODE_LIMIT), **kw)


def parse_bounds(text: str, dim: int | None = None):
    """``"lo:hi,lo:hi,..."``; a single pair is repeated ``dim`` times."""
    try:
        pairs = [tuple(float(v) for v in part.split(":")) for part in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse bounds {text!r}; expected lo:hi[,lo:hi...]") from None
    if any(len(p) != 2 for p in pairs):
        raise UsageError(f"cannot parse bounds {text!r}; expected lo:hi[,lo:hi...]")
    if dim is not None and len(pairs) == 1:
        pairs = pairs * dim
    lower = np.array([p[0] for p in pairs])
    upper = np.array([p[1] for p in pairs])
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)) and np.all(lower < upper)):
        raise UsageError("bounds must be finite with lo < hi in every dimension")
    if dim is not None and len(lower) != dim:
        raise UsageError(f"bounds give {len(lower)} dimensions, expected {dim}")
    return lower, upper


def format_bounds(lower, upper) -> str:
    return ",".join(f"{format_float(a)}:{format_float(b)}" for a, b in zip(lower, upper))


def _read_dataset(path) -> Dataset:
    try:
        return read_csv(path)
    except FileNotFoundError:
        raise InputError(f"data file not found: {path}") from None
    except DataFormatError as exc:
        raise InputError(str(exc)) from None


def _emit(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


# ---------------------------------------------------------------- black boxes


class ScriptBlackBox:
    """Runs ``script x_0 ... x_{n-1}`` and reads a float from the last line of stdout."""

    def __init__(self, script: str):
        self.script = script
        if not Path(script).exists():
            raise InputError(f"black-box script not found: {script}")

    def __call__(self, x) -> float:
        cmd = [sys.executable, self.script] if self.script.endswith(".py") else [self.script]
        proc = subprocess.run(cmd + [format_float(v) for v in x], capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(f"black box exited with {proc.returncode}: {proc.stderr.strip()}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise RuntimeError("black box printed nothing")
        return float(lines[-1])


def _blackbox(args):
    if args.benchmark and args.script:
        raise UsageError("give either --benchmark or --script, not both")
    if args.benchmark:
        try:
            bench = make_benchmark(args.benchmark, args.dim)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        bounds = (bench.lower, bench.upper)
        if args.bounds:
            bounds = parse_bounds(args.bounds, bench.dim)
        return bench, bounds, bench.name
    if args.script:
        if not args.bounds:
            raise UsageError("--script needs --bounds")
        return ScriptBlackBox(args.script), parse_bounds(args.bounds, args.dim), args.script
    raise UsageError("give --benchmark NAME or --script PATH")


# ---------------------------------------------------------------- commands


def cmd_run(args) -> int:
    conf = merged(args)
    config = bo_config(conf)
    blackbox, (lower, upper), name = _blackbox(args)
    trace = run_campaign(blackbox, (lower, upper), config)
    out = Path(args.out)
    trace.write_csv(out)
    write_manifest(args.manifest or str(out) + ".json", manifest(config, {
        "command": "run", "blackbox": name, "bounds": format_bounds(lower, upper),
        "rows": len(trace), "aborted": trace.aborted,
    }))
    if trace.aborted:
        print(f"error: campaign aborted after {len(trace)} evaluations: {trace.aborted}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{len(trace)} evaluations, best {format_float(trace.best[-1])}")
    return EXIT_OK


def _problem_from_args(args, conf):
    data = _read_dataset(args.data)
    if args.model:
        try:
            ensemble = load_model(args.model)
        except FileNotFoundError:
            raise InputError(f"model file not found: {args.model}") from None
        except ModelFormatError as exc:
            raise InputError(str(exc)) from None
        if ensemble.num_features != data.dim:
            raise InputError(f"model has {ensemble.num_features} features, data has {data.dim}")
    else:
        ensemble = train(data, gbrt_params(conf))
    if args.bounds:
        lower, upper = parse_bounds(args.bounds, data.dim)
    else:
        raise UsageError("--bounds is required")
    mode = Mode(conf.get("mode", "explore"))
    return build_problem(
        ensemble, data, lower, upper, mode=mode, metric=conf.get("metric", "sqeuclidean"),
        kappa=float(conf.get("kappa", 1.96)), zeta=float(conf.get("zeta", 0.5)),
        cluster_count=conf.get("cluster_count"), seed=int(conf.get("seed", 0)),
    )


def cmd_solve(args) -> int:
    conf = merged(args)
    problem = _problem_from_args(args, conf)
    result = solve(problem, solver_config(conf))
    _emit(result.as_dict())
    return EXIT_OK if result.termination == "gap" else EXIT_LIMIT


def cmd_export(args) -> int:
    conf = merged(args)
    problem = _problem_from_args(args, conf)
    try:
        doc = export_mip(problem, args.out, sos=not args.no_sos)
    except OSError as exc:
        raise InputError(str(exc)) from None
    _emit(doc)
    return EXIT_OK


def cmd_study(args) -> int:
    conf = merged(args)
    try:
        bench = make_benchmark(args.benchmark, args.dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        kappas = [float(k) for k in args.kappas.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse kappa grid {args.kappas!r}") from None
    result = uncertainty_study(
        bench, (bench.lower, bench.upper), kappas, n_train=args.n_train, seeds=_parse_seeds(args.seeds),
        metric=conf.get("metric", "sqeuclidean"), gbrt=gbrt_params(conf), solver=solver_config(conf, 2000),
    )
    text = result.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    try:
        for part in text.split(","):
            if "-" in part.strip()[1:]:
                a, b = part.rsplit("-", 1)
                seeds.extend(range(int(a), int(b) + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise UsageError(f"cannot parse seeds {text!r}; use e.g. 101-110 or 1,2,3") from None
    return seeds


def cmd_train(args) -> int:
    conf = merged(args)
    data = _read_dataset(args.data)
    ensemble = train(data, gbrt_params(conf))
    save_model(ensemble, args.out)
    print(f"wrote {len(ensemble.trees)} trees to {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        ens = load_model(args.model)
    except FileNotFoundError:
        raise InputError(f"model file not found: {args.model}") from None
    except ModelFormatError as exc:
        raise InputError(str(exc)) from None
    thresholds = [set() for _ in range(ens.num_features)]
    for tree in ens.trees:
        for k in tree.splits:
            thresholds[tree.feature[k]].add(float(tree.threshold[k]))
    _emit({
        "num_features": ens.num_features,
        "num_trees": len(ens.trees),
        "base_offset": ens.base_offset,
        "leaves": int(sum(len(t.leaves) for t in ens.trees)),
        "max_depth": int(max((t.depth for t in ens.trees), default=0)),
        "distinct_thresholds": [len(s) for s in thresholds],
    })
    return EXIT_OK


def cmd_cluster(args) -> int:
    data = _read_dataset(args.data)
    std = fit_standardizer(data)
    try:
        centers, labels, history = lloyd(std.transform(data.X), args.k, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    raw = std.inverse(centers)
    lines = [",".join([f"x_{i}" for i in range(data.dim)] + ["size"])]
    for c in range(args.k):
        lines.append(",".join([format_float(v) for v in raw[c]] + [str(int(np.sum(labels == c)))]))
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in benchmark_names():
        b = make_benchmark(name, 2)
        print(f"{name}\t[{format_float(b.lower[0])}, {format_float(b.upper[0])}]^d")
    return EXIT_OK


# ---------------------------------------------------------------- ask / tell sessions

SESSION_FILE = "session.json"
DATA_FILE = "data.csv"


def _load_session(directory):
    path = Path(directory) / SESSION_FILE
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"no session at {directory} (run init-session first)") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: corrupt session file: {exc}") from None
    lower, upper = parse_bounds(doc["bounds"])
    return doc, lower, upper


def _session_data(directory, dim):
    text = (Path(directory) / DATA_FILE).read_text()
    if len([ln for ln in text.splitlines() if ln.strip()]) <= 1:
        return None
    try:
        data = parse_csv(text, source=str(Path(directory) / DATA_FILE))
    except DataFormatError as exc:
        raise InputError(str(exc)) from None
    if data.dim != dim:
        raise InputError("session data dimension does not match its bounds")
    return data


def cmd_init_session(args) -> int:
    conf = merged(args)
    bo_config(conf)  # validate before writing anything
    lower, upper = parse_bounds(args.bounds, args.dim)
    d = Path(args.session)
    if (d / SESSION_FILE).exists():
        raise InputError(f"session already exists at {d}")
    d.mkdir(parents=True, exist_ok=True)
    conf.pop("record_time", None)
    (d / SESSION_FILE).write_text(json.dumps({"bounds": format_bounds(lower, upper), "config": conf},
                                             indent=2, sort_keys=True) + "\n")
    (d / DATA_FILE).write_text(",".join(csv_header(len(lower))) + "\n")
    print(f"initialized session at {d}")
    return EXIT_OK


def cmd_ask(args) -> int:
    doc, lower, upper = _load_session(args.session)
    config = bo_config(doc["config"])
    data = _session_data(args.session, len(lower))
    count = 0 if data is None else len(data)
    if count < config.init_points:
        x = init_design(lower, upper, config.init_points, config.seed)[count]
        _emit({"phase": "init", "x": [float(v) for v in x]})
        return EXIT_OK
    prop = propose(data, (lower, upper), config, iteration=count)
    out = {"phase": "optimize", "x": [float(v) for v in prop.x], **{
        k: v for k, v in prop.result.as_dict().items() if k != "x_next"}}
    if prop.guarded:
        out["guard"] = prop.guarded
    _emit(out)
    return EXIT_OK


def cmd_tell(args) -> int:
    doc, lower, upper = _load_session(args.session)
    try:
        x = np.array([float(v) for v in args.x.split(",")])
        f = float(args.f)
    except ValueError:
        raise InputError(f"cannot parse observation x={args.x!r} f={args.f!r}") from None
    if x.shape != lower.shape:
        raise InputError(f"x has {len(x)} coordinates, session expects {len(lower)}")
    if not (np.all(np.isfinite(x)) and np.isfinite(f)):
        raise InputError("observation must be finite")
    if np.any(x < lower) or np.any(x > upper):
        raise InputError("x lies outside the session bounds")
    _session_data(args.session, len(lower))  # refuse to append to a corrupt file
    line = ",".join([format_float(v) for v in x] + [format_float(f)]) + "\n"
    with open(Path(args.session) / DATA_FILE, "a") as fh:
        fh.write(line)
        fh.flush()
        os.fsync(fh.fileno())
    print(f"recorded f={format_float(f)}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_config_flags(p, bo=True, gbrt=True, solver=True):
    p.add_argument("--config", help="TOML file with flat keys; flags override it")
    p.add_argument("--seed", type=int)
    if bo:
        p.add_argument("--budget", type=int)
        p.add_argument("--init-points", dest="init_points", type=int)
        p.add_argument("--kappa", type=float)
        p.add_argument("--zeta", type=float)
        p.add_argument("--mode", choices=[m.value for m in Mode])
        p.add_argument("--metric", choices=[m.value for m in Metric])
        p.add_argument("--cluster-count", dest="cluster_count", type=int)
    if gbrt:
        p.add_argument("--preset", choices=["default", "large"])
        p.add_argument("--num-trees", dest="num_trees", type=int)
        p.add_argument("--max-depth", dest="max_depth", type=int)
        p.add_argument("--max-leaves", dest="max_leaves", type=int)
        p.add_argument("--min-samples-leaf", dest="min_samples_leaf", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
    if solver:
        p.add_argument("--rel-gap", dest="rel_gap", type=float)
        p.add_argument("--time-limit", dest="time_limit", type=float)
        p.add_argument("--lookahead", type=int)
        p.add_argument("--group-size", dest="group_size", type=int)
        p.add_argument("--node-limit", dest="node_limit", type=int)
        p.add_argument("--no-refine", dest="refine", action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treeopt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full optimization campaign")
    p.add_argument("--benchmark")
    p.add_argument("--script", help="executable black box: prints f for x passed as arguments")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--bounds")
    p.add_argument("--out", required=True, help="trace CSV")
    p.add_argument("--manifest", help="defaults to OUT.json")
    p.add_argument("--record-time", dest="record_time", action="store_const", const=True,
                   help="fill the seconds column (makes outputs run-dependent)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    for name, func, helptext in (("solve", cmd_solve, "solve one acquisition problem"),
                                 ("export", cmd_export, "write the MIP as an LP file")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--model", help="model JSON; trained from --data when omitted")
        p.add_argument("--bounds", required=True)
        if name == "export":
            p.add_argument("--out", required=True)
            p.add_argument("--no-sos", action="store_true", help="omit SOS1 declarations")
        _add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("study", help="model error versus kappa in penalty mode")
    p.add_argument("--benchmark", default="rosenbrock")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--kappas", default="0.5,2,8")
    p.add_argument("--n-train", dest="n_train", type=int, default=200)
    p.add_argument("--seeds", default="101-110")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("init-session", help="create an ask/tell session directory")
    p.add_argument("session")
    p.add_argument("--bounds", required=True)
    p.add_argument("--dim", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_init_session)

    p = sub.add_parser("ask", help="propose the next point of a session")
    p.add_argument("session")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("tell", help="record an observation in a session")
    p.add_argument("session")
    p.add_argument("--x", required=True, help="comma-separated coordinates")
    p.add_argument("--f", required=True)
    p.set_defaults(func=cmd_tell)

    p = sub.add_parser("train", help="fit a model and save it as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, bo=False, solver=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("inspect", help="summarize a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("cluster", help="k-means centers of a dataset (raw coordinates)")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("list-benchmarks", help="registered test functions")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError) as exc:
        # invalid parameter values rejected by the config types
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point and experiment runner.

Every run is described by a flat mapping of documented keys (from the
command line or a YAML file given with ``--config``). The runner validates
the whole mapping before computing anything, writes one CSV per run plus a
JSON manifest, and never leaves partial files behind.

Exit codes: 0 success, 2 invalid configuration, 3 estimation failure
(no bracket, wrong cluster regime).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import mtp, oracle, sdp
from .clusters import STATISTICS, destroyed_set, sweep_replicas
from .errors import BracketError, RegimeError, ResourceLimitError, UsageError
from .estimate import Z95
from .fields import Seed, check_probability, level_set, sample_field
from .graphs import acts_transitively, isoperimetric_profile, make_graph

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION = 0, 2, 3

COMMON_KEYS = {"command", "action", "seed", "samples", "out", "threads", "first_replica"}

ACTIONS = {
    ("graph", "describe"): {"graph"},
    ("graph", "iso"): {"graph", "family", "subtree_root"},
    ("sweep", None): {"graph", "grid", "stat"},
    ("sdp", "theta"): {"graph", "p", "delta", "event"},
    ("sdp", "deltac"): {"graph", "p", "eps", "tol", "event", "method", "search", "other_graph"},
    ("sdp", "removed-pc"): {"graph", "p", "eps", "tol"},
    ("sdp", "fresh-birth"): {"graph", "p", "delta", "event", "pc"},
    ("oracle", "theta"): {"b", "p", "L"},
    ("oracle", "pc"): {"b"},
    ("oracle", "enumerate"): {"graph", "p", "delta", "query"},
    ("mtp", "check"): {"graph", "functions"},
    ("mtp", "encounter"): {"graph", "p"},
    ("mtp", "forest"): {"graph", "p", "gamma_level"},
    ("mtp", "eq2"): {"graph", "p", "n", "p_ref", "scale"},
    ("mtp", "xi"): {"graph", "p", "gamma_level", "radius"},
    ("report", None): {"input", "x", "y", "series"},
}

DEFAULTS = {
    "seed": 0, "samples": 10_000, "out": "results", "threads": None, "first_replica": 0,
    "event": "origin", "eps": "critical", "tol": 0.01, "method": "eps-level", "search": "quantile",
    "stat": "origin-percolates", "family": "subtrees", "query": "origin", "functions": 100,
    "p_ref": 0.5, "scale": 0.2, "gamma_level": 0.0, "radius": 1, "L": 12,
}

REQUIRED = {"graph", "p", "delta", "b", "input", "x", "y", "grid"}

MTP_FLAGS = [f"{k}={v}" for k, v in sorted(mtp.AMBIGUITY_FLAGS.items())]


# ---------------------------------------------------------------------------
# parsing helpers


def parse_graph(text: str):
    """``family:key=value,...``, e.g. ``rooted_tree:b=2,L=12``."""
    family, _, rest = str(text).partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"bad graph parameter {item!r} in {text!r}")
        try:
            params[key.strip()] = int(value)
        except ValueError:
            raise UsageError(f"graph parameter {key}={value!r} is not an integer") from None
    return make_graph(family.strip(), **params)


def parse_floats(value) -> list[float]:
    """A number, a list of numbers, a comma list, or ``start:stop:step`` (inclusive)."""
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    text = str(value)
    try:
        if ":" in text:
            a, b, s = (float(x) for x in text.split(":"))
            if s <= 0:
                raise UsageError(f"step must be positive in {text!r}")
            count = int(math.floor((b - a) / s + 1e-9)) + 1
            return [round(a + i * s, 12) for i in range(count)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot read numbers from {value!r}") from None


def parse_ints(value) -> list[int]:
    out = parse_floats(value)
    if any(v != int(v) for v in out):
        raise UsageError(f"expected integers, got {value!r}")
    return [int(v) for v in out]


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a flat mapping")
    for k, v in data.items():
        if isinstance(v, dict):
            raise UsageError(f"config key {k!r}: nested sections are not allowed")
    return data


def validate(config: dict) -> dict:
    """Check keys and values, fill defaults, and return a normalized copy."""
    cfg = {k: v for k, v in config.items() if v is not None}
    command, action = cfg.get("command"), cfg.get("action")
    if (command, action) not in ACTIONS:
        raise UsageError(f"unknown command {command!r} {action or ''}".rstrip())
    allowed = COMMON_KEYS | ACTIONS[(command, action)]
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise UsageError(f"unknown config keys for {command} {action or ''}: {', '.join(unknown)}")
    for k in allowed:
        if k not in cfg and k in DEFAULTS and DEFAULTS[k] is not None:
            cfg[k] = DEFAULTS[k]
    for k in ("seed", "samples", "first_replica", "functions", "radius", "L", "b"):
        if k in cfg:
            if not isinstance(cfg[k], int) or isinstance(cfg[k], bool) or cfg[k] < 0:
                raise UsageError(f"{k} must be a nonnegative integer, got {cfg[k]!r}")
    if cfg.get("samples", 1) < 1:
        raise UsageError("samples must be >= 1")
    for k in ("p", "delta", "grid", "gamma_level", "p_ref", "pc"):
        if k in cfg:
            vals = parse_floats(cfg[k])
            if not vals and k != "grid":
                raise UsageError(f"{k} is empty")
            for v in vals:
                check_probability(v, k)
    if "eps" in cfg and cfg["eps"] != "critical":
        try:
            e = float(cfg["eps"])
        except (TypeError, ValueError):
            raise UsageError(f"eps must be 'critical' or a number, got {cfg['eps']!r}") from None
        if not 0 < e < 1:
            raise UsageError("eps must be in (0, 1)")
    for k in sorted(REQUIRED & ACTIONS[(command, action)]):
        if k not in cfg:
            raise UsageError(f"missing required key {k!r}")
    if "stat" in cfg and cfg["stat"] not in STATISTICS:
        raise UsageError(f"unknown statistic {cfg['stat']!r}")
    if "event" in cfg and cfg["event"] not in sdp.EVENTS:
        raise UsageError(f"unknown event {cfg['event']!r}")
    return cfg


# ---------------------------------------------------------------------------
# table building (pure: returns header comments, columns and rows)


def _est_row(e):
    return [e.value, e.stderr, e.ci_low, e.ci_high]


EST_COLS = ["value", "stderr", "ci_low", "ci_high"]


def _table(cfg: dict):
    command, action = cfg["command"], cfg.get("action")
    seed, n, first = cfg["seed"], cfg["samples"], cfg["first_replica"]
    g = parse_graph(cfg["graph"]) if "graph" in cfg else None
    comments = [f"percolab {__version__}"]
    if g is not None:
        comments.append(f"graph={g.key}")

    if command == "graph":
        if action == "describe":
            cols = ["graph", "vertices", "edges", "boundary", "origin", "transitive"]
            rows = [[g.key, g.vertex_count, g.edge_count, int(g.boundary_mask.sum()), g.origin,
                     int(acts_transitively(g))]]
        else:
            prof = isoperimetric_profile(g, cfg["family"], cfg.get("subtree_root"))
            cols = ["descriptor", "size", "boundary", "ratio", "ratio_float"]
            rows = [[e.descriptor, e.subset_size, e.boundary_size, str(e.ratio), float(e.ratio)]
                    for e in prof.entries]
        return comments, cols, rows

    if command == "sweep":
        grid = parse_floats(cfg["grid"])
        vals = sweep_replicas(g, seed, first, n, grid, cfg["stat"])
        cols = ["seed", "replica", "stat", "p", "value"]
        rows = [[seed, first + r, cfg["stat"], p, float(vals[r, i])]
                for r in range(n) for i, p in enumerate(grid)]
        return comments, cols, rows

    if command == "sdp":
        ps = parse_floats(cfg["p"])
        base = ["graph", "seed", "first_replica", "samples"]
        if action == "theta":
            cols = base + ["event", "p", "delta"] + EST_COLS
            rows = []
            for p in ps:
                for d in parse_floats(cfg["delta"]):
                    e = sdp.estimate_theta(g, p, d, n, cfg["event"], seed=seed, first_replica=first)
                    rows.append([g.key, seed, first, n, cfg["event"], p, d] + _est_row(e))
        elif action == "deltac":
            other = parse_graph(cfg["other_graph"]) if "other_graph" in cfg else None
            level = sdp.resolve_level(g, cfg["eps"])
            comments.append(f"eps={cfg['eps']} level={level!r} search={cfg['search']}")
            cols = base + ["method", "event", "p"] + EST_COLS
            rows = []
            for p in ps:
                e = sdp.estimate_delta_c(g, p, cfg["method"], cfg["eps"], n, cfg["tol"], cfg["event"],
                                         seed, cfg["search"], other, first_replica=first)
                rows.append([g.key, seed, first, n, cfg["method"], cfg["event"], p] + _est_row(e))
        elif action == "removed-pc":
            cols = base + ["p", "eligible"] + EST_COLS
            rows = []
            for p in ps:
                e = sdp.removed_graph_threshold(g, p, n, cfg["tol"], cfg["eps"], seed, first_replica=first)
                rows.append([g.key, seed, first, n, p, e.meta["eligible"]] + _est_row(e))
        else:
            pc = cfg.get("pc")
            cols = base + ["event", "p", "delta"] + EST_COLS
            rows = []
            for p in ps:
                for d in parse_floats(cfg["delta"]):
                    e = sdp.fresh_birth_probe(g, Seed(seed, "primary", first), p, d, n, pc, cfg["event"])
                    rows.append([g.key, seed, first, n, cfg["event"], p, d] + _est_row(e))
        return comments, cols, rows

    if command == "oracle":
        if action == "theta":
            cols = ["b", "L", "p", "theta_L", "theta_limit"]
            rows = [[cfg["b"], cfg["L"], p, oracle.tree_theta_depth(cfg["b"], p, cfg["L"]),
                     oracle.tree_theta_limit(cfg["b"], p)] for p in parse_floats(cfg["p"])]
        elif action == "pc":
            cols = ["b", "p_c"]
            rows = [[cfg["b"], oracle.tree_pc(cfg["b"])]]
        else:
            cols = ["graph", "query", "p", "delta", "value"]
            rows = []
            for p in parse_floats(cfg["p"]):
                for d in parse_floats(cfg["delta"]):
                    v = oracle.enumerate_phi_exact(g, p, d, cfg["query"])
                    if cfg["query"] == "distribution":
                        rows += [[g.key, f"N={j}", p, d, x] for j, x in enumerate(v)]
                    else:
                        rows.append([g.key, cfg["query"], p, d, v])
        return comments, cols, rows

    if command == "mtp":
        comments += MTP_FLAGS
        if action == "check":
            rng = np.random.default_rng(seed)
            cols = ["seed", "function", "sum_out", "sum_in", "abs_diff"]
            rows = []
            for i in range(cfg["functions"]):
                f = mtp.random_invariant_transport(g, rng)
                a, b = mtp.mtp_check(g, f)
                rows.append([seed, i, a, b, abs(a - b)])
            return comments, cols, rows
        if action == "eq2":
            ns = parse_ints(cfg.get("n", "2,4,8"))
            levels = [cfg["p_ref"] + cfg["scale"] / k for k in ns]
            p = parse_floats(cfg["p"])[0]
            stats_ = mtp.boundary_inequality_stats(g, seed, p, levels, n, first)
            cols = ["graph", "seed", "first_replica", "samples", "p", "n", "level",
                    "lhs", "lhs_se", "rhs", "rhs_se", "gamma", "gamma_se", "margin_sigma", "holds"]
            rows = [[g.key, seed, first, n, p, k, s["level"], s["lhs"].value, s["lhs"].stderr,
                     s["rhs"].value, s["rhs"].stderr, s["gamma"].value, s["gamma"].stderr,
                     s["margin_sigma"], int(s["holds"])] for k, s in zip(ns, stats_)]
            return comments, cols, rows
        # single-replica structural outputs: one block of rows per replica
        rows = []
        p = parse_floats(cfg["p"])[0]
        for r in range(first, first + n):
            fld = sample_field(g, Seed(seed, "primary", r))
            omega = level_set(fld, p)
            if action == "encounter":
                cols = ["seed", "replica", "vertex"]
                rows += [[seed, r, int(v)] for v in mtp.find_encounter_points(g, omega).members]
            elif action == "forest":
                forest = mtp.build_forest(g, omega, Seed(seed, "forest", r))
                gamma = destroyed_set(g, level_set(fld, cfg["gamma_level"]))
                kept = mtp.restrict_forest(forest, g, omega, gamma).edge_set()
                cols = ["seed", "replica", "u", "v", "kept", "acyclic"]
                acyc = int(forest.is_acyclic())
                rows += [[seed, r, int(a), int(b), int((int(a), int(b)) in kept), acyc] for a, b in forest.edges]
            else:
                gamma = destroyed_set(g, level_set(fld, cfg["gamma_level"]))
                xi = mtp.build_xi(g, omega, gamma, cfg["radius"])
                cols = ["seed", "replica", "vertex"]
                rows += [[seed, r, int(v)] for v in xi.members]
        return comments, cols, rows

    # report
    inputs = cfg["input"] if isinstance(cfg["input"], list) else [cfg["input"]]
    cols, rows = plotdata_rows(inputs, cfg["x"], cfg["y"], cfg.get("series"))
    return [f"percolab {__version__}"], cols, rows


# ---------------------------------------------------------------------------
# plot data


def _read_csv(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines)), (lines[0].strip().split(",") if lines else [])


def plotdata_rows(inputs, x: str, y: str, series: str | None = None):
    """Reshape CSV tables into (series, x, y, y_lo, y_hi).

    Rows sharing (series, x) are averaged with a normal 95% interval;
    a single row keeps its own ci_low/ci_high if present.
    """
    groups: dict = {}
    for path in inputs:
        try:
            rows, header = _read_csv(path)
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc}") from None
        if not rows:
            continue
        missing = [c for c in (x, y, series) if c and c not in header]
        if missing:
            raise UsageError(f"{path}: missing columns {', '.join(missing)}")
        for row in rows:
            key = (row[series] if series else Path(path).stem, float(row[x]))
            groups.setdefault(key, []).append(row)
    out = []
    for (name, xv), rows in sorted(groups.items()):
        ys = np.array([float(r[y]) for r in rows])
        m = float(ys.mean())
        if len(rows) == 1:
            lo = float(rows[0]["ci_low"]) if "ci_low" in rows[0] else m
            hi = float(rows[0]["ci_high"]) if "ci_high" in rows[0] else m
        else:
            half = float(Z95 * ys.std(ddof=1) / math.sqrt(len(ys)))
            lo, hi = m - half, m + half
        out.append([name, xv, m, lo, hi])
    return ["series", "x", "y", "y_lo", "y_hi"], out


def emit_plotdata(inputs, x: str, y: str, out_path, series: str | None = None) -> Path:
    cols, rows = plotdata_rows(inputs, x, y, series)
    out_path = Path(out_path)
    _atomic_write(out_path, _render([], cols, rows))
    return out_path


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _render(comments, cols, rows) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def output_name(cfg: dict) -> str:
    if cfg["command"] == "report":
        return "plotdata"
    return "-".join(filter(None, [cfg["command"], cfg.get("action")]))


def run_experiment(config: dict) -> dict:
    """Validate, compute, and write ``<out>/<name>.csv`` and ``<name>.manifest.json``.

    Returns the manifest. Raises UsageError for invalid configs and
    BracketError / RegimeError when an estimate cannot be formed; nothing
    is written in either case.
    """
    cfg = validate(config)
    if cfg.get("threads"):
        import numba
        numba.set_num_threads(min(int(cfg["threads"]), numba.config.NUMBA_NUM_THREADS))
    start = time.perf_counter()
    comments, cols, rows = _table(cfg)
    text = _render(comments, cols, rows)
    out = Path(cfg["out"])
    name = output_name(cfg)
    csv_path = out / f"{name}.csv"
    manifest = {
        "config": {k: cfg[k] for k in sorted(cfg)},
        "version": __version__,
        "outputs": [str(csv_path)],
        "rows": len(rows),
        "wall_time_s": round(time.perf_counter() - start, 6),
    }
    _atomic_write(csv_path, text)
    _atomic_write(out / f"{name}.manifest.json", json.dumps(manifest, indent=2, default=str) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# argparse front end


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--samples", type=int, default=argparse.SUPPRESS, help="number of replicas")
    common.add_argument("--first-replica", dest="first_replica", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat YAML file of keys")

    parser = argparse.ArgumentParser(prog="percolab", parents=[common],
                                     description="Self-destructive percolation experiments on finite graphs.")
    parser.add_argument("--version", action="version", version=f"percolab {__version__}")
    sub = parser.add_subparsers(dest="command")

    def opt(p, *names, **kw):
        p.add_argument(*names, default=argparse.SUPPRESS, **kw)

    def add(parent, name, keys, help=None):
        p = parent.add_parser(name, parents=[common], help=help)
        for k in sorted(keys):
            flag = "--" + k.replace("_", "-")
            if k in ("b", "L", "functions", "radius", "subtree_root"):
                opt(p, flag, dest=k, type=int)
            elif k in ("tol", "scale", "p_ref", "gamma_level", "pc"):
                opt(p, flag, dest=k, type=float)
            elif k == "input":
                opt(p, flag, dest=k, nargs="+")
            else:
                opt(p, flag, dest=k)
        return p

    groups = {}
    for (command, action), keys in ACTIONS.items():
        if action is None:
            add(sub, command, keys)
            continue
        if command not in groups:
            gp = sub.add_parser(command, parents=[common])
            groups[command] = gp.add_subparsers(dest="action")
        add(groups[command], action, keys)
    return parser


def _merge(args: argparse.Namespace) -> dict:
    given = {k: v for k, v in vars(args).items() if v is not None}
    path = given.pop("config", None)
    cfg = load_config(path) if path else {}
    cfg.update(given)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = _merge(args)
        if "command" not in cfg:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        manifest = run_experiment(cfg)
    except (UsageError, ResourceLimitError) as exc:
        print(f"percolab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BracketError, RegimeError) as exc:
        print(f"percolab: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    for path in manifest["outputs"]:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

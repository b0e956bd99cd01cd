"""Command line entry point ``cwmix``.

Settings resolve as flag > config file > built-in default. The config file
is a flat JSON object keyed by flag names; a ``.meta.json`` written by an
earlier run is also accepted, in which case its ``config`` entry is used.
"""

from __future__ import annotations

import argparse
import ast
import json
import math
import operator
import os
import re
import sys

import numpy as np

from . import __version__
from .core import ModelParams, SpinConfiguration, critical_time, cutoff_center
from .experiments import DEFAULTS as EXP_DEFAULTS, EXPERIMENTS, ExperimentSpec, run_experiment
from .glauber import COUPLING_KINDS, Chain, CoupledPair, CouplingError, Stop, run_until
from .magchain import (build_kernel, distance_profile, hitting_time_table, log_cheeger_cut,
                       log_stationary, stationary_moments)
from .rng import RngStream
from .tables import ResultTable, emit, to_csv, to_json


class UsageError(ValueError):
    pass


# -- time grids --------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_IMPLICIT = re.compile(r"(?<![A-Za-z_\d.])(\d+(?:\.\d*)?)\s*(?=(?![eE][+-]?\d)[A-Za-z_(])")


def eval_expr(text: str, symbols: dict) -> float:
    """Arithmetic on numbers and ``symbols``; ``10n`` means ``10*n``."""
    src = _IMPLICIT.sub(r"\1*", text.strip())
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise UsageError(f"cannot parse time expression {text!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in symbols:
                raise UsageError(f"unknown symbol {node.id!r} in {text!r}")
            val = symbols[node.id]
            if isinstance(val, Exception):
                raise UsageError(f"{node.id}: {val}")
            return val
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        raise UsageError(f"unsupported syntax in time expression {text!r}")

    return float(ev(tree))


def time_symbols(params: ModelParams) -> dict:
    try:
        t_n = cutoff_center(params)
    except ValueError as exc:
        t_n = exc
    return {"n": params.n, "t_n": t_n, "t_crit": critical_time(params)}


def parse_times(text: str, params: ModelParams) -> list[int]:
    """Comma separated items, each ``expr`` or ``a..b[:step c]``; rounded, clamped at 0, sorted."""
    sym = time_symbols(params)
    out: set[int] = set()
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        if ".." in item:
            rng_part, _, step_part = item.partition(":")
            a_txt, _, b_txt = rng_part.partition("..")
            a, b = eval_expr(a_txt, sym), eval_expr(b_txt, sym)
            step = 1.0
            if step_part:
                step_txt = step_part.strip()
                if step_txt.startswith("step"):
                    step_txt = step_txt[4:]
                step = eval_expr(step_txt, sym)
            if not step > 0:
                raise UsageError(f"step must be positive in {item!r}")
            count = int(math.floor((b - a) / step + 1e-9)) + 1
            if count > 10**6:
                raise UsageError(f"time range {item!r} has too many points")
            out.update(round(a + i * step) for i in range(max(count, 0)))
        else:
            out.add(round(eval_expr(item, sym)))
    if not out:
        raise UsageError("empty time grid")
    return sorted({max(0, t) for t in out})


# -- starts ------------------------------------------------------------------

def parse_start(text: str, n: int, rng: np.random.Generator | None = None) -> SpinConfiguration:
    """all-plus | all-minus | random | plus-count:K (also ``k=K`` or a bare integer)."""
    t = str(text).strip().lower()
    if t == "all-plus":
        return SpinConfiguration.all_plus(n)
    if t == "all-minus":
        return SpinConfiguration.all_minus(n)
    if t == "random":
        return SpinConfiguration.random(n, rng or np.random.default_rng(0))
    m = re.fullmatch(r"(?:plus-count[:=]|k=)?(\d+)", t)
    if m:
        k = int(m.group(1))
        if k > n:
            raise UsageError(f"plus count {k} exceeds n={n}")
        return SpinConfiguration.with_plus_count(n, k, rng)
    raise UsageError(f"bad start spec {text!r}")


# -- config resolution -------------------------------------------------------

ALIASES = {"n_list": "n", "gamma_list": "gamma", "fmt": "format"}


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a JSON object")
    if isinstance(doc.get("config"), dict):
        doc = doc["config"]
    flat = {}
    for k, v in doc.items():
        if isinstance(v, dict):
            raise UsageError(f"config key {k!r}: nested objects are not allowed")
        flat[ALIASES.get(k, k).replace("-", "_")] = v
    return flat


BASE_DEFAULTS = {"seed": 0, "format": "csv", "out": None, "workers": 1, "replicas": 1,
                 "restricted": False}

SUB_DEFAULTS = {
    "exact-tv": {"beta": 0.5, "start": "all-plus", "times": "0..t_n+10n:step n"},
    "stationary": {"beta": 0.5},
    "hitting": {"beta": 1.5, "top": None},
    "cheeger": {"beta": 1.5},
    "simulate": {"beta": 0.5, "start": "all-plus", "steps": 1000, "every": 1},
    "couple": {"beta": 0.5, "kind": "grand-monotone", "start": "all-plus", "start_tilde": "all-minus",
               "steps": 1000, "stop": "coalescence"},
}


def resolve(args: argparse.Namespace, file_cfg: dict, fields: list[str]) -> dict:
    if args.command == "experiment":
        base = dict(BASE_DEFAULTS)
        spec_defaults = dict(EXP_DEFAULTS[args.experiment])
        for k, v in spec_defaults.items():
            base[ALIASES.get(k, k)] = v
    else:
        base = dict(BASE_DEFAULTS, **SUB_DEFAULTS[args.command])
    env = os.environ.get("CWMIX_WORKERS")
    if env:
        base["workers"] = env
    unknown = set(file_cfg) - set(fields)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for f in fields:
        v = getattr(args, f, None)
        out[f] = v if v is not None else file_cfg.get(f, base.get(f))
    return out


def _int_list(v) -> list[int]:
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    return [int(x) for x in str(v).replace(" ", "").split(",") if x]


def _float_list(v) -> list[float]:
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).replace(" ", "").split(",") if x]


def _coerce(cfg: dict, command: str) -> None:
    """Turn flag strings into numbers so the echoed config and the meta file are typed."""
    try:
        if cfg.get("n") is not None:
            ns = _int_list(cfg["n"])
            cfg["n"] = ns if command in ("experiment", "cheeger") else (ns[0] if len(ns) == 1 else ns)
        if cfg.get("beta") is not None:
            bs = _float_list(cfg["beta"])
            cfg["beta"] = bs[0] if len(bs) == 1 else bs
    except ValueError as exc:
        raise UsageError(f"bad numeric value: {exc}") from exc


def _single_n(cfg) -> int:
    ns = _int_list(cfg["n"]) if cfg.get("n") is not None else []
    if len(ns) != 1:
        raise UsageError("--n takes a single integer here")
    return ns[0]


def _params(cfg) -> ModelParams:
    try:
        return ModelParams(_single_n(cfg), float(cfg["beta"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# -- subcommands -------------------------------------------------------------

def cmd_exact_tv(cfg) -> ResultTable:
    params = _params(cfg)
    kernel = build_kernel(params, restricted=bool(cfg["restricted"]))
    times = parse_times(cfg["times"], params)
    start = parse_start(cfg["start"], params.n, RngStream(int(cfg["seed"])).generator_for_setup())
    k = start.plus_count
    if kernel.restricted:
        k = max(k, params.n - k)
    table = ResultTable(["n", "beta", "t", "d"])
    for t, d in distance_profile(kernel, k, times):
        table.append([params.n, params.beta, t, d])
    table.meta = {"start_plus_count": k, "restricted": kernel.restricted}
    return table


def cmd_stationary(cfg) -> ResultTable:
    params = _params(cfg)
    kernel = build_kernel(params, restricted=bool(cfg["restricted"]))
    logpi = log_stationary(kernel)
    table = ResultTable(["k", "s", "pi", "log_pi"])
    for k, s, lp in zip(kernel.plus_counts, kernel.s, logpi):
        table.append([int(k), float(s), math.exp(lp), float(lp)])
    table.meta = {"moments": stationary_moments(params), "restricted": kernel.restricted}
    return table


def cmd_hitting(cfg) -> ResultTable:
    params = _params(cfg)
    kernel = build_kernel(params, restricted=True)
    top = cfg.get("top")
    ht = hitting_time_table(kernel, None if top is None else int(top))
    table = ResultTable(["ell", "expected_time", "cumulative"])
    for ell, e, c in zip(ht.levels, ht.step, ht.cumulative):
        table.append([int(ell), float(e), float(c)])
    table.meta = {"note": "expected_time is E[tau_ell] from ell-1; cumulative is from the bottom state"}
    return table


def cmd_cheeger(cfg) -> ResultTable:
    table = ResultTable(["n", "beta", "log_phi", "phi"])
    beta = float(cfg["beta"])
    for n in _int_list(cfg["n"]):
        lp = log_cheeger_cut(ModelParams(n, beta))
        table.append([n, beta, lp, math.exp(lp)])
    return table


def cmd_simulate(cfg) -> ResultTable:
    params = _params(cfg)
    steps, every = int(cfg["steps"]), int(cfg["every"])
    if steps < 0 or every < 1:
        raise UsageError("steps must be >= 0 and every >= 1")
    table = ResultTable(["replica", "t", "plus_count", "s"])
    for r in range(int(cfg["replicas"])):
        rng = RngStream(int(cfg["seed"]), r)
        x = parse_start(cfg["start"], params.n, rng.generator_for_setup())
        restricted = bool(cfg["restricted"])
        sign = 1
        if restricted and 2 * x.plus_count < params.n:
            sign = -1
        chain = Chain(x, restricted=restricted, sign=sign)
        table.append([r, 0, chain.plus_count, params.s_of(chain.plus_count)])
        while chain.time < steps:
            chain.advance(params, rng, min(every, steps - chain.time))
            table.append([r, chain.time, chain.plus_count, params.s_of(chain.plus_count)])
    return table


STOPS = {"none": Stop.never, "tau0": Stop.tau0, "tau_mag": Stop.tau_mag,
         "coalescence": Stop.coalescence, "tau_abs": Stop.tau_abs}


def cmd_couple(cfg) -> ResultTable:
    params = _params(cfg)
    kind = cfg["kind"]
    if kind not in COUPLING_KINDS:
        raise UsageError(f"unknown coupling {kind!r}; choose from {', '.join(COUPLING_KINDS)}")
    if cfg["stop"] not in STOPS:
        raise UsageError(f"unknown stop {cfg['stop']!r}; choose from {', '.join(STOPS)}")
    steps = int(cfg["steps"])
    if steps < 1:
        raise UsageError("steps must be >= 1")
    table = ResultTable(["replica", "time", "censored", "plus_count", "plus_count_tilde", "disagreements"])
    for r in range(int(cfg["replicas"])):
        rng = RngStream(int(cfg["seed"]), r)
        setup = rng.generator_for_setup()
        x = parse_start(cfg["start"], params.n, setup)
        if cfg["start_tilde"].strip().lower() == "random" and kind in ("matched-site", "two-coordinate", "reflection"):
            # draw the partner on the level the coupling requires
            k = x.plus_count if kind != "reflection" else params.n - x.plus_count
            xt = SpinConfiguration.with_plus_count(params.n, k, setup)
        else:
            xt = parse_start(cfg["start_tilde"], params.n, setup)
        sigma0 = x.copy() if kind == "two-coordinate" else None
        try:
            pair = CoupledPair(x, xt, kind, sigma0)
        except CouplingError as exc:
            raise UsageError(str(exc)) from exc
        stop = STOPS[cfg["stop"]]()
        if stop.code == Stop.never().code:
            pair.advance(params, rng, steps)
            rec_time, cens = pair.time, False
        else:
            rec = run_until(pair, stop, params, rng, steps)
            rec_time, cens = (rec.time if rec.time is not None else pair.time), rec.censored
        table.append([r, rec_time, int(cens), pair.x.plus_count, pair.x_tilde.plus_count, pair.disagreements])
    return table


def cmd_experiment(cfg, name: str) -> ResultTable:
    beta = cfg["beta"]
    if name == "lemmas":
        beta = _float_list(beta)
    spec = ExperimentSpec(
        name=name, beta=float(beta) if not isinstance(beta, list) else beta,
        n_list=_int_list(cfg["n"]), gamma_list=_float_list(cfg.get("gamma") or []),
        times=_float_list(cfg.get("times") or []), replicas=int(cfg["replicas"]),
        seed=int(cfg["seed"]), eps=_float_list(cfg.get("eps") or [0.25]), out=None,
        fmt=cfg["format"], workers=int(cfg["workers"]), mc_n_max=int(cfg.get("mc_n_max") or 0))
    return run_experiment(spec)


# -- parser ------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, *extra):
    p.add_argument("--config", help="flat JSON file of settings (flags override it)")
    p.add_argument("--n", help="system size (comma list where several are allowed)")
    p.add_argument("--beta", help="inverse temperature")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path; a .meta.json is written beside it (stdout if omitted)")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--workers", type=int, help="worker processes (env CWMIX_WORKERS is the fallback)")
    for name in extra:
        if name == "restricted":
            p.add_argument("--restricted", action="store_true", default=None,
                           help="use the restricted (|S|) chain")
        elif name == "replicas":
            p.add_argument("--replicas", type=int)
        elif name == "start":
            p.add_argument("--start", help="all-plus | all-minus | random | plus-count:K")
        elif name == "steps":
            p.add_argument("--steps", type=int)
        elif name == "times":
            p.add_argument("--times", help='time grid, e.g. "t_n-10n..t_n+10n:step n" or "0,100,t_crit"')


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cwmix", description="Curie-Weiss Glauber dynamics: exact and Monte Carlo tools")
    ap.add_argument("--version", action="version", version=f"cwmix {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exact-tv", help="exact TV distance to equilibrium on a time grid")
    _common(p, "restricted", "start", "times")
    p = sub.add_parser("stationary", help="stationary law of the magnetization chain")
    _common(p, "restricted")
    p = sub.add_parser("hitting", help="expected level-to-level hitting times of the restricted chain")
    _common(p)
    p.add_argument("--top", type=int, help="highest plus count in the table (default n)")
    p = sub.add_parser("cheeger", help="log conductance of the cut {S < 0}")
    _common(p)
    p = sub.add_parser("simulate", help="Monte Carlo trajectories of the plus count")
    _common(p, "restricted", "replicas", "start", "steps")
    p.add_argument("--every", type=int, help="record every this many steps")
    p = sub.add_parser("couple", help="run a coupling until a stopping rule")
    _common(p, "replicas", "start", "steps")
    p.add_argument("--start-tilde", dest="start_tilde")
    p.add_argument("--kind", help=" | ".join(COUPLING_KINDS))
    p.add_argument("--stop", help=" | ".join(STOPS))
    p = sub.add_parser("experiment", help="scripted experiments")
    p.add_argument("experiment", choices=EXPERIMENTS)
    _common(p, "replicas", "times")
    p.add_argument("--gamma", help="comma list of gamma values")
    p.add_argument("--eps", help="comma list of eps levels")
    p.add_argument("--mc-n-max", dest="mc_n_max", type=int, help="largest n for the Monte Carlo parts")
    return ap


_META_KEYS = {"config", "command", "experiment", "out"}


def _fields(args: argparse.Namespace) -> list[str]:
    return sorted(k for k in vars(args) if k not in _META_KEYS)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        file_cfg = load_config(args.config) if args.config else {}
        if args.command == "experiment":
            file_cfg = {k: v for k, v in file_cfg.items() if k not in ("name", "out")}
        cfg = resolve(args, file_cfg, _fields(args))
        cfg["out"] = args.out if args.out is not None else file_cfg.get("out")
        cfg["workers"] = int(cfg["workers"])
        _coerce(cfg, args.command)
        shown = {"command": args.command, **cfg}
        if args.command == "experiment":
            shown["experiment"] = args.experiment
        print(json.dumps(shown, sort_keys=True, default=str), file=sys.stderr)
        if args.command == "experiment":
            table = cmd_experiment(cfg, args.experiment)
        else:
            table = COMMANDS[args.command](cfg)
            table.meta = {"command": args.command, "version": __version__, "seed": cfg.get("seed"),
                          "config": {k: v for k, v in cfg.items() if k not in ("out", "workers")}, **table.meta}
        if cfg["out"]:
            emit(table, cfg["format"], cfg["out"])
        else:
            sys.stdout.write(to_csv(table) if cfg["format"] == "csv" else to_json(table))
    except (UsageError, ValueError, TypeError) as exc:
        print(f"cwmix: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, CouplingError, ArithmeticError, RuntimeError) as exc:
        print(f"cwmix: runtime error: {exc}", file=sys.stderr)
        return 1
    return 0


def _run():  # pragma: no cover
    sys.exit(main())


COMMANDS = {
    "exact-tv": cmd_exact_tv,
    "stationary": cmd_stationary,
    "hitting": cmd_hitting,
    "cheeger": cmd_cheeger,
    "simulate": cmd_simulate,
    "couple": cmd_couple,
}

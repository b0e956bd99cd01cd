"""Scripted, seeded experiments producing :class:`~cwmix.tables.ResultTable` objects.

Exact quantities come from the magnetization chain; Monte Carlo is used only
for configuration-level couplings. Replica ``r`` draws from stream ``r`` of
the experiment seed, and tasks are merged in submission order, so a table
depends only on its spec.
"""

from __future__ import annotations

import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import ModelParams, SpinConfiguration, contraction_rate, cutoff_center, s_star
from .glauber import CoupledPair, Chain, Stop, run_until, tau_star_stop
from .magchain import (build_kernel, crossing_times, distance_profile, evolve, extreme_starts,
                       expectation_contraction_margin, hitting_time_table, level_above,
                       log_cheeger_cut, point_mass, t_mix_exact)
from .rng import RngStream
from .tables import ResultTable, emit

EXPERIMENTS = ("cutoff", "critical", "metastable", "coupling", "lemmas")
NAN = float("nan")


@dataclass
class ExperimentSpec:
    """Inputs of one experiment run.

    ``beta`` is a single value except for the lemma grid, which accepts a
    list. ``times`` are multiples of n for the contraction check. MC parts run
    only for n <= ``mc_n_max``.
    """

    name: str
    beta: float | list = 0.5
    n_list: list = field(default_factory=list)
    gamma_list: list = field(default_factory=list)
    times: list = field(default_factory=list)
    replicas: int = 1
    seed: int = 0
    eps: list = field(default_factory=lambda: [0.25])
    out: str | None = None
    fmt: str = "csv"
    workers: int = 1
    mc_n_max: int = 0

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        self.n_list = [int(n) for n in self.n_list]
        if not self.n_list:
            raise ValueError("n_list is empty")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError("n_list must be strictly ascending")
        if any(n < 2 for n in self.n_list):
            raise ValueError("every n must be >= 2")
        if int(self.replicas) < 1:
            raise ValueError("replicas must be >= 1")
        if int(self.seed) < 0:
            raise ValueError("seed must be non-negative")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")
        if any(not 0.0 < e < 0.5 for e in self.eps):
            raise ValueError("eps levels must lie in (0, 1/2)")
        self.replicas, self.seed, self.workers = int(self.replicas), int(self.seed), int(self.workers)
        self.mc_n_max = int(self.mc_n_max)
        if isinstance(self.beta, (list, tuple)):
            if self.name != "lemmas":
                raise ValueError(f"{self.name} takes a single beta")
            self.beta = [float(b) for b in self.beta]
        else:
            self.beta = float(self.beta)

    @property
    def betas(self) -> list[float]:
        return list(self.beta) if isinstance(self.beta, list) else [self.beta]

    def config(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("workers")  # results do not depend on it
        return d


DEFAULTS = {
    "cutoff": dict(beta=0.5, n_list=[200, 400, 800, 1600], gamma_list=list(range(-10, 11))),
    "critical": dict(beta=1.0, n_list=[64, 128, 256, 512, 1024], replicas=100, mc_n_max=256),
    "metastable": dict(beta=1.5, n_list=[128, 256, 512, 1024], replicas=100, mc_n_max=1024),
    "coupling": dict(beta=0.5, n_list=[500], times=[1, 2, 4], gamma_list=[1, 4, 16], replicas=500,
                     mc_n_max=10**9),
    "lemmas": dict(beta=[0.25, 0.5, 0.75, 1.0], n_list=[64, 256, 1024]),
}

BANDS = {
    "cutoff": {"d_before_min": 0.9, "d_after_max": 0.1, "window_ratio": [0.5, 2.0]},
    "critical": {"loglog_slope": [1.35, 1.65], "quadrupling_ratio": [6.0, 10.0], "mc_median_factor": 8.0},
    "metastable": {"t_mix_ratio": [0.5, 2.0], "log_phi_slope_rel_change": 0.1},
    "coupling": {"contraction": "value <= 1 + 3 se", "tail": "non-increasing in gamma"},
    "lemmas": {"margin_min": -1e-10},
}


def default_spec(name: str, **overrides) -> ExperimentSpec:
    if name not in DEFAULTS:
        raise ValueError(f"unknown experiment {name!r}")
    kw = dict(DEFAULTS[name])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(name=name, **kw)


def _code_version() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def _meta(spec: ExperimentSpec, **extra) -> dict:
    meta = {"experiment": spec.name, "seed": spec.seed, "version": __version__,
            "code": _code_version(), "config": spec.config(), "bands": BANDS[spec.name]}
    meta.update(extra)
    return meta


def parallel_map(fn, tasks: list, workers: int = 1) -> list:
    """Ordered map; a process pool when ``workers > 1``."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        chunk = max(1, len(tasks) // (4 * workers))
        return list(pool.map(_star, [(fn, t) for t in tasks], chunksize=chunk))


def _star(job):
    fn, args = job
    return fn(*args)


def _loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# -- cutoff ------------------------------------------------------------------

def cutoff_profile(spec: ExperimentSpec) -> ResultTable:
    beta = spec.beta
    if not beta < 1.0:
        raise ValueError(f"cutoff profile needs beta < 1, got {beta}")
    wcols = []
    for e in spec.eps:
        wcols += [f"window_{e:g}", f"window_{e:g}_over_n"]
    table = ResultTable(["n", "beta", "gamma", "t", "d", "t_n"] + wcols)
    gammas = sorted(float(g) for g in spec.gamma_list)
    for n in spec.n_list:
        params = ModelParams(n, beta)
        kernel = build_kernel(params)
        t_n = cutoff_center(params)
        # t_n + gamma n can be negative at desk scale; the distance at t = 0 stands in
        times = [max(0, round(t_n + g * n)) for g in gammas]
        starts = extreme_starts(kernel)
        d = np.max([[dv for _, dv in distance_profile(kernel, s, times)] for s in starts], axis=0)
        wins = []
        for e in spec.eps:
            cross = crossing_times(kernel, starts, [e, 1.0 - e])
            w = cross[e] - cross[1.0 - e]
            wins += [w, w / n]
        for g, t, dv in zip(gammas, times, d):
            table.append([n, beta, g, t, float(dv), t_n] + wins)
    table.meta = _meta(spec, scope="distances from the extreme magnetization starts, which equal the "
                                   "full-chain distance from all-plus; times below zero are clamped to 0")
    return table


# -- critical ----------------------------------------------------------------

def critical_coupling_time(x: SpinConfiguration, xt: SpinConfiguration, params: ModelParams,
                           rng: RngStream, max_steps: int) -> tuple[int | None, dict]:
    """Coupling time of the crossing / reflection / matched-site composite.

    Runs independently until |S| = |S~|; then matched-site to coalescence if
    S = S~, otherwise reflection until S hits zero. For odd n an independent
    step follows a reflection phase and the loop repeats. Returns
    (time or None if censored, phase counts).
    """
    n = params.n
    pair = CoupledPair(x, xt, "independent")
    phases = {"independent": 0, "reflection": 0, "matched-site": 0}
    while pair.time < max_steps:
        budget = max_steps - pair.time
        k, kt = pair.x.plus_count, pair.x_tilde.plus_count
        if k == kt:
            pair.switch("matched-site")
            phases["matched-site"] += 1
            rec = run_until(pair, Stop.coalescence(), params, rng, budget)
            return (None if rec.censored else rec.time), phases
        if k + kt == n:
            pair.switch("reflection")
            phases["reflection"] += 1
            rec = run_until(pair, Stop.tau0(), params, rng, budget)
            if rec.censored:
                break
            if n % 2 == 1 and pair.time < max_steps:
                pair.switch("independent")
                pair.step(params, rng)
            continue
        pair.switch("independent")
        phases["independent"] += 1
        rec = run_until(pair, Stop.abs_equal(), params, rng, budget)
        if rec.censored:
            break
    return None, phases


def _critical_replica(n: int, beta: float, seed: int, r: int, max_steps: int):
    rng = RngStream(seed, r)
    x = SpinConfiguration.all_plus(n)
    xt = SpinConfiguration.with_plus_count(n, n // 2, rng.generator_for_setup())
    t, _ = critical_coupling_time(x, xt, ModelParams(n, beta), rng, max_steps)
    return t


def critical_scaling(spec: ExperimentSpec) -> ResultTable:
    beta = spec.beta
    table = ResultTable(["n", "beta", "t_mix", "t_mix_over_n1.5", "ratio_to_previous", "loglog_slope",
                         "mc_replicas", "mc_median", "mc_censored", "mc_median_over_t_mix"])
    tmix = []
    for n in spec.n_list:
        kernel = build_kernel(ModelParams(n, beta))
        tmix.append(t_mix_exact(kernel, eps=0.25))
    slope = _loglog_slope(spec.n_list, tmix) if len(tmix) > 1 else NAN
    for i, (n, t) in enumerate(zip(spec.n_list, tmix)):
        prev = t / tmix[i - 1] if i else NAN
        mc = [0, NAN, 0, NAN]
        if n <= spec.mc_n_max:
            max_steps = int(50 * n ** 1.5)
            res = parallel_map(_critical_replica, [(n, beta, spec.seed, r, max_steps)
                                                   for r in range(spec.replicas)], spec.workers)
            done = [v for v in res if v is not None]
            med = float(np.median(done)) if done else NAN
            mc = [spec.replicas, med, len(res) - len(done), med / t]
        table.append([n, beta, t, t / n ** 1.5, prev, slope] + mc)
    table.meta = _meta(spec, mc_start="all-plus against a configuration with floor(n/2) plus spins",
                       mc_censoring="50 n^1.5 steps; censored runs excluded from the median")
    return table


# -- metastability -----------------------------------------------------------

def _top_descent_replica(n: int, beta: float, seed: int, r: int, max_steps: int):
    params = ModelParams(n, beta)
    chain = Chain(SpinConfiguration.all_plus(n), restricted=True)
    rec = run_until(chain, tau_star_stop(params), params, RngStream(seed, r), max_steps)
    return rec.time


def tau_star_level(params: ModelParams, c: float = 1.0) -> int:
    """Plus count of the level s* + c / sqrt(n), rounded up."""
    return level_above(params, s_star(params.beta) + c / math.sqrt(params.n))


def metastability_suite(spec: ExperimentSpec) -> ResultTable:
    beta = spec.beta
    if not beta > 1.0:
        raise ValueError(f"metastability suite needs beta > 1, got {beta}")
    table = ResultTable(["n", "beta", "restricted_t_mix", "t_mix_over_nlogn", "tau_star_level",
                         "e0_tau_star", "e0_over_nlogn", "log_phi", "log_phi_slope",
                         "mc_replicas", "mc_mean_top_descent", "mc_se", "mc_censored", "mc_over_nlogn"])
    prev = None
    for n in spec.n_list:
        params = ModelParams(n, beta)
        nlogn = n * math.log(n)
        kernel = build_kernel(params, restricted=True)
        t_mix = t_mix_exact(kernel, eps=0.25)
        level = tau_star_level(params)
        e0 = float(hitting_time_table(kernel, level).cumulative[-1])
        lphi = log_cheeger_cut(params)
        slope = (lphi - prev[1]) / (n - prev[0]) if prev else NAN
        prev = (n, lphi)
        mc = [0, NAN, NAN, 0, NAN]
        if n <= spec.mc_n_max:
            max_steps = int(20 * nlogn)
            res = parallel_map(_top_descent_replica, [(n, beta, spec.seed, r, max_steps)
                                                      for r in range(spec.replicas)], spec.workers)
            done = np.array([v for v in res if v is not None], dtype=float)
            mean = float(done.mean()) if done.size else NAN
            se = float(done.std(ddof=1) / math.sqrt(done.size)) if done.size > 1 else NAN
            mc = [spec.replicas, mean, se, int(len(res) - done.size), mean / nlogn]
        table.append([n, beta, t_mix, t_mix / nlogn, level, e0, e0 / nlogn, lphi, slope] + mc)
    table.meta = _meta(spec, tau_star="first time the restricted chain from the bottom state reaches "
                                      "plus count ceil(n(1 + s* + n^-1/2)/2)",
                       top_descent="restricted chain from all-plus until S <= s* + n^-1/2; censored at 20 n ln n",
                       conductance="cut {S < 0} of the unrestricted chain")
    return table


# -- coupling validation -----------------------------------------------------

def _contraction_replica(n: int, beta: float, seed: int, r: int, times: tuple):
    params = ModelParams(n, beta)
    rng = RngStream(seed, r)
    pair = CoupledPair(SpinConfiguration.all_plus(n), SpinConfiguration.all_minus(n), "grand-monotone")
    out = []
    for t in times:
        pair.advance(params, rng, t - pair.time)
        out.append(pair.disagreements)
    return out


def tau_mag_time(x: SpinConfiguration, xt: SpinConfiguration, params: ModelParams, rng: RngStream,
                 switch_time: int, max_steps: int) -> int | None:
    """tau_mag under grand coupling up to ``switch_time`` and independent moves afterwards."""
    pair = CoupledPair(x, xt, "grand-monotone")
    stop = Stop.tau_mag()
    rec = run_until(pair, stop, params, rng, max(1, min(switch_time, max_steps)))
    if not rec.censored:
        return rec.time
    pair.switch("independent")
    if pair.time >= max_steps:
        return None
    rec = run_until(pair, stop, params, rng, max_steps - pair.time)
    return rec.time


def _tau_mag_replica(n: int, beta: float, seed: int, r: int, switch_time: int, max_steps: int):
    x = SpinConfiguration.all_plus(n)
    xt = SpinConfiguration.all_minus(n)
    return tau_mag_time(x, xt, ModelParams(n, beta), RngStream(seed, r), switch_time, max_steps)


def coupling_validation(spec: ExperimentSpec) -> ResultTable:
    beta = spec.beta
    table = ResultTable(["quantity", "n", "beta", "x", "value", "se", "bound", "margin",
                         "replicas", "censored"])
    R = spec.replicas
    for n in spec.n_list:
        params = ModelParams(n, beta)
        rho = contraction_rate(params)
        times = tuple(int(m * n) for m in sorted(spec.times))
        res = np.array(parallel_map(_contraction_replica, [(n, beta, spec.seed, r, times) for r in range(R)],
                                    spec.workers), dtype=float).reshape(R, len(times))
        for j, t in enumerate(times):
            scale = rho ** t * n
            mean = res[:, j].mean() / scale
            se = res[:, j].std(ddof=1) / math.sqrt(R) / scale if R > 1 else NAN
            table.append(["contraction", n, beta, t, float(mean), float(se), 1.0,
                          float(1.0 + 3.0 * se - mean), R, 0])
        if beta < 1.0 and spec.gamma_list:
            t_n = cutoff_center(params)
            gammas = sorted(float(g) for g in spec.gamma_list)
            switch = int(math.ceil(t_n))
            max_steps = int(math.ceil(t_n + gammas[-1] * n)) + 1
            # streams offset so the tail runs do not reuse the contraction draws
            res = parallel_map(_tau_mag_replica, [(n, beta, spec.seed, R + r, switch, max_steps)
                                                  for r in range(R)], spec.workers)
            cens = sum(v is None for v in res)
            tt = np.array([np.inf if v is None else v for v in res])
            last = NAN
            for g in gammas:
                p = float(np.mean(tt > t_n + g * n))
                se = math.sqrt(p * (1 - p) / R)
                table.append(["tau_mag_tail", n, beta, g, p, se, NAN, last - p, R, cens])
                last = p
    table.meta = _meta(spec, contraction="E dist(X_t, X~_t) / (rho^t n) from (all-plus, all-minus) under grand coupling",
                       tau_mag="grand coupling until ceil(t_n), independent afterwards; x is gamma; "
                               "margin is the drop from the previous gamma",
                       streams="contraction replicas use streams 0..R-1, tail replicas R..2R-1")
    return table


# -- lemma margins -----------------------------------------------------------

def _time_grid(limit: int, points: int = 40) -> list[int]:
    g = np.unique(np.round(np.geomspace(1, max(limit, 1), points)).astype(int))
    return [0] + [int(t) for t in g]


def _laws(kernel, start: int, times: list[int]):
    dist = point_mass(kernel, start)
    t_prev = 0
    for t in times:
        dist = evolve(kernel, dist, t - t_prev)
        t_prev = t
        yield t, dist


def lemma_checks(spec: ExperimentSpec) -> ResultTable:
    table = ResultTable(["check", "n", "beta", "start", "t", "value", "bound", "margin"])

    def add(check, n, beta, start, t, value, bound):
        table.append([check, n, beta, start, t, float(value), float(bound), float(bound - value)])

    for beta in spec.betas:
        for n in spec.n_list:
            params = ModelParams(n, beta)
            kernel = build_kernel(params)
            s = kernel.s
            rho = contraction_rate(params)
            ev = s + 2.0 / n * (kernel.up - kernel.down)
            var1 = (4.0 / n ** 2) * (kernel.up + kernel.down) - (ev - s) ** 2
            v1 = float(var1.max())
            if beta < 1.0:
                grid = _time_grid(int(4 * cutoff_center(params) + 10 * n))
                for start in (0, n):
                    for t, dist in _laws(kernel, start, grid):
                        add("mean_decay", n, beta, start, t, abs(dist @ s), 2.0 * math.exp(-(1 - beta) * t / n))
            if beta <= 1.0:
                cap = 1.0 / (1.0 - rho * rho)
                grid = _time_grid(int(n ** 1.5) if beta == 1.0 else int(4 * cutoff_center(params) + 10 * n))
                for start in (0, n // 2, n):
                    for t, dist in _laws(kernel, start, grid):
                        m = dist @ s
                        var = max(float(dist @ (s - m) ** 2), 0.0)
                        add("variance_v1", n, beta, start, t, var, v1 * min(t, cap))
                        add("variance_4_over_n_sq", n, beta, start, t, var, (4.0 / n) ** 2 * min(t, cap))
                        if beta == 1.0 and t >= 1:
                            add("critical_var_scaled", n, beta, start, t, var * n * n / t, 16.0)
            drift = (ev - s)
            pos = s >= 0
            lin = (np.tanh(beta * s) - s) / n
            add("drift_upper_nonneg_s", n, beta, -1, 1, float((drift - lin)[pos].max()), 0.0)
            add("drift_lower_nonpos_s", n, beta, -1, 1, float((lin - drift)[s <= 0].max()), 0.0)
            big = np.abs(s) > 1.0 / n + 1e-12
            # E|S_1| from the kernel rows: |s| moves by +-2/n away from zero
            eabs = np.abs(s) + 2.0 / n * np.sign(s) * (kernel.up - kernel.down)
            rhs = np.abs(s) + (np.tanh(beta * np.abs(s)) - np.abs(s)) / n
            add("abs_drift", n, beta, -1, 1, float((eabs - rhs)[big].max()) if big.any() else 0.0, 0.0)
            if beta <= 1.0:
                add("drift_linear", n, beta, -1, 1, float((drift - s * (beta - 1) / n)[pos].max()), 0.0)
            add("expectation_contraction", n, beta, -1, 1, -expectation_contraction_margin(kernel), 0.0)
    table.meta = _meta(spec, start="-1 marks a check taken over every state",
                       variance_cap="min(t, 1/(1 - rho^2)) with rho = 1 - 1/n + tanh(beta/n)")
    return table


RUNNERS = {
    "cutoff": cutoff_profile,
    "critical": critical_scaling,
    "metastable": metastability_suite,
    "coupling": coupling_validation,
    "lemmas": lemma_checks,
}


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Run ``spec`` and, when ``spec.out`` is set, write the table and its sidecar."""
    t0 = time.perf_counter()
    table = RUNNERS[spec.name](spec)
    table.run_info = {"wall_time_s": round(time.perf_counter() - t0, 3), "workers": spec.workers,
                      "pid_cpus": os.cpu_count()}
    if spec.out:
        emit(table, spec.fmt, spec.out)
    return table

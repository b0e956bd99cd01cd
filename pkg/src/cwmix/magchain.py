"""Exact analysis of the magnetization birth-death chain.

States are indexed by the integer number of plus spins k, never by the float
magnetization s = (2k - n)/n. The restricted chain (non-negative
magnetization) lives on k = ceil(n/2), ..., n and stores its arrays from that
offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .core import ModelParams, contraction_rate, p_plus

RENORM_EVERY = 10_000
RENORM_TOL = 1e-12


@dataclass(frozen=True)
class MagKernel:
    n: int
    beta: float
    up: np.ndarray
    down: np.ndarray
    stay: np.ndarray
    restricted: bool = False

    @property
    def lo(self) -> int:
        """Smallest plus-count of the state space."""
        return (self.n + 1) // 2 if self.restricted else 0

    @property
    def size(self) -> int:
        return self.up.size

    @property
    def plus_counts(self) -> np.ndarray:
        return np.arange(self.lo, self.n + 1)

    @property
    def s(self) -> np.ndarray:
        return (2 * self.plus_counts - self.n) / self.n

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.n, self.beta)

    def index(self, k: int) -> int:
        if not self.lo <= k <= self.n:
            raise ValueError(f"plus count {k} outside state space [{self.lo}, {self.n}]")
        return k - self.lo

    def matrix(self) -> np.ndarray:
        """Dense transition matrix; for tests and small n only."""
        m = np.diag(self.stay)
        m += np.diag(self.up[:-1], 1)
        m += np.diag(self.down[1:], -1)
        return m


@dataclass(frozen=True)
class HittingTable:
    """Expected one-level climbing times of the restricted chain.

    ``levels[j]`` is a plus-count ell, ``step[j]`` is E_{ell-1}[tau_ell] and
    ``cumulative[j]`` is the expected hitting time of ell from the bottom state.
    The bottom state itself has step 0.
    """

    levels: np.ndarray
    step: np.ndarray
    cumulative: np.ndarray

    def expected_time(self, level: int) -> float:
        j = int(level) - int(self.levels[0])
        if not 0 <= j < self.levels.size:
            raise ValueError(f"level {level} not in table")
        return float(self.cumulative[j])


def _full_rows(n: int, beta: float):
    k = np.arange(n + 1)
    # p_minus(s - 1/n) is evaluated as p_plus(-(s - 1/n)) so that the k <-> n-k
    # symmetry of the rows holds bit for bit
    up = (n - k) / n * p_plus(beta, (2 * k - n + 1) / n)
    down = k / n * p_plus(beta, -(2 * k - n - 1) / n)
    return up, down


def build_kernel(params: ModelParams, restricted: bool = False) -> MagKernel:
    n, beta = params.n, params.beta
    up, down = _full_rows(n, beta)
    if restricted:
        lo = (n + 1) // 2
        up, down = up[lo:].copy(), down[lo:].copy()
        if n % 2 == 0:
            # from s = 0 a downward move lands on -2/n and is reflected to +2/n
            up[0] += down[0]
        down[0] = 0.0
    stay = 1.0 - up - down
    return MagKernel(n, beta, up, down, stay, restricted)


def log_stationary_weights(params: ModelParams) -> np.ndarray:
    """Unnormalized log pi(k) = log C(n,k) + beta (2k - n)^2 / (2n), centred at k = n/2.

    The binomial part is accumulated from ratios outward from the centre so
    that neighbouring entries carry only a few ulps of relative error.
    """
    n, beta = params.n, params.beta
    k = np.arange(n + 1)
    ratios = np.log((n - k[:-1]) / (k[:-1] + 1.0))  # log C(n,k+1)/C(n,k)
    logc = np.empty(n + 1)
    m = n // 2
    logc[m] = 0.0
    logc[m + 1:] = np.cumsum(ratios[m:])
    logc[:m] = -np.cumsum(ratios[:m][::-1])[::-1]
    return logc + beta * (2 * k - n) ** 2 / (2.0 * n)


def log_stationary(kernel: MagKernel) -> np.ndarray:
    """Normalized log stationary probabilities on the kernel's state space."""
    logw = log_stationary_weights(kernel.params)
    if kernel.restricted:
        n, lo = kernel.n, kernel.lo
        folded = logw[lo:].copy()
        # |S| folds k and n-k together; the two weights are equal by symmetry
        mirror = n - np.arange(lo, n + 1) != np.arange(lo, n + 1)
        folded[mirror] += math.log(2.0)
        logw = folded
    return logw - logsumexp(logw)


def stationary_dist(kernel: MagKernel) -> np.ndarray:
    return np.exp(log_stationary(kernel))


def point_mass(kernel: MagKernel, k: int) -> np.ndarray:
    dist = np.zeros(kernel.size)
    dist[kernel.index(k)] = 1.0
    return dist


@njit(cache=True)
def _evolve(up, down, stay, dist, steps, renorm_every, renorm_tol):
    m = dist.size
    cur = dist.copy()
    nxt = np.empty(m)
    for t in range(steps):
        if m == 1:
            nxt[0] = cur[0]
        else:
            nxt[0] = stay[0] * cur[0] + down[1] * cur[1]
            for j in range(1, m - 1):
                nxt[j] = up[j - 1] * cur[j - 1] + stay[j] * cur[j] + down[j + 1] * cur[j + 1]
            nxt[m - 1] = up[m - 2] * cur[m - 2] + stay[m - 1] * cur[m - 1]
        cur, nxt = nxt, cur
        if (t + 1) % renorm_every == 0:
            tot = cur.sum()
            if abs(tot - 1.0) > renorm_tol:
                cur /= tot
    return cur


def evolve(kernel: MagKernel, dist: np.ndarray, steps: int) -> np.ndarray:
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (kernel.size,):
        raise ValueError(f"distribution has shape {dist.shape}, kernel has {kernel.size} states")
    if steps == 0:
        return dist.copy()
    return _evolve(kernel.up, kernel.down, kernel.stay, dist, int(steps), RENORM_EVERY, RENORM_TOL)


def tv_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    # rounding can push the sum a hair above 1 for nearly disjoint laws
    return min(1.0, 0.5 * float(np.abs(a - b).sum()))


def distance_profile(kernel: MagKernel, start: int, times: Sequence[int],
                     pi: np.ndarray | None = None) -> list[tuple[int, float]]:
    """TV distance to stationarity from a point start, at each of ``times``."""
    times = [int(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be sorted ascending")
    if times and times[0] < 0:
        raise ValueError("times must be non-negative")
    pi = stationary_dist(kernel) if pi is None else pi
    dist = point_mass(kernel, start)
    out = []
    now = 0
    for t in times:
        dist = evolve(kernel, dist, t - now)
        now = t
        out.append((t, tv_distance(dist, pi)))
    return out


def extreme_starts(kernel: MagKernel) -> list[int]:
    return [kernel.lo, kernel.n]


class _Prober:
    """Worst-case TV over a set of starts at arbitrary times, with memoized laws."""

    def __init__(self, kernel: MagKernel, starts: Sequence[int]):
        self.kernel = kernel
        self.pi = stationary_dist(kernel)
        self.memo = {0: np.stack([point_mass(kernel, k) for k in starts])}

    def law(self, t: int) -> np.ndarray:
        if t not in self.memo:
            base = max(s for s in self.memo if s <= t)
            self.memo[t] = np.stack([evolve(self.kernel, d, t - base) for d in self.memo[base]])
        return self.memo[t]

    def distance(self, t: int) -> float:
        law = self.law(t)
        return max(tv_distance(row, self.pi) for row in law)


def t_mix_exact(kernel: MagKernel, starts: Sequence[int] | None = None, eps: float = 0.25) -> int:
    """Smallest t with max over ``starts`` of TV(law_t, pi) <= eps."""
    if not 0 < eps <= 1:
        raise ValueError(f"eps must be in (0, 1], got {eps}")
    starts = extreme_starts(kernel) if starts is None else list(starts)
    prober = _Prober(kernel, starts)
    return _first_time_below(prober, eps)


def _first_time_below(prober: _Prober, eps: float, hint: int = 0) -> int:
    if prober.distance(0) <= eps:
        return 0
    lo, hi = 0, max(1, hint)
    while prober.distance(hi) > eps:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if prober.distance(mid) > eps:
            lo = mid
        else:
            hi = mid
    return hi


def crossing_times(kernel: MagKernel, starts: Sequence[int], levels: Sequence[float]) -> dict[float, int]:
    """First times at which the worst-case TV drops to each level, sharing one prober."""
    prober = _Prober(kernel, list(starts))
    return {eps: _first_time_below(prober, eps) for eps in levels}


def t_mix_worst_case(kernel: MagKernel, eps: float = 0.25) -> int:
    """t_mix with the max taken over every state of the magnetization chain (n <= 512)."""
    if kernel.n > 512:
        raise ValueError("exhaustive starts are limited to n <= 512")
    return t_mix_exact(kernel, list(kernel.plus_counts), eps)


def drift_exact(kernel: MagKernel, k: int) -> float:
    j = kernel.index(k)
    return 2.0 / kernel.n * (kernel.up[j] - kernel.down[j])


def drift_closed_form(params: ModelParams, s: float) -> float:
    """(1/n)[f_n(s) - s + theta_n(s)] for the unrestricted chain."""
    n, beta = params.n, params.beta
    tp, tm = math.tanh(beta * (s + 1.0 / n)), math.tanh(beta * (s - 1.0 / n))
    f_n = 0.5 * (tp + tm)
    theta_n = -0.5 * s * (tp - tm)
    return (f_n - s + theta_n) / n


def moments(kernel: MagKernel, dist: np.ndarray) -> tuple[float, float]:
    """Mean and variance of the magnetization under ``dist``."""
    s = kernel.s
    mean = float(dist @ s)
    return mean, float(dist @ (s - mean) ** 2)


def stationary_moments(params: ModelParams) -> dict[str, float]:
    kernel = build_kernel(params)
    pi = stationary_dist(kernel)
    s = kernel.s
    mean, var = moments(kernel, pi)
    return {"mean": mean, "var": var, "mean_abs": float(pi @ np.abs(s))}


def hitting_time_table(kernel: MagKernel, top_level: int | None = None) -> HittingTable:
    if not kernel.restricted:
        raise ValueError("hitting_time_table needs the restricted kernel")
    top = kernel.n if top_level is None else int(top_level)
    j_top = kernel.index(top)
    logpi = log_stationary(kernel)
    levels = kernel.plus_counts[: j_top + 1]
    step = np.zeros(j_top + 1)
    for j in range(1, j_top + 1):
        q = kernel.down[j]
        if not q > 0.0:
            raise ArithmeticError(f"zero downward probability at plus count {levels[j]}")
        # 1/pi^(l)(l) - 1 = sum_{i<l} pi(i) / pi(l)
        step[j] = math.exp(logsumexp(logpi[:j]) - logpi[j]) / q
    return HittingTable(levels, step, np.cumsum(step))


def level_above(params: ModelParams, s_level: float) -> int:
    """Smallest plus count k whose magnetization is at least ``s_level``."""
    n = params.n
    k = math.ceil(n * (1.0 + s_level) / 2.0 - 1e-9)
    return min(max(k, 0), n)


def level_below(params: ModelParams, s_level: float) -> int:
    """Largest plus count k whose magnetization is at most ``s_level``."""
    n = params.n
    k = math.floor(n * (1.0 + s_level) / 2.0 + 1e-9)
    return min(max(k, 0), n)


def log_cheeger_cut(params: ModelParams) -> float:
    """Log conductance of the cut {S < 0} for the unrestricted chain."""
    kernel = build_kernel(params)
    logpi = log_stationary(kernel)
    n = params.n
    kb = (n - 1) // 2  # largest plus count with S < 0
    log_flow = logpi[kb] + math.log(kernel.up[kb])
    return log_flow - logsumexp(logpi[: kb + 1])


def cheeger_cut(params: ModelParams) -> float:
    return math.exp(log_cheeger_cut(params))


def expectation_contraction_margin(kernel: MagKernel) -> float:
    """min over state pairs of rho |s - s'| - |E_s S_1 - E_s' S_1|."""
    s = kernel.s
    ev = s + 2.0 / kernel.n * (kernel.up - kernel.down)
    rho = contraction_rate(kernel.params)
    ds = np.abs(s[:, None] - s[None, :])
    de = np.abs(ev[:, None] - ev[None, :])
    return float((rho * ds - de).min())

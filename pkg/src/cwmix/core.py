"""Model parameters and elementary formulas for the Curie-Weiss Glauber dynamics.

Sites interact through the complete graph with coupling 1/n, so the heat-bath
probability of a +1 spin depends on the configuration only through the
normalized magnetization of the other n - 1 sites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BISECTION_TOL = 1e-12
BISECTION_MAX_ITER = 200


@dataclass(frozen=True)
class ModelParams:
    n: int
    beta: float

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n!r}")
        beta = float(self.beta)
        if not math.isfinite(beta) or beta < 0:
            raise ValueError(f"beta must be finite and >= 0, got {self.beta!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "beta", beta)

    @property
    def coupling(self) -> float:
        return 1.0 / self.n

    def s_of(self, k):
        """Normalized magnetization of a configuration with ``k`` plus spins."""
        return (2 * k - self.n) / self.n


@dataclass(frozen=True)
class DerivedConstants:
    rho: float
    s_star: float
    gamma_star: float
    t_n: float
    t_crit: float


class SpinConfiguration:
    """n spins in {-1, +1} with a cached count of plus spins.

    The cache is kept in sync by :meth:`set_spin`; hot loops elsewhere mutate
    ``spins`` directly and are responsible for updating ``plus_count``.
    """

    __slots__ = ("spins", "plus_count")

    def __init__(self, spins):
        arr = np.array(spins, dtype=np.int8)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("spins must be a non-empty 1-d sequence")
        if not np.all((arr == 1) | (arr == -1)):
            raise ValueError("spins must take values in {-1, +1}")
        self.spins = arr
        self.plus_count = int(np.count_nonzero(arr == 1))

    @classmethod
    def all_plus(cls, n: int) -> "SpinConfiguration":
        return cls(np.ones(n, dtype=np.int8))

    @classmethod
    def all_minus(cls, n: int) -> "SpinConfiguration":
        return cls(-np.ones(n, dtype=np.int8))

    @classmethod
    def with_plus_count(cls, n: int, k: int, rng: np.random.Generator | None = None) -> "SpinConfiguration":
        """Configuration with exactly ``k`` plus spins (the first k sites, or random sites if ``rng``)."""
        if not 0 <= k <= n:
            raise ValueError(f"plus count {k} outside [0, {n}]")
        spins = -np.ones(n, dtype=np.int8)
        idx = rng.permutation(n)[:k] if rng is not None else np.arange(k)
        spins[idx] = 1
        return cls(spins)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "SpinConfiguration":
        return cls(np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8))

    @property
    def n(self) -> int:
        return self.spins.size

    def set_spin(self, i: int, value: int) -> None:
        old = self.spins[i]
        if old != value:
            self.spins[i] = value
            self.plus_count += 1 if value == 1 else -1

    def copy(self) -> "SpinConfiguration":
        return SpinConfiguration(self.spins.copy())

    def negated(self) -> "SpinConfiguration":
        return SpinConfiguration(-self.spins)

    def check(self) -> None:
        recount = int(np.count_nonzero(self.spins == 1))
        if recount != self.plus_count:
            raise AssertionError(f"plus_count cache {self.plus_count} != recount {recount}")

    def __eq__(self, other):
        if not isinstance(other, SpinConfiguration):
            return NotImplemented
        return np.array_equal(self.spins, other.spins)

    def __repr__(self):
        return f"SpinConfiguration(n={self.n}, plus_count={self.plus_count})"


def update_probabilities(beta: float, s: float) -> tuple[float, float]:
    """Heat-bath probabilities (p_plus, p_minus) of a new spin given the field ``s``."""
    p_plus = (1.0 + math.tanh(beta * s)) / 2.0
    return p_plus, 1.0 - p_plus


def p_plus(beta, s):
    """Vectorized p_plus; p_minus(s) is p_plus(-s)."""
    return (1.0 + np.tanh(beta * np.asarray(s, dtype=float))) / 2.0


def magnetization(config: SpinConfiguration) -> float:
    return (2 * config.plus_count - config.n) / config.n


def hamming_distance(a: SpinConfiguration, b: SpinConfiguration) -> int:
    if a.n != b.n:
        raise ValueError(f"configurations have different sizes ({a.n} vs {b.n})")
    return int(np.count_nonzero(a.spins != b.spins))


def contraction_rate(params: ModelParams) -> float:
    n = params.n
    return 1.0 - 1.0 / n + math.tanh(params.beta / n)


def s_star(beta: float) -> float:
    """Positive root of tanh(beta s) = s, or 0 when beta <= 1 (the only root there)."""
    if beta <= 1.0:
        return 0.0
    g = lambda s: math.tanh(beta * s) - s  # noqa: E731
    lo, hi = 1e-6, 1.0
    while g(lo) <= 0.0 and lo > 1e-300:
        # beta so close to 1 that the root sits below the default bracket
        lo /= 16.0
    for _ in range(BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gamma_star(beta: float) -> float:
    if not beta > 1.0:
        raise ValueError(f"gamma_star needs beta > 1, got {beta}")
    return beta / math.cosh(beta * s_star(beta)) ** 2


def free_energy(z: float, beta: float) -> float:
    """Large-deviation rate f(z) with z = S/2, up to the additive constant log 2."""
    if not abs(z) < 0.5:
        raise ValueError(f"free_energy is defined for |z| < 1/2, got {z}")
    a, b = 1.0 + 2.0 * z, 1.0 - 2.0 * z
    return 0.5 * a * math.log(a) + 0.5 * b * math.log(b) - 2.0 * beta * z * z


def cutoff_time(n: float, beta: float) -> float:
    """n ln n / (2 (1 - beta)) for real n > 0."""
    if beta >= 1.0:
        raise ValueError(f"cutoff center is defined for beta < 1, got {beta}")
    if not n > 0:
        raise ValueError(f"n must be positive, got {n}")
    return n * math.log(n) / (2.0 * (1.0 - beta))


def cutoff_center(params: ModelParams) -> float:
    return cutoff_time(params.n, params.beta)


def critical_time(params: ModelParams) -> float:
    return params.n ** 1.5


def derived_constants(params: ModelParams) -> DerivedConstants:
    beta = params.beta
    return DerivedConstants(
        rho=contraction_rate(params),
        s_star=s_star(beta),
        gamma_star=gamma_star(beta) if beta > 1.0 else math.nan,
        t_n=cutoff_center(params) if beta < 1.0 else math.nan,
        t_crit=critical_time(params),
    )

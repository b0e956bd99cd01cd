"""Seeded Monte Carlo for the full configuration chain and its couplings.

All randomness is drawn from an :class:`~cwmix.rng.RngStream`, one row of
uniforms per step; the hot loops live in :mod:`cwmix._kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels as kern
from .core import ModelParams, SpinConfiguration, s_star
from .magchain import level_above, level_below
from .rng import RngStream

COUPLING_KINDS = ("grand-monotone", "matched-site", "two-coordinate", "reflection", "independent")


class CouplingError(RuntimeError):
    """A coupling was asked to run from a state violating its precondition."""


@lru_cache(maxsize=64)
def _ptab(n: int, beta: float) -> np.ndarray:
    return kern.p_table(n, beta)


@dataclass(frozen=True)
class Stop:
    """Stopping rule evaluated on plus counts (and the disagreement count for pairs)."""

    name: str
    code: int
    level: int = 0

    @classmethod
    def tau0(cls):
        return cls("tau0", kern.STOP_TAU0)

    @classmethod
    def tau_mag(cls):
        return cls("tau_mag", kern.STOP_MAG)

    @classmethod
    def coalescence(cls):
        return cls("coalescence", kern.STOP_COALESCE)

    @classmethod
    def tau_abs(cls):
        return cls("tau_abs", kern.STOP_ABS)

    @classmethod
    def abs_equal(cls):
        return cls("abs_equal", kern.STOP_ABS_EQ)

    @classmethod
    def below(cls, k: int, name: str = "below"):
        return cls(name, kern.STOP_BELOW, int(k))

    @classmethod
    def above(cls, k: int, name: str = "above"):
        return cls(name, kern.STOP_ABOVE, int(k))

    @classmethod
    def never(cls):
        return cls("none", kern.STOP_NONE)


def tau_star_stop(params: ModelParams, alpha: float = 1.0) -> Stop:
    """Descent from above to magnetization s* + alpha / sqrt(n)."""
    s_level = s_star(params.beta) + alpha / math.sqrt(params.n)
    return Stop.below(level_below(params, s_level), "tau_star")


def tau_lower_star_stop(params: ModelParams, c: float = 1.0) -> Stop:
    """Climb from below to magnetization s* + c / sqrt(n)."""
    s_level = s_star(params.beta) + c / math.sqrt(params.n)
    return Stop.above(level_above(params, s_level), "tau_lower_star")


@dataclass
class StopRecord:
    name: str
    time: int | None
    censored: bool


class _Process:
    kind: str
    time: int
    stops: dict

    def _arrays(self):
        raise NotImplementedError

    def _sync(self):
        raise NotImplementedError

    def state_holds(self, stop: Stop) -> bool:
        return bool(kern.stop_holds(stop.code, stop.level, self.n, self._st))

    def advance(self, params: ModelParams, rng: RngStream, max_steps: int, stop: Stop | None = None) -> tuple[int, bool]:
        """Run at most ``max_steps`` steps, stopping right after ``stop`` first holds."""
        if params.n != self.n:
            raise ValueError(f"params.n={params.n} but state has n={self.n}")
        stop = stop or Stop.never()
        code = kern.KIND_CODES[self.kind]
        ptab = _ptab(params.n, params.beta)
        arrays = self._arrays()
        done = 0
        hit = False
        while done < max_steps:
            draws = rng.peek(max_steps - done)
            taken, status = kern.advance(code, *arrays, self._st, ptab, draws, stop.code, stop.level)
            rng.consume(taken)
            done += taken
            if status < 0:
                self.time += done
                self._sync()
                raise CouplingError(f"{self.kind}: empty candidate set at step {self.time}")
            if status == 1:
                hit = True
                break
        self.time += done
        self._sync()
        return done, hit

    def step(self, params: ModelParams, rng: RngStream):
        self.advance(params, rng, 1)
        return self

    def one_step_sample(self, params: ModelParams, rng: RngStream, trials: int) -> np.ndarray:
        """(dk, dk~, dR) for ``trials`` independent one-step replays from the current state."""
        code = kern.KIND_CODES[self.kind]
        out = kern.one_step_many(code, *self._arrays(), self._st, _ptab(params.n, params.beta), rng.rows(trials))
        if np.any(out < -1):
            raise CouplingError(f"{self.kind}: empty candidate set during one-step replay")
        self._sync()
        return out


class Chain(_Process):
    """A single Glauber chain, or the restricted chain when ``restricted``.

    The restricted chain negates lazily: ``config`` holds raw spins and the
    exposed state is ``sign * config``, which always has S >= 0.
    """

    def __init__(self, config: SpinConfiguration, restricted: bool = False, sign: int = 1):
        self.config = config
        self.kind = "restricted" if restricted else "single"
        self.time = 0
        self.stops: dict[str, int | None] = {}
        if sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        k = config.plus_count if sign == 1 else config.n - config.plus_count
        if restricted and 2 * k < config.n:
            raise ValueError("restricted chain needs non-negative exposed magnetization")
        self._st = np.array([k, 0, 0, sign], dtype=np.int64)
        empty = np.empty(0, dtype=np.int8)
        self._dummy = (empty, empty, np.zeros((4, 1), np.int64), np.zeros(4, np.int64),
                       np.empty(0, np.int64), empty)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def sign(self) -> int:
        return int(self._st[kern.SIGN])

    @property
    def plus_count(self) -> int:
        """Plus count of the exposed state."""
        return int(self._st[kern.K])

    def exposed(self) -> SpinConfiguration:
        return SpinConfiguration(self.sign * self.config.spins)

    def _arrays(self):
        return (self.config.spins,) + self._dummy

    def _sync(self):
        k = int(self._st[kern.K])
        self.config.plus_count = k if self.sign == 1 else self.n - k


class CoupledPair(_Process):
    """Two Glauber chains driven by one of the couplings in ``COUPLING_KINDS``.

    ``sigma0`` is the reference configuration of the two-coordinate coupling.
    """

    def __init__(self, x: SpinConfiguration, x_tilde: SpinConfiguration, kind: str,
                 sigma0: SpinConfiguration | None = None):
        if x.n != x_tilde.n:
            raise ValueError("configurations have different sizes")
        self.x = x
        self.x_tilde = x_tilde
        self.sigma0 = sigma0
        self.time = 0
        self.stops: dict[str, int | None] = {}
        self._st = np.array([x.plus_count, x_tilde.plus_count,
                             int(np.count_nonzero(x.spins != x_tilde.spins)), 1], dtype=np.int64)
        self.kind = ""
        self.switch(kind, sigma0)

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def disagreements(self) -> int:
        return int(self._st[kern.DIS])

    def switch(self, kind: str, sigma0: SpinConfiguration | None = None) -> None:
        """Change the coupling used from now on; preconditions are checked on the current state."""
        if kind not in COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {kind!r}")
        k, kt = self.x.plus_count, self.x_tilde.plus_count
        if kind in ("matched-site", "two-coordinate") and k != kt:
            raise CouplingError(f"{kind} coupling needs equal magnetizations, got plus counts {k} and {kt}")
        if kind == "reflection" and k + kt != self.n:
            raise CouplingError(f"reflection coupling needs opposite magnetizations, got plus counts {k} and {kt}")
        if sigma0 is not None:
            self.sigma0 = sigma0
        if kind == "two-coordinate" and self.sigma0 is None:
            raise ValueError("two-coordinate coupling needs a reference configuration sigma0")
        self.kind = kind
        s0 = self.sigma0.spins if self.sigma0 is not None else np.zeros(self.n, dtype=np.int8)
        self._s0 = s0
        code = kern.KIND_CODES[kind]
        self._buckets = kern.build_buckets(code, self.x.spins, self.x_tilde.spins, s0)

    def _arrays(self):
        return (self.x.spins, self.x_tilde.spins, self._s0) + self._buckets

    def _sync(self):
        self.x.plus_count = int(self._st[kern.K])
        self.x_tilde.plus_count = int(self._st[kern.KT])

    def check(self) -> None:
        """Full recount of every cache; raises AssertionError on mismatch."""
        self.x.check()
        self.x_tilde.check()
        dis = int(np.count_nonzero(self.x.spins != self.x_tilde.spins))
        assert dis == self.disagreements, (dis, self.disagreements)
        members, counts, where, label = self._buckets
        expect = kern.build_buckets(kern.KIND_CODES[self.kind], self.x.spins, self.x_tilde.spins, self._s0)[3]
        assert np.array_equal(label, expect)
        for lab in range(4):
            idx = members[lab, : counts[lab]]
            assert np.all(label[idx] == lab) and np.array_equal(where[idx], np.arange(counts[lab]))
        assert counts.sum() == self.n

    def r_value(self) -> int:
        """R = U(x~) - U(x) relative to ``sigma0``."""
        if self.sigma0 is None:
            raise ValueError("no reference configuration")
        return project_uv(self.x_tilde, self.sigma0)[0] - project_uv(self.x, self.sigma0)[0]


# -- operations --------------------------------------------------------------

def glauber_step(config: SpinConfiguration, params: ModelParams, rng: RngStream) -> SpinConfiguration:
    """One heat-bath update of ``config`` in place."""
    Chain(config).step(params, rng)
    return config


def run_glauber(config: SpinConfiguration, params: ModelParams, rng: RngStream, steps: int) -> SpinConfiguration:
    Chain(config).advance(params, rng, steps)
    return config


def restricted_step(config: SpinConfiguration, sign_flag: int, params: ModelParams,
                    rng: RngStream) -> tuple[SpinConfiguration, int]:
    """One step of the restricted dynamics on raw spins ``config`` with lazy sign ``sign_flag``."""
    chain = Chain(config, restricted=True, sign=sign_flag)
    chain.step(params, rng)
    return config, chain.sign


def _coupled_step(kind: str, pair: CoupledPair, params: ModelParams, rng: RngStream) -> CoupledPair:
    if pair.kind != kind:
        raise CouplingError(f"expected a {kind} pair, got {pair.kind}")
    return pair.step(params, rng)


def grand_coupling_step(pair: CoupledPair, params: ModelParams, rng: RngStream) -> CoupledPair:
    return _coupled_step("grand-monotone", pair, params, rng)


def matched_site_coupling_step(pair: CoupledPair, params: ModelParams, rng: RngStream) -> CoupledPair:
    return _coupled_step("matched-site", pair, params, rng)


def two_coordinate_coupling_step(pair: CoupledPair, params: ModelParams, rng: RngStream) -> CoupledPair:
    return _coupled_step("two-coordinate", pair, params, rng)


def reflection_coupling_step(pair: CoupledPair, params: ModelParams, rng: RngStream) -> CoupledPair:
    return _coupled_step("reflection", pair, params, rng)


def independent_step(pair: CoupledPair, params: ModelParams, rng: RngStream) -> CoupledPair:
    return _coupled_step("independent", pair, params, rng)


def run_until(process: _Process, stop: Stop, params: ModelParams, rng: RngStream, max_steps: int) -> StopRecord:
    """Step until ``stop`` first holds (checked from the current state) or ``max_steps`` elapse.

    Censoring is recorded in the returned record and in ``process.stops`` as None.
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    start = process.time
    if process.state_holds(stop):
        rec = StopRecord(stop.name, start, False)
    else:
        done, hit = process.advance(params, rng, max_steps, stop)
        rec = StopRecord(stop.name, process.time if hit else None, not hit)
    process.stops[stop.name] = rec.time
    return rec


def block_statistic(config: SpinConfiguration, site_set) -> float:
    idx = np.asarray(site_set, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= config.n):
        raise IndexError(f"site indices must lie in [0, {config.n})")
    return 0.5 * float(config.spins[idx].sum(dtype=np.int64))


def project_uv(config: SpinConfiguration, sigma0: SpinConfiguration) -> tuple[int, int]:
    if config.n != sigma0.n:
        raise ValueError("configurations have different sizes")
    agree = config.spins == sigma0.spins
    u = int(np.count_nonzero(agree & (sigma0.spins == 1)))
    v = int(np.count_nonzero(agree & (sigma0.spins == -1)))
    return u, v


def r_move_rates(u: int, v: int, r: int, u0: int, v0: int, n: int, beta: float) -> tuple[float, float]:
    """(a, b): one-step probabilities that R moves down / up under the two-coordinate coupling.

    ``u, v`` describe the first chain; the second has (u + r, v + r) and the
    same magnetization. ``u0, v0`` are the plus/minus counts of sigma0.
    """
    s = (2 * (u - v) - (u0 - v0)) / n
    pm = (1.0 - math.tanh(beta * (s - 1.0 / n))) / 2.0
    pp = (1.0 + math.tanh(beta * (s + 1.0 / n))) / 2.0
    plus_t = v0 + u - v    # plus spins of the second chain
    minus_t = u0 - u + v   # minus spins of the second chain
    a = ((v0 - v) / n * ((u + r) / plus_t if plus_t else 0.0) * pm
         + (u0 - u) / n * ((v + r) / minus_t if minus_t else 0.0) * pp)
    b = (u / n * ((v0 - v - r) / plus_t if plus_t else 0.0) * pm
         + v / n * ((u0 - u - r) / minus_t if minus_t else 0.0) * pp)
    return a, b

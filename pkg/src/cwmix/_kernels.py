"""Numba hot loops for single chains and coupled pairs.

Every step consumes exactly one row of four uniforms (site, threshold,
partner choice, independent threshold), so a trajectory depends only on the
row stream and never on how steps are batched.

Partner-site selection keeps the sites of the second chain in four buckets,
label = 2 * [spin == +1] + aux, where aux depends on the coupling kind
(disagreement with the first chain, or the sign of the reference
configuration). Buckets use swap-remove arrays so moves and uniform draws are
O(1).
"""

from __future__ import annotations

import numpy as np
from numba import njit

SINGLE, RESTRICTED, GRAND, MATCHED, TWO_COORD, REFLECTION, INDEPENDENT = range(7)
KIND_CODES = {
    "single": SINGLE,
    "restricted": RESTRICTED,
    "grand-monotone": GRAND,
    "matched-site": MATCHED,
    "two-coordinate": TWO_COORD,
    "reflection": REFLECTION,
    "independent": INDEPENDENT,
}

STOP_NONE, STOP_TAU0, STOP_MAG, STOP_COALESCE, STOP_BELOW, STOP_ABOVE, STOP_ABS, STOP_ABS_EQ = range(8)

# st layout
K, KT, DIS, SIGN = 0, 1, 2, 3

ERR_EMPTY_CANDIDATES = -1


def p_table(n: int, beta: float) -> np.ndarray:
    """p_plus((m)/n) for integer numerators m in [-n-1, n+1], stored at m + n + 1."""
    m = np.arange(-n - 1, n + 2)
    return (1.0 + np.tanh(beta * (m / n))) / 2.0


def aux_of(kind: int, x: np.ndarray, xt: np.ndarray, sigma0: np.ndarray) -> np.ndarray:
    if kind == MATCHED:
        return (xt != x).astype(np.int8)
    if kind == TWO_COORD:
        return (sigma0 == 1).astype(np.int8)
    return np.zeros(xt.size, dtype=np.int8)


def build_buckets(kind: int, x: np.ndarray, xt: np.ndarray, sigma0: np.ndarray):
    n = xt.size
    label = (2 * (xt == 1) + aux_of(kind, x, xt, sigma0)).astype(np.int8)
    members = np.zeros((4, max(n, 1)), dtype=np.int64)
    counts = np.zeros(4, dtype=np.int64)
    where = np.zeros(n, dtype=np.int64)
    for lab in range(4):
        idx = np.flatnonzero(label == lab)
        members[lab, : idx.size] = idx
        counts[lab] = idx.size
        where[idx] = np.arange(idx.size)
    return members, counts, where, label


@njit(cache=True, inline="always")
def _site(u, n):
    i = int(u * n)
    return i if i < n else n - 1


@njit(cache=True)
def _relabel(kind, i, x, xt, sigma0, members, counts, where, label):
    if kind == MATCHED:
        aux = 1 if xt[i] != x[i] else 0
    elif kind == TWO_COORD:
        aux = 1 if sigma0[i] == 1 else 0
    else:
        aux = 0
    new = 2 * (1 if xt[i] == 1 else 0) + aux
    old = label[i]
    if new == old:
        return
    # swap-remove from old bucket
    pos = where[i]
    last = counts[old] - 1
    moved = members[old, last]
    members[old, pos] = moved
    where[moved] = pos
    counts[old] = last
    # append to new bucket
    members[new, counts[new]] = i
    where[i] = counts[new]
    counts[new] += 1
    label[i] = new


@njit(cache=True)
def _pick(members, counts, lab_a, lab_b, u):
    ca = counts[lab_a]
    tot = ca + (counts[lab_b] if lab_b >= 0 else 0)
    if tot == 0:
        return -1
    r = int(u * tot)
    if r >= tot:
        r = tot - 1
    if r < ca:
        return members[lab_a, r]
    return members[lab_b, r - ca]


@njit(cache=True)
def _step(kind, x, xt, sigma0, members, counts, where, label, st, ptab, u0, u1, u2, u3, touched):
    """Advance one step; returns 0 or an error code. ``touched`` receives (I, I~)."""
    n = x.size
    off = n + 1
    i = _site(u0, n)
    touched[0] = i
    touched[1] = -1

    if kind == SINGLE:
        a = x[i]
        new = 1 if u1 <= ptab[2 * st[K] - n - a + off] else -1
        x[i] = new
        st[K] += (new - a) // 2
        return 0

    if kind == RESTRICTED:
        sign = st[SIGN]
        a = sign * x[i]
        new = 1 if u1 <= ptab[2 * st[K] - n - a + off] else -1
        x[i] = sign * new
        k = st[K] + (new - a) // 2
        if 2 * k < n:
            st[SIGN] = -sign
            k = n - k
        st[K] = k
        return 0

    a = x[i]
    new = 1 if u1 <= ptab[2 * st[K] - n - a + off] else -1

    if kind == GRAND:
        j = i
        b = xt[j]
        new_t = 1 if u1 <= ptab[2 * st[KT] - n - b + off] else -1
    elif kind == MATCHED:
        if xt[i] == a:
            j = i
        else:
            j = _pick(members, counts, 2 * (1 if a == 1 else 0) + 1, -1, u2)
            if j < 0:
                return ERR_EMPTY_CANDIDATES
        new_t = new
    elif kind == TWO_COORD:
        if st[DIS] == 0:
            # coalesced chains move together
            j = i
        else:
            base = 2 * (1 if a == 1 else 0)
            j = _pick(members, counts, base, base + 1, u2)
            if j < 0:
                return ERR_EMPTY_CANDIDATES
        new_t = new
    elif kind == REFLECTION:
        base = 2 * (1 if a == -1 else 0)
        j = _pick(members, counts, base, base + 1, u2)
        if j < 0:
            return ERR_EMPTY_CANDIDATES
        new_t = -new
    else:  # INDEPENDENT
        j = _site(u2, n)
        b = xt[j]
        new_t = 1 if u3 <= ptab[2 * st[KT] - n - b + off] else -1

    touched[1] = j
    # disagreement count over the touched sites
    before = 1 if x[i] != xt[i] else 0
    if j != i:
        before += 1 if x[j] != xt[j] else 0
    b = xt[j]
    x[i] = new
    xt[j] = new_t
    st[K] += (new - a) // 2
    st[KT] += (new_t - b) // 2
    after = 1 if x[i] != xt[i] else 0
    if j != i:
        after += 1 if x[j] != xt[j] else 0
    st[DIS] += after - before
    _relabel(kind, i, x, xt, sigma0, members, counts, where, label)
    if j != i:
        _relabel(kind, j, x, xt, sigma0, members, counts, where, label)
    return 0


@njit(cache=True)
def stop_holds(code, arg, n, st):
    k = st[K]
    if code == STOP_TAU0:
        return abs(2 * k - n) <= 1
    if code == STOP_MAG:
        return k == st[KT]
    if code == STOP_COALESCE:
        return st[DIS] == 0
    if code == STOP_BELOW:
        return k <= arg
    if code == STOP_ABOVE:
        return k >= arg
    if code == STOP_ABS:
        return abs(2 * k - n) <= abs(2 * st[KT] - n)
    if code == STOP_ABS_EQ:
        return abs(2 * k - n) == abs(2 * st[KT] - n)
    return False


@njit(cache=True)
def advance(kind, x, xt, sigma0, members, counts, where, label, st, ptab, draws, stop_code, stop_arg):
    """Run up to len(draws) steps; stop right after the step on which the predicate first holds.

    Returns (steps_taken, status) with status 1 = stopped, 0 = ran out of draws,
    negative = error.
    """
    touched = np.empty(2, dtype=np.int64)
    n = x.size
    for t in range(draws.shape[0]):
        err = _step(kind, x, xt, sigma0, members, counts, where, label, st, ptab,
                    draws[t, 0], draws[t, 1], draws[t, 2], draws[t, 3], touched)
        if err != 0:
            return t, err
        if stop_code != STOP_NONE and stop_holds(stop_code, stop_arg, n, st):
            return t + 1, 1
    return draws.shape[0], 0


@njit(cache=True)
def one_step_many(kind, x, xt, sigma0, members, counts, where, label, st, ptab, draws):
    """Replay one step from a frozen state once per row of ``draws``.

    Returns an array of (dk, dk~, dR) per trial where R = U(x~) - U(x) counts
    agreements with ``sigma0`` on plus spins. The state is restored after each
    trial (bucket order may be permuted, which does not change the law).
    """
    trials = draws.shape[0]
    out = np.empty((trials, 3), dtype=np.int64)
    touched = np.empty(2, dtype=np.int64)
    st0 = st.copy()
    paired = xt.size == x.size and kind != SINGLE and kind != RESTRICTED
    for t in range(trials):
        i0 = _site(draws[t, 0], x.size)
        xi = x[i0]
        err = _step(kind, x, xt, sigma0, members, counts, where, label, st, ptab,
                    draws[t, 0], draws[t, 1], draws[t, 2], draws[t, 3], touched)
        if err != 0:
            out[t, :] = err
            continue
        i = touched[0]
        j = touched[1]
        dk = st[K] - st0[K]
        dkt = st[KT] - st0[KT]
        out[t, 0] = dk
        out[t, 1] = dkt
        dr = 0
        if paired:
            new_t = xt[j]
            old_t = new_t - 2 * dkt
            if sigma0[j] == 1:
                dr += (1 if new_t == 1 else 0) - (1 if old_t == 1 else 0)
            if sigma0[i] == 1:
                dr -= (1 if x[i] == 1 else 0) - (1 if xi == 1 else 0)
            xt[j] = old_t
        x[i] = xi
        out[t, 2] = dr
        st[:] = st0
        if paired:
            _relabel(kind, i, x, xt, sigma0, members, counts, where, label)
            if j != i:
                _relabel(kind, j, x, xt, sigma0, members, counts, where, label)
    return out

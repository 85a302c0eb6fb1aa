"""Exact event-driven simulation of the interacting birth-death population.

The single-chain simulator draws holding times from the total rates; the
planar simulator keeps every individual in a left-to-right order in which each
feels interaction pressure only from those on its left, which couples the
populations grown from every prefix of the ancestor line on one probability
space.  Per-ancestor alive counts live in a Fenwick tree, so mapping an
interaction event at a planar position to its ancestor costs O(log M).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .criteria import BdRates, bd_rates
from .errors import CensoredInput, ExplosionGuard
from .interaction import InteractionModel, RateSums, rate_sums, scaled_model
from .stats import as_generator

DEFAULT_MAX_EVENTS = 10 ** 8


@dataclass
class Trajectory:
    """A recorded path with its absorption functionals.

    ``H`` is the extinction time, ``None`` when the run was censored at
    ``censored_at``.  ``L`` is the exact time-integral of the population up
    to absorption or the censor horizon.  ``times``/``values`` are retained
    only when recording was requested; values change by one unit between
    consecutive event times.
    """

    absorbed: bool
    H: Optional[float]
    L: float
    events: int
    censored_at: Optional[float] = None
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    m: Optional[int] = None


class _DrawBuffer:
    """Block-buffered draws: one RNG call per few thousand variates."""

    def __init__(self, rng: np.random.Generator, size: int = 4096):
        self._rng = rng
        self._size = size
        self._exp = rng.standard_exponential(size)
        self._ie = 0
        self._uni = rng.random(size)
        self._iu = 0

    def exp(self) -> float:
        if self._ie >= self._size:
            self._exp = self._rng.standard_exponential(self._size)
            self._ie = 0
        v = self._exp[self._ie]
        self._ie += 1
        return v

    def uni(self) -> float:
        """Uniform on (0, 1]."""
        if self._iu >= self._size:
            self._uni = self._rng.random(self._size)
            self._iu = 0
        v = 1.0 - self._uni[self._iu]
        self._iu += 1
        return v


class _Fenwick:
    """Binary indexed tree over ancestor counts, all initialized to 1."""

    def __init__(self, m: int):
        self._n = m
        tree = [0] * (m + 1)
        for i in range(1, m + 1):
            tree[i] += 1
            j = i + (i & -i)
            if j <= m:
                tree[j] += tree[i]
        self._tree = tree
        log = 1
        while 2 * log <= m:
            log *= 2
        self._log = log

    def add(self, i: int, delta: int) -> None:
        tree = self._tree
        n = self._n
        while i <= n:
            tree[i] += delta
            i += i & -i

    def prefix(self, i: int) -> int:
        tree = self._tree
        s = 0
        while i > 0:
            s += tree[i]
            i -= i & -i
        return s

    def find(self, v: int) -> int:
        """Smallest index whose prefix sum reaches v (1 <= v <= total)."""
        tree = self._tree
        n = self._n
        i = 0
        half = self._log
        rem = v
        while half:
            nxt = i + half
            if nxt <= n and tree[nxt] < rem:
                rem -= tree[nxt]
                i = nxt
            half >>= 1
        return i + 1


class PlanarForest:
    """Coupled population state: per-ancestor alive counts with a prefix index.

    Subtree blocks are contiguous in the planar order, so the population
    grown from the first m ancestors is always the prefix count over
    ancestors 1..m.  A single owner mutates the forest; the event log, when
    enabled, records (time, ancestor, +-1) append-only.
    """

    def __init__(self, m: int, log_events: bool = False):
        if m < 1:
            raise ValueError("need at least one ancestor")
        self.m_ancestors = m
        self._fen = _Fenwick(m)
        self.k = m
        self.t = 0.0
        self.event_log: Optional[list] = [] if log_events else None

    @property
    def counts(self) -> list:
        return [self._fen.prefix(j) - self._fen.prefix(j - 1)
                for j in range(1, self.m_ancestors + 1)]

    def alive_left_of(self, m: int) -> int:
        return self._fen.prefix(m)

    def apply(self, t: float, position: int, delta: int) -> int:
        """Apply a birth (+1) or death (-1) at a planar position; returns the
        ancestor owning that position."""
        j = self._fen.find(position)
        self._fen.add(j, delta)
        self.k += delta
        self.t = t
        if self.event_log is not None:
            self.event_log.append((t, j, delta))
        return j


# --------------------------------------------------------------------------
# Single-chain simulation
# --------------------------------------------------------------------------

def simulate_single(
    m: int,
    bd: BdRates,
    seed,
    t_max: float,
    *,
    record: bool = False,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> Trajectory:
    """One exact path of the total-rate chain started from m individuals.

    Holding times are exponential in the total rate; each event is a birth
    with probability (total birth rate)/(total rate).  Stops at absorption or
    censors at t_max.  H and L come from the exact event sequence.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    rng = as_generator(seed)
    buf = _DrawBuffer(rng)
    sums = bd.sums
    lam, mu = bd.lam, bd.mu
    k = m
    t = 0.0
    big_l = 0.0
    events = 0
    times = [0.0] if record else None
    values = [m] if record else None
    while k > 0:
        b = lam * k + sums.fplus(k)
        d = mu * k + sums.fminus(k)
        tot = b + d
        dt = buf.exp() / tot
        if t + dt > t_max:
            big_l += k * (t_max - t)
            return Trajectory(
                absorbed=False, H=None, L=big_l, events=events,
                censored_at=t_max,
                times=None if times is None else np.asarray(times),
                values=None if values is None else np.asarray(values, dtype=np.int64),
                m=m,
            )
        t += dt
        big_l += k * dt
        k += 1 if buf.uni() * tot <= b else -1
        events += 1
        if events > max_events:
            raise ExplosionGuard(f"exceeded {max_events} events at size {k}")
        if record:
            times.append(t)
            values.append(k)
    return Trajectory(
        absorbed=True, H=t, L=big_l, events=events,
        times=None if times is None else np.asarray(times),
        values=None if values is None else np.asarray(values, dtype=np.int64),
        m=m,
    )


def batch_extinction(
    bd: BdRates,
    m: int,
    n_paths: int,
    rng: np.random.Generator,
    *,
    t_max: float = math.inf,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Extinction time and path integral for many replicas, stepped together.

    All replicas advance one event per iteration (vectorized across the
    batch); each replica's jump chain has exactly the single-path law.
    Returns (H, L, censored, events) with H = nan where censored.
    """
    if m < 1 or n_paths < 1:
        raise ValueError("m and n_paths must be >= 1")
    k = np.full(n_paths, m, dtype=np.int64)
    t = np.zeros(n_paths)
    big_l = np.zeros(n_paths)
    big_h = np.full(n_paths, np.nan)
    events = np.zeros(n_paths, dtype=np.int64)
    censored = np.zeros(n_paths, dtype=bool)
    cap = max(2 * m, 64)
    lam_t, mu_t = bd.tables(cap)
    active = np.arange(n_paths)
    total_events = 0
    while active.size:
        ka = k[active]
        mx = int(ka.max())
        if mx >= lam_t.size:
            cap = 2 * mx
            lam_t, mu_t = bd.tables(cap)
        b = lam_t[ka]
        d = mu_t[ka]
        tot = b + d
        dt = rng.standard_exponential(active.size) / tot
        u = rng.random(active.size)
        tn = t[active] + dt
        over = tn > t_max
        if over.any():
            ids = active[over]
            big_l[ids] += k[ids] * (t_max - t[ids])
            censored[ids] = True
        ids = active[~over]
        if ids.size == 0:
            break
        dtk = dt[~over]
        big_l[ids] += k[ids] * dtk
        t[ids] = tn[~over]
        birth = u[~over] * tot[~over] < b[~over]
        k[ids] += np.where(birth, 1, -1)
        events[ids] += 1
        total_events += int(active.size)
        if total_events > max_events:
            raise ExplosionGuard(f"exceeded {max_events} total events")
        dead = k[ids] == 0
        if dead.any():
            big_h[ids[dead]] = t[ids[dead]]
        active = ids[~dead]
    return big_h, big_l, censored, events


def batch_state_at(
    bd: BdRates,
    m: int,
    t_target: float,
    n_paths: int,
    rng: np.random.Generator,
    *,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> np.ndarray:
    """Population size at a fixed time for many replicas (0 once absorbed)."""
    if t_target < 0:
        raise ValueError("t_target must be >= 0")
    k = np.full(n_paths, m, dtype=np.int64)
    t = np.zeros(n_paths)
    out = np.full(n_paths, -1, dtype=np.int64)
    cap = max(2 * m, 64)
    lam_t, mu_t = bd.tables(cap)
    active = np.arange(n_paths)
    total_events = 0
    while active.size:
        ka = k[active]
        mx = int(ka.max())
        if mx >= lam_t.size:
            cap = 2 * mx
            lam_t, mu_t = bd.tables(cap)
        b = lam_t[ka]
        d = mu_t[ka]
        tot = b + d
        dt = rng.standard_exponential(active.size) / tot
        u = rng.random(active.size)
        tn = t[active] + dt
        passed = tn > t_target
        if passed.any():
            ids = active[passed]
            out[ids] = k[ids]
        ids = active[~passed]
        if ids.size == 0:
            break
        t[ids] = tn[~passed]
        birth = u[~passed] * tot[~passed] < b[~passed]
        k[ids] += np.where(birth, 1, -1)
        total_events += int(active.size)
        if total_events > max_events:
            raise ExplosionGuard(f"exceeded {max_events} total events")
        dead = k[ids] == 0
        if dead.any():
            out[ids[dead]] = 0
        active = ids[~dead]
    return out


# --------------------------------------------------------------------------
# Planar coupled simulation
# --------------------------------------------------------------------------

def _direct_increment_sums(model: InteractionModel, k: int) -> tuple[float, float]:
    """Independent per-position rate totals, by direct summation over f."""
    ell = np.arange(1, k + 1, dtype=float)
    diffs = np.asarray(model.f(ell)) - np.asarray(model.f(ell - 1.0))
    return float(np.maximum(diffs, 0).sum()), float(np.maximum(-diffs, 0).sum())


def simulate_planar(
    m_ancestors: int,
    model: InteractionModel,
    lam: float,
    mu: float,
    seed,
    t_max: float,
    query_ms: Sequence[int],
    *,
    record: bool = True,
    log_events: bool = False,
    debug_rate_audit: bool = False,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> list[Trajectory]:
    """One coupled path of the planar population; per-prefix trajectories.

    With k alive the total birth rate is lam*k + F+(k) and the death rate
    mu*k + F-(k).  The event position is drawn from the mixture of a uniform
    base (per-capita part) and the increment-weighted part, then mapped to an
    ancestor through the prefix index; daughters join their mother's block.
    For each queried prefix size m the population, extinction time and path
    integral are tracked exactly.  Returned trajectories share event times
    and are sorted by m.
    """
    qms = sorted(set(int(q) for q in query_ms))
    if not qms or qms[0] < 1 or qms[-1] > m_ancestors:
        raise ValueError("query_ms must be non-empty within 1..m_ancestors")
    rng = as_generator(seed)
    buf = _DrawBuffer(rng)
    sums = rate_sums(model, max(2 * m_ancestors, 64))
    forest = PlanarForest(m_ancestors, log_events=log_events)
    n_q = len(qms)
    x = np.asarray(qms, dtype=np.int64).copy()
    big_l = np.zeros(n_q)
    big_h: list = [None] * n_q
    t = 0.0
    events = 0
    times = [0.0] if record else None
    vals = [x.copy()] if record else None
    censored = False
    while forest.k > 0:
        k = forest.k
        b = lam * k + sums.fplus(k)
        d = mu * k + sums.fminus(k)
        if debug_rate_audit:
            fp, fm = _direct_increment_sums(model, k)
            if not (math.isclose(b, lam * k + fp, rel_tol=1e-9, abs_tol=1e-9)
                    and math.isclose(d, mu * k + fm, rel_tol=1e-9, abs_tol=1e-9)):
                raise AssertionError(
                    f"rate audit failed at k={k}: ({b}, {d}) vs "
                    f"({lam * k + fp}, {mu * k + fm})"
                )
        tot = b + d
        dt = buf.exp() / tot
        if t + dt > t_max:
            big_l += x * (t_max - t)
            censored = True
            break
        t += dt
        big_l += x * dt
        if buf.uni() * tot <= b:
            delta = 1
            u = buf.uni() * b
            if u <= lam * k:
                pos = 1 + int(buf.uni() * k)
            else:
                w = u - lam * k
                pos = int(np.searchsorted(sums.fplus_prefix(k), w, side="left")) + 1
        else:
            delta = -1
            u = buf.uni() * d
            if u <= mu * k:
                pos = 1 + int(buf.uni() * k)
            else:
                w = u - mu * k
                pos = int(np.searchsorted(sums.fminus_prefix(k), w, side="left")) + 1
        j = forest.apply(t, min(pos, k), delta)
        events += 1
        if events > max_events:
            raise ExplosionGuard(f"exceeded {max_events} events at size {forest.k}")
        i0 = bisect.bisect_left(qms, j)
        x[i0:] += delta
        if delta < 0:
            for i in range(i0, n_q):
                if x[i] == 0 and big_h[i] is None:
                    big_h[i] = t
        if record:
            times.append(t)
            vals.append(x.copy())

    out = []
    times_arr = None if times is None else np.asarray(times)
    vals_arr = None if vals is None else np.asarray(vals)
    for i, m in enumerate(qms):
        absorbed = big_h[i] is not None
        out.append(Trajectory(
            absorbed=absorbed,
            H=big_h[i],
            L=float(big_l[i]),
            events=events,
            censored_at=None if absorbed else (t_max if censored else None),
            times=times_arr,
            values=None if vals_arr is None else vals_arr[:, i].copy(),
            m=m,
        ))
    return out


# --------------------------------------------------------------------------
# Derived operations
# --------------------------------------------------------------------------

def time_change_discrete(traj: Trajectory) -> Trajectory:
    """Reparametrize a recorded absorbed path by the inverse of its running
    integral, so the new hitting time of 0 equals the old path integral.

    The clock A(t) = integral of the path is piecewise linear between events
    and is inverted exactly on each holding interval.
    """
    if not traj.absorbed:
        raise CensoredInput("time change needs a fully absorbed path")
    if traj.times is None or traj.values is None:
        raise ValueError("time change needs a recorded trajectory")
    t = np.asarray(traj.times, dtype=float)
    x = np.asarray(traj.values, dtype=float)
    incr = x[:-1] * np.diff(t)
    s = np.concatenate(([0.0], np.cumsum(incr)))
    new_l = float(np.sum(x[:-1] * np.diff(s)))
    return Trajectory(
        absorbed=True,
        H=float(s[-1]),
        L=new_l,
        events=traj.events,
        times=s,
        values=x.copy(),
        m=traj.m,
    )


def pure_death_mean(m: int, mu: float, sums: RateSums) -> float:
    """Expected extinction time of the pure-death chain from m individuals:
    the sum over n <= m of the mean one-step descent times 1/(mu*n + F-(n))."""
    if m < 1:
        raise ValueError("m must be >= 1")
    n = np.arange(1, m + 1, dtype=float)
    return float(np.sum(1.0 / (mu * n + sums.fminus_table(m)[1:])))


def scaled_ensemble(
    n_scale: int,
    x: float,
    model: InteractionModel,
    t_grid: Sequence[float],
    seed,
    *,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> Trajectory:
    """One path of the renormalized process: base rates 2n, interaction
    n*f(./n), started from floor(n*x) individuals, sampled on t_grid and
    divided by n."""
    if x <= 0:
        raise ValueError("x must be positive")
    grid = np.asarray(list(t_grid), dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) < 0) or grid[0] < 0:
        raise ValueError("t_grid must be non-decreasing and non-negative")
    m0 = int(math.floor(n_scale * x))
    if m0 < 1:
        raise ValueError("floor(n*x) must be >= 1")
    sm = scaled_model(model, n_scale)
    bd = bd_rates(rate_sums(sm, max(2 * m0, 64)), 2.0 * n_scale, 2.0 * n_scale)
    raw = simulate_single(m0, bd, seed, float(grid[-1]), record=True,
                          max_events=max_events)
    # piecewise-constant sample of the event path on the grid
    idx = np.searchsorted(raw.times, grid, side="right") - 1
    z = raw.values[idx] / n_scale
    if raw.absorbed and raw.H is not None:
        z[grid >= raw.H] = 0.0
    return Trajectory(
        absorbed=raw.absorbed,
        H=raw.H,
        L=raw.L / n_scale,
        events=raw.events,
        censored_at=raw.censored_at,
        times=grid,
        values=z,
        m=m0,
    )

"""Euler-Maruyama integration of the continuous-state processes.

Three processes share one absorption policy (threshold ``eps_abs`` with the
crossing step refined by linear interpolation): the height diffusion
dY = q_height(Y) dt + dW started from sqrt(x), the mass diffusion
dU = q_mass(U) dt + dW started from x/2 (whose hitting time of 0 is the
total-mass functional), and the population diffusion
dZ = f(Z) dt + 2 sqrt(Z) dW integrated with the positivity-preserving
absolute-value scheme.  Batch kernels step all replicas together; coupled
ensembles drive every initial condition with the same Gaussian increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .criteria import Target, diffusion_drifts
from .interaction import InteractionModel
from .stats import as_generator


@dataclass(frozen=True)
class SdeConfig:
    """Time step, absorption threshold and horizon for the SDE schemes."""

    dt: float = 1e-3
    eps_abs: float = 1e-4
    t_max: float = 1000.0

    def __post_init__(self):
        if self.dt <= 0 or self.eps_abs <= 0 or self.t_max <= 0:
            raise ValueError("dt, eps_abs and t_max must be positive")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt))


@dataclass
class DiffusionPath:
    """A simulated path with hitting time T and, when defined, the running
    integral S of the population process.  Values are non-negative and stay
    at 0 once absorbed."""

    absorbed: bool
    T: Optional[float]
    S: Optional[float]
    censored_at: Optional[float] = None
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    x: Optional[float] = None


def _euler_single(
    q: Callable,
    y0: float,
    cfg: SdeConfig,
    rng: np.random.Generator,
    record_stride: int,
) -> tuple[Optional[float], Optional[np.ndarray], Optional[np.ndarray]]:
    """Scalar Euler loop; returns (T or None, times, values)."""
    dt = cfg.dt
    sq = math.sqrt(dt)
    eps = cfg.eps_abs
    n_steps = cfg.n_steps
    y = float(y0)
    record = record_stride > 0
    times = [0.0] if record else None
    values = [y] if record else None
    block = 8192
    noise = rng.standard_normal(block)
    ib = 0
    t = 0.0
    for step in range(n_steps):
        if ib >= block:
            noise = rng.standard_normal(block)
            ib = 0
        xi = noise[ib]
        ib += 1
        drift = float(q(max(y, eps)))
        yn = y + drift * dt + sq * xi
        if yn <= eps:
            frac = (y - eps) / max(y - yn, 1e-300)
            t_hit = t + dt * min(max(frac, 0.0), 1.0)
            if record:
                times.append(t_hit)
                values.append(0.0)
            return t_hit, (np.asarray(times) if record else None), (
                np.asarray(values) if record else None)
        t += dt
        y = yn
        if record and (step + 1) % record_stride == 0:
            times.append(t)
            values.append(y)
    return None, (np.asarray(times) if record else None), (
        np.asarray(values) if record else None)


def simulate_height(x: float, model: InteractionModel, cfg: SdeConfig, seed,
                    *, record_stride: int = 1) -> DiffusionPath:
    """Height diffusion from sqrt(x); T is the extinction time of the
    population it encodes."""
    if x <= 0:
        raise ValueError("x must be positive")
    q_height, _ = diffusion_drifts(model)
    rng = as_generator(seed)
    t_hit, times, values = _euler_single(q_height, math.sqrt(x), cfg, rng,
                                         record_stride)
    return DiffusionPath(
        absorbed=t_hit is not None, T=t_hit, S=None,
        censored_at=None if t_hit is not None else cfg.t_max,
        times=times, values=values, x=x,
    )


def simulate_mass(x: float, model: InteractionModel, cfg: SdeConfig, seed,
                  *, record_stride: int = 1) -> DiffusionPath:
    """Mass diffusion from x/2; its hitting time of 0 is reported as the
    total mass S of the population started from x."""
    if x <= 0:
        raise ValueError("x must be positive")
    _, q_mass = diffusion_drifts(model)
    rng = as_generator(seed)
    t_hit, times, values = _euler_single(q_mass, x / 2.0, cfg, rng,
                                         record_stride)
    return DiffusionPath(
        absorbed=t_hit is not None, T=t_hit, S=t_hit,
        censored_at=None if t_hit is not None else cfg.t_max,
        times=times, values=values, x=x,
    )


def simulate_Z(x: float, model: InteractionModel, cfg: SdeConfig, seed,
               *, record_stride: int = 1) -> DiffusionPath:
    """Population diffusion dZ = f(Z) dt + 2 sqrt(Z) dW via the symmetrized
    scheme; returns both the hitting time T and the trapezoidal integral S."""
    if x <= 0:
        raise ValueError("x must be positive")
    rng = as_generator(seed)
    f = model.f
    dt = cfg.dt
    sq = math.sqrt(dt)
    eps = cfg.eps_abs
    z = float(x)
    t = 0.0
    s = 0.0
    record = record_stride > 0
    times = [0.0] if record else None
    values = [z] if record else None
    block = 8192
    noise = rng.standard_normal(block)
    ib = 0
    for step in range(cfg.n_steps):
        if ib >= block:
            noise = rng.standard_normal(block)
            ib = 0
        xi = noise[ib]
        ib += 1
        zn = abs(z + float(f(z)) * dt + 2.0 * math.sqrt(max(z, 0.0)) * sq * xi)
        if zn <= eps:
            frac = min(max((z - eps) / max(z - zn, 1e-300), 0.0), 1.0)
            t_hit = t + dt * frac
            s += 0.5 * (z + eps) * dt * frac
            if record:
                times.append(t_hit)
                values.append(0.0)
            return DiffusionPath(
                absorbed=True, T=t_hit, S=s,
                times=np.asarray(times) if record else None,
                values=np.asarray(values) if record else None, x=x,
            )
        s += 0.5 * (z + zn) * dt
        t += dt
        z = zn
        if record and (step + 1) % record_stride == 0:
            times.append(t)
            values.append(z)
    return DiffusionPath(
        absorbed=False, T=None, S=s, censored_at=cfg.t_max,
        times=np.asarray(times) if record else None,
        values=np.asarray(values) if record else None, x=x,
    )


def stable_dt(
    q: Callable,
    y0: float,
    base_dt: float,
    *,
    eps_abs: float = 1e-4,
    frac: float = 0.8,
    excursion: float = 1.1,
    floor: float = 1e-7,
) -> float:
    """Largest step not above ``base_dt`` keeping the explicit drift step
    monotone over the descent range from y0.

    Probes the drift slope by central differences on the transit range
    (excluding the immediate vicinity of the absorbing boundary, where an
    overshoot only accelerates absorption) and caps dt so that
    |slope| * dt <= frac.  With frac <= 1 the one-step map stays monotone in
    the state, which preserves pathwise order under shared noise.  The
    returned step is fixed for the whole run.
    """
    lo = max(10.0 * eps_abs, 0.02 * y0, 0.02)
    hi = max(y0 * excursion, lo * 2.0)
    ys = np.geomspace(lo, hi, 200)
    h = 1e-5 * (1.0 + ys)
    qp = (np.asarray(q(ys + h), dtype=float)
          - np.asarray(q(ys - h), dtype=float)) / (2.0 * h)
    worst = float(np.max(np.abs(qp)))
    if worst <= 0:
        return base_dt
    return float(min(base_dt, max(frac / worst, floor)))


# --------------------------------------------------------------------------
# Batch kernels (vectorized across replicas)
# --------------------------------------------------------------------------

def batch_hit_times(
    q: Callable,
    y0: float,
    cfg: SdeConfig,
    n_paths: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Hitting times of 0 for n_paths independent copies of dY = q dt + dW.

    Returns (T, censored); T is nan where the horizon was hit first.
    """
    dt = cfg.dt
    sq = math.sqrt(dt)
    eps = cfg.eps_abs
    y = np.full(n_paths, float(y0))
    t_hit = np.full(n_paths, np.nan)
    active = np.arange(n_paths)
    t = 0.0
    for _ in range(cfg.n_steps):
        if active.size == 0:
            break
        xi = rng.standard_normal(active.size)
        ya = y[active]
        yn = ya + np.asarray(q(np.maximum(ya, eps)), dtype=float) * dt + sq * xi
        crossed = yn <= eps
        if crossed.any():
            ids = active[crossed]
            frac = np.clip((ya[crossed] - eps) /
                           np.maximum(ya[crossed] - yn[crossed], 1e-300), 0.0, 1.0)
            t_hit[ids] = t + dt * frac
        y[active] = np.where(crossed, 0.0, yn)
        active = active[~crossed]
        t += dt
    censored = np.isnan(t_hit)
    return t_hit, censored


def batch_height_times(x, model, cfg, n_paths, rng):
    q_height, _ = diffusion_drifts(model)
    return batch_hit_times(q_height, math.sqrt(x), cfg, n_paths, rng)


def batch_mass_times(x, model, cfg, n_paths, rng):
    _, q_mass = diffusion_drifts(model)
    return batch_hit_times(q_mass, x / 2.0, cfg, n_paths, rng)


def batch_z(
    x: float,
    model: InteractionModel,
    cfg: SdeConfig,
    n_paths: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Population-diffusion batch: returns (T, S, censored).

    S accumulates the trapezoidal integral of Z up to absorption (or up to
    the horizon for censored paths); T is nan where censored.
    """
    dt = cfg.dt
    sq = math.sqrt(dt)
    eps = cfg.eps_abs
    f = model.f
    z = np.full(n_paths, float(x))
    s = np.zeros(n_paths)
    t_hit = np.full(n_paths, np.nan)
    active = np.arange(n_paths)
    t = 0.0
    for _ in range(cfg.n_steps):
        if active.size == 0:
            break
        xi = rng.standard_normal(active.size)
        za = z[active]
        zn = np.abs(za + np.asarray(f(za), dtype=float) * dt
                    + 2.0 * np.sqrt(za) * sq * xi)
        crossed = zn <= eps
        if crossed.any():
            ids = active[crossed]
            frac = np.clip((za[crossed] - eps) /
                           np.maximum(za[crossed] - zn[crossed], 1e-300), 0.0, 1.0)
            t_hit[ids] = t + dt * frac
            s[ids] += 0.5 * (za[crossed] + eps) * dt * frac
        ids_alive = active[~crossed]
        s[ids_alive] += 0.5 * (za[~crossed] + zn[~crossed]) * dt
        z[active] = np.where(crossed, 0.0, zn)
        active = ids_alive
        t += dt
    censored = np.isnan(t_hit)
    return t_hit, s, censored


def batch_z_state_at(
    x: float,
    model: InteractionModel,
    cfg: SdeConfig,
    t_target: float,
    n_paths: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Population-diffusion values at a fixed time (0 once absorbed)."""
    if t_target < 0:
        raise ValueError("t_target must be >= 0")
    dt = cfg.dt
    sq = math.sqrt(dt)
    eps = cfg.eps_abs
    f = model.f
    z = np.full(n_paths, float(x))
    alive = np.ones(n_paths, dtype=bool)
    n_steps = int(math.ceil(t_target / dt))
    for _ in range(n_steps):
        if not alive.any():
            break
        xi = rng.standard_normal(n_paths)
        za = z[alive]
        zn = np.abs(za + np.asarray(f(za), dtype=float) * dt
                    + 2.0 * np.sqrt(za) * sq * xi[alive])
        dead = zn <= eps
        z[alive] = np.where(dead, 0.0, zn)
        # order matters: recompute the mask after writing the states
        idx = np.flatnonzero(alive)
        alive[idx[dead]] = False
    return z


def batch_coupled_hit_times(
    q: Callable,
    y0s: Sequence[float],
    cfg: SdeConfig,
    n_replicas: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Hitting times for a ladder of initial conditions under shared noise.

    Within each replica every initial condition is driven by the same
    Gaussian increments, so hitting times are coupled (and, for an ordered
    ladder with order-preserving drift steps, pathwise ordered).  Returns
    (T, censored) of shape (n_replicas, len(y0s)).
    """
    y0s = np.asarray(list(y0s), dtype=float)
    n_x = y0s.size
    dt = cfg.dt
    sq = math.sqrt(dt)
    eps = cfg.eps_abs
    y = np.tile(y0s, (n_replicas, 1))
    alive = np.ones((n_replicas, n_x), dtype=bool)
    t_hit = np.full((n_replicas, n_x), np.nan)
    rows = np.arange(n_replicas)  # replicas with at least one live path
    t = 0.0
    for _ in range(cfg.n_steps):
        if rows.size == 0:
            break
        # noise is drawn for every remaining replica row and shared across
        # its ladder so the coupling survives row compaction
        xi = rng.standard_normal(rows.size)[:, None]
        ya = y[rows]
        aa = alive[rows]
        drift = np.asarray(q(np.maximum(ya, eps)), dtype=float)
        yn = ya + drift * dt + sq * xi
        crossed = aa & (yn <= eps)
        if crossed.any():
            frac = np.clip((ya[crossed] - eps) /
                           np.maximum(ya[crossed] - yn[crossed], 1e-300), 0.0, 1.0)
            tmp = t_hit[rows]
            tmp[crossed] = t + dt * frac
            t_hit[rows] = tmp
        y[rows] = np.where(aa & ~crossed, yn, 0.0)
        aa &= ~crossed
        alive[rows] = aa
        rows = rows[aa.any(axis=1)]
        t += dt
    return t_hit, np.isnan(t_hit)


def shared_noise_ensemble(
    xs: Sequence[float],
    model: InteractionModel,
    cfg: SdeConfig,
    seed,
    target: Target,
    *,
    record_stride: int = 1,
) -> list[DiffusionPath]:
    """One coupled replica of the height or mass diffusion across an
    increasing ladder of initial masses, all driven by the identical noise.

    The path for a larger x dominates pathwise at every grid time until the
    smaller one is absorbed (for time steps small against the drift slope).
    """
    xs = [float(v) for v in xs]
    if not xs or any(v <= 0 for v in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
        raise ValueError("xs must be strictly increasing and positive")
    q_height, q_mass = diffusion_drifts(model)
    if target is Target.HEIGHT:
        q = q_height
        y0s = np.sqrt(np.asarray(xs))
    else:
        q = q_mass
        y0s = np.asarray(xs) / 2.0
    rng = as_generator(seed)
    dt = cfg.dt
    sq = math.sqrt(dt)
    eps = cfg.eps_abs
    y = y0s.copy()
    alive = np.ones(y.size, dtype=bool)
    t_hit = np.full(y.size, np.nan)
    record = record_stride > 0
    times = [0.0] if record else None
    values = [y.copy()] if record else None
    t = 0.0
    for step in range(cfg.n_steps):
        if not alive.any():
            break
        xi = rng.standard_normal()
        drift = np.asarray(q(np.maximum(y, eps)), dtype=float)
        yn = y + drift * dt + sq * xi
        crossed = alive & (yn <= eps)
        if crossed.any():
            frac = np.clip((y[crossed] - eps) /
                           np.maximum(y[crossed] - yn[crossed], 1e-300), 0.0, 1.0)
            t_hit[crossed] = t + dt * frac
        y = np.where(alive & ~crossed, yn, 0.0)
        alive &= ~crossed
        t += dt
        if record and (step + 1) % record_stride == 0:
            times.append(t)
            values.append(y.copy())
    out = []
    times_arr = np.asarray(times) if record else None
    vals_arr = np.asarray(values) if record else None
    for i, x in enumerate(xs):
        hit = None if math.isnan(t_hit[i]) else float(t_hit[i])
        out.append(DiffusionPath(
            absorbed=hit is not None,
            T=hit,
            S=hit if target is Target.MASS else None,
            censored_at=None if hit is not None else cfg.t_max,
            times=times_arr,
            values=None if vals_arr is None else vals_arr[:, i].copy(),
            x=x,
        ))
    return out

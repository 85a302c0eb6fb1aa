"""Interaction drifts and their discrete rate-increment sums.

An interaction model wraps a continuous function f with f(0) = 0 that adds
state-dependent birth/death pressure to a base branching dynamic.  The model
carries the smallest verified sublinearity constant theta (so that
f(x+y) - f(y) <= theta*x on the validation grid) and a sign threshold a0
beyond which f never vanishes.  From f we derive, at integer states, the
cumulative positive and negative parts of the unit increments; these feed both
the jump-rate construction of the simulators and the analytic classifiers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import H1Violation, NoSignStabilization

GRID_CUTOFF = 1.0e6
GRID_POINTS = 200
THETA_SAFETY = 1.05


def _geom_grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def _vectorize(f: Callable[[float], float]) -> Callable[[np.ndarray], np.ndarray]:
    """Return a callable that accepts numpy arrays, wrapping scalar-only f."""

    def wrapped(x):
        arr = np.asarray(x, dtype=float)
        try:
            out = f(arr)
            out = np.asarray(out, dtype=float)
            if out.shape == arr.shape:
                return out if arr.ndim else float(out)
        except (TypeError, ValueError):
            pass
        flat = np.array([float(f(float(v))) for v in arr.flat])
        return flat.reshape(arr.shape) if arr.ndim else float(flat[0])

    return wrapped


@dataclass(frozen=True)
class InteractionModel:
    """Immutable interaction drift with its validated constants.

    Attributes
    ----------
    f : callable
        The interaction function; accepts floats or numpy arrays.
    theta : float
        Verified sublinearity constant (>= 0).
    a0 : float or None
        Threshold beyond which f keeps a constant nonzero sign.  ``None``
        means no such threshold exists or was detected (e.g. the zero
        function); classification operations refuse such models.
    family : str
        One of ``logistic``, ``powerlog``, ``linear``, ``zero``, ``custom``,
        ``scaled``.
    params : dict
        Family parameters, for provenance and closed-form handling.
    h1_max_excess : float
        Largest observed excess of f(x+y) - f(y) over theta*x on the
        validation grid (0.0 when the sampled check holds with slack).
    """

    f: Callable
    theta: float
    a0: Optional[float]
    family: str = "custom"
    params: dict = field(default_factory=dict)
    h1_max_excess: float = 0.0

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if self.a0 is not None and self.a0 <= 0:
            raise ValueError("a0 must be positive")

    def require_a0(self) -> float:
        if self.a0 is None:
            raise NoSignStabilization(
                f"model family={self.family!r} has no constant-sign threshold; "
                "supply a0 explicitly to classify it"
            )
        return self.a0

    def f_over_x(self) -> Callable:
        """The per-capita drift x -> f(x)/x, set to 0 at 0."""
        fv = self.f

        def f1(x):
            arr = np.asarray(x, dtype=float)
            a = np.atleast_1d(arr)
            out = np.zeros_like(a)
            pos = a > 0
            out[pos] = np.asarray(fv(a[pos]), dtype=float) / a[pos]
            return out if arr.ndim else float(out[0])

        return f1


def _h1_tolerance(theta: float, x: np.ndarray) -> np.ndarray:
    return 1e-8 * (1.0 + theta * x)


def _pair_grid(cutoff: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    # x increments never include 0 (nothing to check), y does.
    xs = _geom_grid(min(1e-3, cutoff / 1e6), cutoff, n)
    ys = np.concatenate(([0.0], _geom_grid(min(1e-3, cutoff / 1e6), cutoff, n - 1)))
    return xs, ys


def _estimate_theta(fv: Callable, cutoff: float, n: int) -> float:
    xs, ys = _pair_grid(cutoff, n)
    X = xs[None, :]
    Y = ys[:, None]
    quot = (np.asarray(fv(X + Y)) - np.asarray(fv(Y))) / X
    sup = float(np.max(quot))
    return max(0.0, sup) * THETA_SAFETY


def _check_h1(fv: Callable, theta: float, cutoff: float, n: int) -> float:
    """Return the worst excess over the sampled sublinearity bound.

    Raises H1Violation when the excess exceeds the grid tolerance.
    """
    xs, ys = _pair_grid(cutoff, n)
    X = xs[None, :]
    Y = ys[:, None]
    excess = (np.asarray(fv(X + Y)) - np.asarray(fv(Y))) - theta * X
    worst = float(np.max(excess))
    tol = _h1_tolerance(theta, xs)
    if np.any(excess > tol[None, :]):
        i, j = np.unravel_index(int(np.argmax(excess - tol[None, :])), excess.shape)
        raise H1Violation(
            f"f(x+y)-f(y) > theta*x at x={xs[j]:.6g}, y={ys[i]:.6g} "
            f"(excess {excess[i, j]:.3e}, theta={theta:.6g})"
        )
    return max(0.0, worst)


def _detect_a0(fv: Callable, cutoff: float, n: int) -> Optional[float]:
    """Last sign change of f on a geometric scan grid, plus one grid step.

    Returns None for a function that is identically zero on the grid (no sign
    to stabilize); raises NoSignStabilization when the sign is still changing
    at the cutoff.
    """
    xs = _geom_grid(min(1e-3, cutoff / 1e6), cutoff, 2 * n)
    vals = np.asarray(fv(xs), dtype=float)
    zero_tol = 1e-300
    signs = np.sign(np.where(np.abs(vals) <= zero_tol, 0.0, vals)).astype(int)
    if np.all(signs == 0):
        return None
    final = signs[-1]
    if final == 0:
        raise NoSignStabilization(
            f"f vanishes at the scan cutoff {cutoff:.3g}; supply a0 explicitly"
        )
    bad = np.flatnonzero(signs != final)
    if bad.size == 0:
        return float(xs[0])
    last = int(bad[-1])
    # demand a constant sign over a substantial tail of the scan, not just
    # at the very last grid points
    if last >= int(0.9 * xs.size):
        raise NoSignStabilization(
            f"f still changes sign near the scan cutoff {cutoff:.3g}; "
            "supply a0 explicitly"
        )
    return float(xs[last + 1])


def build_model(
    f: Callable[[float], float],
    theta: Optional[float] = None,
    a0: Optional[float] = None,
    *,
    family: str = "custom",
    params: Optional[dict] = None,
    grid_cutoff: float = GRID_CUTOFF,
    grid_points: int = GRID_POINTS,
) -> InteractionModel:
    """Validate an interaction function and package it with its constants.

    ``theta`` defaults to the supremum of grid difference quotients times a 5%
    safety margin, clamped at 0.  ``a0`` defaults to one grid step past the
    last sign change found on a geometric scan up to ``grid_cutoff``; a user
    supplied value always wins.  The sublinearity check is sampled, not
    proved: the worst observed excess is recorded on the model.
    """
    fv = _vectorize(f)
    f0 = float(fv(0.0))
    if abs(f0) > 1e-12:
        raise ValueError(f"f(0) must be 0, got {f0!r}")
    if theta is None:
        theta = _estimate_theta(fv, grid_cutoff, grid_points)
    excess = _check_h1(fv, theta, grid_cutoff, grid_points)
    if a0 is None:
        a0 = _detect_a0(fv, grid_cutoff, grid_points)
    return InteractionModel(
        f=fv,
        theta=float(theta),
        a0=a0,
        family=family,
        params=dict(params or {}),
        h1_max_excess=excess,
    )


def logistic(a: float, b: float, theta: Optional[float] = None,
             a0: Optional[float] = None) -> InteractionModel:
    """Logistic interaction f(x) = a*x - b*x**2 (competition for b > 0)."""
    if b < 0:
        raise ValueError("b must be non-negative")
    if b == 0:
        return linear(a, theta=theta, a0=a0)

    def f(x):
        return a * x - b * x * x

    if theta is None:
        theta = max(a, 0.0)
    if a0 is None:
        a0 = a / b if a > 0 else 1.0
    return build_model(f, theta=theta, a0=a0, family="logistic",
                       params={"a": a, "b": b})


def power_log(alpha: float, gamma: float, theta: Optional[float] = None,
              a0: Optional[float] = None) -> InteractionModel:
    """Competition f(x) = -x**alpha * log(x)**gamma for x >= 2.

    Below 2 the function is continued linearly down to f(0) = 0, so it is
    continuous and decreasing everywhere.
    """
    if alpha < 0 or gamma < 0:
        raise ValueError("alpha and gamma must be non-negative")
    f2 = -(2.0 ** alpha) * (math.log(2.0) ** gamma)

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.where(x >= 2.0, 0.0, x * (f2 / 2.0))
        tail = x >= 2.0
        if np.any(tail):
            xt = np.where(tail, x, 2.0)
            out = np.where(tail, -np.power(xt, alpha) * np.power(np.log(xt), gamma), out)
        return out

    if theta is None:
        theta = 0.0
    if a0 is None:
        a0 = 2.0
    return build_model(f, theta=theta, a0=a0, family="powerlog",
                       params={"alpha": alpha, "gamma": gamma})


def linear(a: float, theta: Optional[float] = None,
           a0: Optional[float] = None) -> InteractionModel:
    """Linear interaction f(x) = a*x (pure extra birth or death pressure)."""
    if a == 0:
        return zero_fn()

    def f(x):
        return a * np.asarray(x, dtype=float)

    if theta is None:
        theta = max(a, 0.0)
    if a0 is None:
        a0 = 1.0
    return build_model(f, theta=theta, a0=a0, family="linear", params={"a": a})


def zero_fn() -> InteractionModel:
    """No interaction at all.  Valid for simulation; has no sign threshold,
    so classification operations reject it."""

    def f(x):
        return np.zeros_like(np.asarray(x, dtype=float)) + 0.0

    return InteractionModel(f=_vectorize(f), theta=0.0, a0=None, family="zero")


def scaled_model(model: InteractionModel, n: int) -> InteractionModel:
    """The renormalized interaction z -> n*f(z/n) used by the scaling limit.

    Sublinearity and sign threshold carry over exactly (same theta, a0 scaled
    by n), so no re-validation is needed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    base = model.f

    def f(x):
        return n * np.asarray(base(np.asarray(x, dtype=float) / n))

    return InteractionModel(
        f=_vectorize(f),
        theta=model.theta,
        a0=None if model.a0 is None else model.a0 * n,
        family="scaled",
        params={"base_family": model.family, "n": n, **model.params},
    )


class RateSums:
    """Cumulative positive/negative parts of the unit increments of a drift.

    ``fplus(n)`` is the sum over l = 1..n of max(f(l) - f(l-1), 0) and
    ``fminus(n)`` the sum of the negative parts, so that
    ``fminus(n) - fplus(n) == -f(n)`` exactly at every integer.  Tables grow
    lazily; extension is not thread-safe, so grow them (via :meth:`ensure`)
    before sharing across concurrent readers.
    """

    def __init__(self, f: Callable, theta: float, n_max: int = 64):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        self._f = f
        self.theta = float(theta)
        self._fp = np.zeros(1)
        self._fm = np.zeros(1)
        self._fvals = np.zeros(1)
        self.ensure(n_max)

    @property
    def n_max(self) -> int:
        return self._fp.size - 1

    def ensure(self, n: int) -> None:
        """Extend the prefix tables to cover states up to n."""
        cur = self.n_max
        if n <= cur:
            return
        new = max(n, 2 * cur)
        ks = np.arange(cur, new + 1, dtype=float)
        vals = np.asarray(self._f(ks), dtype=float)
        diffs = np.diff(vals)
        pos = np.maximum(diffs, 0.0)
        neg = np.maximum(-diffs, 0.0)
        self._fp = np.concatenate([self._fp, self._fp[-1] + np.cumsum(pos)])
        self._fm = np.concatenate([self._fm, self._fm[-1] + np.cumsum(neg)])
        self._fvals = np.concatenate([self._fvals, vals[1:]])

    def fplus(self, n: int) -> float:
        self.ensure(n)
        return float(self._fp[n])

    def fminus(self, n: int) -> float:
        self.ensure(n)
        return float(self._fm[n])

    def fplus_prefix(self, n: int) -> np.ndarray:
        """View of [F+(1), ..., F+(n)] for weighted position sampling."""
        self.ensure(n)
        return self._fp[1:n + 1]

    def fminus_prefix(self, n: int) -> np.ndarray:
        self.ensure(n)
        return self._fm[1:n + 1]

    def fplus_table(self, n: int) -> np.ndarray:
        """Array indexed by state, entry k = F+(k), k = 0..n."""
        self.ensure(n)
        return self._fp[:n + 1]

    def fminus_table(self, n: int) -> np.ndarray:
        self.ensure(n)
        return self._fm[:n + 1]

    def f_at(self, n: int) -> float:
        self.ensure(n)
        return float(self._fvals[n])


def rate_sums(model: InteractionModel, n_max: int) -> RateSums:
    """Increment sums of f itself; drives the total jump rates."""
    return RateSums(model.f, model.theta, n_max)


def _check_h1_over_x(f1: Callable, theta1: float, cutoff: float, n: int) -> float:
    """Sampled sublinearity check for the per-capita drift.

    The per-capita drift generally has a nonzero limit at 0+ (a logistic
    a*x - b*x**2 gives a - b*x), so the check anchors y at 0 only through the
    convention f1(0) = 0 with x >= 1, and otherwise samples y >= 1.
    """
    xs = _geom_grid(1e-3, cutoff, n)
    ys = _geom_grid(1.0, cutoff, n - 1)
    X = xs[None, :]
    Y = ys[:, None]
    excess = (np.asarray(f1(X + Y)) - np.asarray(f1(Y))) - theta1 * X
    x1 = xs[xs >= 1.0]
    excess0 = np.asarray(f1(x1)) - theta1 * x1
    tol = _h1_tolerance(theta1, xs)
    worst = max(float(np.max(excess)), float(np.max(excess0)))
    if np.any(excess > tol[None, :]) or np.any(excess0 > _h1_tolerance(theta1, x1)):
        raise H1Violation(
            f"f(x)/x fails the sublinear-increment check (theta={theta1:.6g})"
        )
    return max(0.0, worst)


def _estimate_theta_over_x(f1: Callable, cutoff: float, n: int) -> float:
    xs = _geom_grid(1e-3, cutoff, n)
    ys = _geom_grid(1.0, cutoff, n - 1)
    X = xs[None, :]
    Y = ys[:, None]
    quot = (np.asarray(f1(X + Y)) - np.asarray(f1(Y))) / X
    x1 = xs[xs >= 1.0]
    quot0 = np.asarray(f1(x1)) / x1
    sup = max(float(np.max(quot)), float(np.max(quot0)))
    return max(0.0, sup) * THETA_SAFETY


def rate_sums_over_x(
    model: InteractionModel,
    n_max: int,
    *,
    grid_cutoff: float = GRID_CUTOFF,
    grid_points: int = GRID_POINTS,
) -> RateSums:
    """Increment sums of the per-capita drift f(x)/x (value 0 at 0).

    Used by the total-mass classifier and the time-changed comparison
    processes.  Raises H1Violation when f(x)/x fails the sampled
    sublinear-increment check; the returned table carries the per-capita
    sublinearity constant in its ``theta`` attribute.
    """
    f1 = model.f_over_x()
    theta1 = _estimate_theta_over_x(f1, grid_cutoff, grid_points)
    _check_h1_over_x(f1, theta1, grid_cutoff, grid_points)
    return RateSums(f1, theta1, n_max)

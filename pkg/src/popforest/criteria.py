"""Analytic classification of height and total mass of the genealogical forest.

Three independent routes decide whether the extinction time (height) and the
time-integral of the population (length / total mass) stay finite as the
initial size grows without bound:

* the improper-integral tests on 1/|f| and x/|f| beyond the sign threshold,
  with closed-form answers for the built-in families and a Cauchy-saturation
  ladder heuristic for custom drifts;
* the birth-death series route: potential coefficients pi_n computed in log
  space, with the divergence/saturation pattern of the two associated series
  deciding whether infinity is an entrance boundary;
* the drifted-Brownian-motion route: the double-integral entrance test on the
  height and mass diffusion drifts, short-circuited by three sufficient
  conditions evaluated with finite-difference derivatives.

`classify` merges the routes; definite disagreement downgrades the verdict to
INCONCLUSIVE rather than trusting any single route.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .errors import (
    H2Violation,
    NoEntranceBoundary,
    ZeroCrossing,
)
from .interaction import (
    InteractionModel,
    RateSums,
    _vectorize,
    rate_sums,
    rate_sums_over_x,
)


class IntegralVerdict(Enum):
    CONVERGES = "CONVERGES"
    DIVERGES = "DIVERGES"
    INCONCLUSIVE = "INCONCLUSIVE"


class EntranceVerdict(Enum):
    ENTRANCE = "ENTRANCE"
    NOT_ENTRANCE = "NOT_ENTRANCE"
    INCONCLUSIVE = "INCONCLUSIVE"


class H3Verdict(Enum):
    HOLDS = "HOLDS"
    FAILS = "FAILS"
    INCONCLUSIVE = "INCONCLUSIVE"


class Verdict(Enum):
    DIVERGES = "DIVERGES"
    FINITE_EXP_MOMENT = "FINITE_EXP_MOMENT"
    INCONCLUSIVE = "INCONCLUSIVE"


class Target(Enum):
    HEIGHT = "HEIGHT"
    MASS = "MASS"


# --------------------------------------------------------------------------
# Birth-death rates
# --------------------------------------------------------------------------

@dataclass
class BdRates:
    """Total jump rates of the interacting birth-death chain.

    In state n the chain moves up at rate lam*n + F+(n) and down at rate
    mu*n + F-(n).  ``lam == 0`` is accepted for pure-death chains; the series
    operations require lam > 0.
    """

    lam: float
    mu: float
    sums: RateSums

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.mu <= 0:
            raise ValueError("mu must be > 0")

    def lambda_n(self, n: int) -> float:
        return self.lam * n + self.sums.fplus(n)

    def mu_n(self, n: int) -> float:
        return self.mu * n + self.sums.fminus(n)

    def tables(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Rate arrays indexed by state 0..n (state 0 entries are 0)."""
        states = np.arange(n + 1, dtype=float)
        lam_arr = self.lam * states + self.sums.fplus_table(n)
        mu_arr = self.mu * states + self.sums.fminus_table(n)
        return lam_arr, mu_arr


def bd_rates(sums: RateSums, lam: float, mu: float) -> BdRates:
    return BdRates(lam=lam, mu=mu, sums=sums)


# --------------------------------------------------------------------------
# Series route
# --------------------------------------------------------------------------

@dataclass
class SeriesDiagnostics:
    """Log-space potential coefficients and the two saturation diagnostics."""

    n_trunc: int
    log_pi: np.ndarray          # log_pi[i] = log pi_{i+1}
    log_a_partials: np.ndarray  # running log of sum 1/pi_n
    log_s_partials: np.ndarray  # running log of the double series
    saturation_ratio_a: float
    saturation_ratio_s: float
    verdict: EntranceVerdict
    grow_tol: float
    sat_tol: float

    @property
    def A_partial(self) -> float:
        v = self.log_a_partials[-1]
        return math.inf if v > 709 else float(np.exp(v))

    @property
    def S_partial(self) -> float:
        v = self.log_s_partials[-1]
        return math.inf if v > 709 else float(np.exp(v))

    def to_dict(self) -> dict:
        return {
            "n_trunc": self.n_trunc,
            "log_A": float(self.log_a_partials[-1]),
            "log_S": float(self.log_s_partials[-1]),
            "saturation_ratio_a": self.saturation_ratio_a,
            "saturation_ratio_s": self.saturation_ratio_s,
            "verdict": self.verdict.value,
        }


def _series_core(bd: BdRates, n_trunc: int):
    """log pi, per-n double-series terms, and running log partial sums."""
    if bd.lam <= 0:
        raise ValueError("series route needs a positive base birth rate")
    n = n_trunc
    lam_arr, mu_arr = bd.tables(n)
    log_lam = np.log(lam_arr[1:])
    log_mu = np.log(mu_arr[1:])
    ratio = log_lam - log_mu
    log_pi = np.concatenate(([0.0], np.cumsum(ratio[1:])))
    log_a = np.logaddexp.accumulate(-log_pi)
    # terms of the double series: t_n = (1/pi_n) * sum_{k=n+1..N} pi_k/lam_k
    a = log_pi - log_lam
    suffix = np.logaddexp.accumulate(a[::-1])[::-1]
    log_t = np.full(n, -np.inf)
    log_t[: n - 1] = suffix[1:] - log_pi[: n - 1]
    log_s = np.logaddexp.accumulate(log_t)
    return log_pi, log_t, log_a, log_s


def _block_ratio(log_partials: np.ndarray) -> float:
    """Fraction of the total contributed by the last half of the index range."""
    half = len(log_partials) // 2
    return float(-np.expm1(log_partials[half - 1] - log_partials[-1]))


def series_criterion(
    bd: BdRates,
    n_trunc: int,
    *,
    grow_tol: float = 0.05,
    sat_tol: float = 1e-3,
) -> SeriesDiagnostics:
    """Entrance-boundary test from the two birth-death series.

    The potential-coefficient series A must keep growing while the
    return-time double series S must saturate; the verdict is read off the
    last-half contribution ratios at the truncation level.
    """
    if n_trunc < 10:
        raise ValueError("n_trunc must be >= 10")
    log_pi, _log_t, log_a, log_s = _series_core(bd, n_trunc)
    sat_a = _block_ratio(log_a)
    sat_s = _block_ratio(log_s)
    if sat_s > grow_tol:
        verdict = EntranceVerdict.NOT_ENTRANCE
    elif sat_a > grow_tol and sat_s < sat_tol:
        verdict = EntranceVerdict.ENTRANCE
    else:
        verdict = EntranceVerdict.INCONCLUSIVE
    return SeriesDiagnostics(
        n_trunc=n_trunc,
        log_pi=log_pi,
        log_a_partials=log_a,
        log_s_partials=log_s,
        saturation_ratio_a=sat_a,
        saturation_ratio_s=sat_s,
        verdict=verdict,
        grow_tol=grow_tol,
        sat_tol=sat_tol,
    )


@dataclass
class JTable:
    """Descent potential of the chain: increasing, bounded by 1/a.

    ``values[i]`` holds J(n_a + i); J(n_a) = 0.
    """

    n_a: int
    values: np.ndarray

    @property
    def m_max(self) -> int:
        return self.n_a + len(self.values) - 1

    def __call__(self, m: int) -> float:
        if m < self.n_a or m > self.m_max:
            raise IndexError(f"J defined on [{self.n_a}, {self.m_max}], got {m}")
        return float(self.values[m - self.n_a])


def j_function(bd: BdRates, a: float, n_trunc: int,
               *, sat_tol: float = 1e-2) -> JTable:
    """Build the bounded potential whose generator image is identically -1.

    Requires the double series to saturate at the truncation level (an
    entrance boundary); otherwise raises NoEntranceBoundary.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    _log_pi, log_t, _log_a, log_s = _series_core(bd, n_trunc)
    if _block_ratio(log_s) > sat_tol:
        raise NoEntranceBoundary(
            "double series still growing at truncation; no entrance boundary"
        )
    t = np.exp(log_t)
    tails = np.cumsum(t[::-1])[::-1]  # tails[i] = sum_{n >= i+1} t_n
    idx = np.flatnonzero(tails <= 1.0 / a)
    if idx.size == 0:
        raise NoEntranceBoundary(f"tail never drops below 1/a = {1.0 / a!r}")
    n_a = int(idx[0]) + 1
    j_vals = np.concatenate(([0.0], np.cumsum(t[n_a - 1: n_trunc - 1])))
    return JTable(n_a=n_a, values=j_vals)


# --------------------------------------------------------------------------
# Improper-integral ladder
# --------------------------------------------------------------------------

@dataclass
class LadderTrace:
    """Partial improper integrals over a doubling ladder of cutoffs."""

    cutoffs: list
    additions: list
    partials: list
    verdict: IntegralVerdict
    last_rel_addition: float
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "cutoffs": [float(c) for c in self.cutoffs],
            "partials": [float(p) for p in self.partials],
            "verdict": self.verdict.value,
            "last_rel_addition": self.last_rel_addition,
            "note": self.note,
        }


def _ladder_integral(
    g: Callable[[float], float],
    start: float,
    *,
    probe: Optional[Callable[[float, float], None]] = None,
    max_rungs: int = 60,
    conv_tol: float = 1e-3,
    div_tol: float = 0.05,
    nonshrink: float = 0.99,
    nonshrink_window: int = 3,
    min_rungs: int = 6,
) -> LadderTrace:
    """Cauchy-saturation heuristic for int_start^infinity g.

    CONVERGES once a doubling of the cutoff adds less than ``conv_tol``
    relatively; DIVERGES when additions keep growing (or stop shrinking) or
    the last relative addition exceeds ``div_tol``; INCONCLUSIVE otherwise.
    """
    cutoffs, additions, partials = [], [], []
    total = 0.0
    lo = start
    verdict = None
    note = ""
    for j in range(max_rungs):
        hi = 2.0 * lo
        if probe is not None:
            probe(lo, hi)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            val, _err = quad(g, lo, hi, limit=200)
        total += val
        cutoffs.append(hi)
        additions.append(val)
        partials.append(total)
        if j + 1 >= min_rungs and total > 0:
            rel = val / total
            if rel < conv_tol:
                verdict = IntegralVerdict.CONVERGES
                note = f"saturated after {j + 1} doublings"
                break
            if rel > div_tol and val >= additions[-2] * (1 - 1e-12):
                verdict = IntegralVerdict.DIVERGES
                note = "additions not shrinking and above divergence threshold"
                break
        lo = hi
    last_rel = additions[-1] / partials[-1] if partials[-1] > 0 else 0.0
    if verdict is None:
        tail = additions[-nonshrink_window - 1:]
        ratios = [tail[i + 1] / tail[i] for i in range(len(tail) - 1) if tail[i] > 0]
        if last_rel > div_tol or (ratios and all(r >= nonshrink for r in ratios)):
            verdict = IntegralVerdict.DIVERGES
            note = "additions persist across the full ladder"
        else:
            verdict = IntegralVerdict.INCONCLUSIVE
            note = "saturation undecided at the ladder end"
    return LadderTrace(cutoffs, additions, partials, verdict, last_rel, note)


def _closed_form_verdict(model: InteractionModel, kind: Target) -> Optional[IntegralVerdict]:
    fam = model.family
    if fam == "logistic":
        return IntegralVerdict.CONVERGES if kind is Target.HEIGHT else IntegralVerdict.DIVERGES
    if fam == "linear":
        return IntegralVerdict.DIVERGES
    if fam == "powerlog":
        alpha = model.params["alpha"]
        gamma = model.params["gamma"]
        edge = 1.0 if kind is Target.HEIGHT else 2.0
        finite = alpha > edge or (alpha == edge and gamma > 1.0)
        return IntegralVerdict.CONVERGES if finite else IntegralVerdict.DIVERGES
    return None


@dataclass
class IntegralReport:
    kind: Target
    verdict: IntegralVerdict
    provenance: str
    closed_form: Optional[IntegralVerdict]
    numeric: LadderTrace

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "verdict": self.verdict.value,
            "provenance": self.provenance,
            "closed_form": None if self.closed_form is None else self.closed_form.value,
            "numeric": self.numeric.to_dict(),
        }


def _integration_start(model: InteractionModel) -> float:
    """Lower endpoint for the tail integrals, nudged past any zero at a0."""
    a0 = model.require_a0()
    x = a0
    for _ in range(200):
        if abs(float(model.f(x))) > 1e-12 * (1.0 + model.theta * x):
            return x
        x = x * 1.01 + 1e-12
    raise ZeroCrossing(f"f vanishes persistently just past a0 = {a0!r}")


def _sign_probe(model: InteractionModel, ref_sign: float):
    def probe(lo: float, hi: float) -> None:
        xs = np.geomspace(lo, hi, 33)
        vals = np.asarray(model.f(xs), dtype=float)
        if np.any(vals * ref_sign <= 0):
            bad = xs[np.flatnonzero(vals * ref_sign <= 0)[0]]
            raise ZeroCrossing(
                f"f vanishes or changes sign at x ~ {bad:.6g} beyond a0"
            )
    return probe


def integral_criterion(
    model: InteractionModel,
    kind: Target,
    *,
    max_rungs: int = 60,
    conv_tol: float = 1e-3,
    div_tol: float = 0.05,
) -> IntegralReport:
    """Tail-integral finiteness test for the height (1/|f|) or mass (x/|f|).

    Built-in families use the closed-form answer as the verdict; the doubling
    ladder is always run so the report carries a numeric trace.
    """
    start = _integration_start(model)
    f = model.f
    ref_sign = math.copysign(1.0, float(f(start)))
    if kind is Target.HEIGHT:
        def g(x):
            return 1.0 / abs(float(f(x)))
    else:
        def g(x):
            return x / abs(float(f(x)))
    trace = _ladder_integral(
        g, start, probe=_sign_probe(model, ref_sign),
        max_rungs=max_rungs, conv_tol=conv_tol, div_tol=div_tol,
    )
    closed = _closed_form_verdict(model, kind)
    if closed is not None:
        return IntegralReport(kind, closed, f"closed-form:{model.family}", closed, trace)
    return IntegralReport(kind, trace.verdict, "integral-ladder", None, trace)


# --------------------------------------------------------------------------
# Drifted-Brownian-motion route
# --------------------------------------------------------------------------

def kolmogorov_Q(q: Callable[[float], float], y: float) -> float:
    """Drift potential Q(y) = 2 * int_1^y q(x) dx to 1e-8 relative accuracy."""
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        try:
            val, err = quad(q, 1.0, y, epsabs=1e-12, epsrel=1e-9, limit=400)
        except Warning as w:  # quadrature failed to converge
            raise RuntimeError(f"quadrature did not converge for Q({y!r}): {w}")
    if err > max(1e-6, 1e-7 * abs(val)):
        raise RuntimeError(f"quadrature error {err:.2e} too large for Q({y!r})")
    return 2.0 * val


class _Potential:
    """Tabulated antiderivative of 2q on [1, y_max], spline-interpolated in
    log-argument; extends itself on demand."""

    def __init__(self, q: Callable, y_max: float = 64.0):
        self.q = q
        self._y_max = 1.0
        self._spline = None
        self.ensure(y_max)

    def ensure(self, y_max: float) -> None:
        if y_max <= self._y_max and self._spline is not None:
            return
        from scipy.interpolate import CubicSpline

        y_max = max(y_max, 64.0)
        n = max(800, int(math.log(y_max) / 0.008))
        u = np.linspace(0.0, math.log(y_max), n)
        # per-interval Gauss-Legendre in the log variable
        nodes, wts = np.polynomial.legendre.leggauss(12)
        mid = 0.5 * (u[1:] + u[:-1])
        halfw = 0.5 * np.diff(u)
        pts = mid[:, None] + halfw[:, None] * nodes[None, :]
        z = np.exp(pts)
        integrand = np.asarray(self.q(z), dtype=float) * z
        incr = (integrand * wts[None, :]).sum(axis=1) * halfw * 2.0
        qvals = np.concatenate(([0.0], np.cumsum(incr)))
        self._spline = CubicSpline(u, qvals)
        self._y_max = y_max

    def __call__(self, y):
        arr = np.asarray(y, dtype=float)
        m = float(np.max(arr)) if arr.size else 1.0
        if m > self._y_max:
            self.ensure(m * 4.0)
        out = self._spline(np.log(np.maximum(arr, 1e-300)))
        return out if arr.ndim else float(out)


_GAUSS32 = np.polynomial.legendre.leggauss(32)
_GAUSS24 = np.polynomial.legendre.leggauss(24)

_LOG_CUT = -37.0  # exp(-37) ~ 8.5e-17: relative truncation point for tails


def _decay_reach(pot: _Potential, y: float, w0: float) -> tuple[float, bool]:
    """Smallest z (by doubling) with Q(z) - Q(y) <= -37; flags non-decay."""
    qy = pot(y)
    w = w0
    for _ in range(60):
        z = y + w
        if pot(z) - qy <= _LOG_CUT:
            return z, True
        w *= 2.0
        if w > 1e18 * max(y, 1.0):
            break
    return y + w, False


def _seg_gauss_exp(pot: _Potential, ref: float, lo: float, hi: float) -> float:
    """int_lo^hi exp(Q(z) - ref) dz with fixed-order Gauss per segment."""
    nodes, wts = _GAUSS32
    segs_lo, segs_hi = [], []
    # doubling segment widths keep the peaked integrand resolved near lo
    width = max((hi - lo) / 2.0 ** 12, 1e-300)
    z = lo
    while z < hi:
        z2 = min(z + width, hi)
        segs_lo.append(z)
        segs_hi.append(z2)
        z = z2
        width *= 2.0
    lo_a = np.array(segs_lo)
    hi_a = np.array(segs_hi)
    mid = 0.5 * (lo_a + hi_a)
    halfw = 0.5 * (hi_a - lo_a)
    pts = mid[:, None] + halfw[:, None] * nodes[None, :]
    expo = np.minimum(pot(pts.ravel()).reshape(pts.shape) - ref, 700.0)
    vals = np.exp(expo)
    return float(((vals * wts[None, :]).sum(axis=1) * halfw).sum())


def _inner_tail(pot: _Potential, y: float) -> float:
    """Stable evaluation of exp(-Q(y)) * int_y^infinity exp(Q(z)) dz."""
    qv = abs(float(np.asarray(pot.q(y), dtype=float)))
    w0 = min(max(1.0 / (2.0 * qv + 1e-12), 1e-9 * max(y, 1.0)), 4.0 * max(y, 1.0))
    z_max, decayed = _decay_reach(pot, y, w0)
    if not decayed:
        return math.inf
    return _seg_gauss_exp(pot, pot(y), y, z_max)


def _inner_head(pot: _Potential, y: float) -> float:
    """Stable evaluation of exp(Q(y)) * int_1^y exp(-Q(z)) dz (swapped form)."""
    qy = pot(y)
    nodes, wts = _GAUSS32
    total = 0.0
    hi = y
    qv = abs(float(np.asarray(pot.q(y), dtype=float)))
    scale = min(max(1.0 / (2.0 * qv + 1e-12), 1e-9 * max(y, 1.0)), max(y - 1.0, 1e-300))
    width = min(max((y - 1.0) / 2.0 ** 12, 1e-300), scale / 8.0 + 1e-300)
    while hi > 1.0:
        lo = max(hi - width, 1.0)
        mid = 0.5 * (lo + hi)
        halfw = 0.5 * (hi - lo)
        pts = mid + halfw * nodes
        expo = np.minimum(qy - pot(pts), 700.0)
        total += float((np.exp(expo) * wts).sum() * halfw)
        if qy - pot(lo) <= _LOG_CUT:
            break
        hi = lo
        width *= 2.0
    return total


def _double_integral_ladder(
    pot: _Potential,
    *,
    swapped: bool,
    max_rungs: int = 22,
    conv_tol: float = 1e-3,
    div_tol: float = 0.05,
    min_rungs: int = 5,
) -> LadderTrace:
    """Outer ladder for the entrance double integral, inner tails pre-reduced."""
    inner = _inner_head if swapped else _inner_tail
    nodes, wts = _GAUSS24
    cutoffs, additions, partials = [], [], []
    total = 0.0
    lo = 1.0
    verdict = None
    note = ""
    for j in range(max_rungs):
        hi = 2.0 * lo
        ulo, uhi = math.log(lo), math.log(hi)
        umid, uhalf = 0.5 * (ulo + uhi), 0.5 * (uhi - ulo)
        val = 0.0
        for node, wt in zip(nodes, wts):
            y = math.exp(umid + uhalf * node)
            iv = inner(pot, y)
            if math.isinf(iv):
                return LadderTrace(
                    cutoffs + [hi], additions + [math.inf], partials + [math.inf],
                    IntegralVerdict.DIVERGES, 1.0,
                    "inner tail fails to decay: integral infinite",
                )
            val += wt * iv * y
        val *= uhalf
        total += val
        cutoffs.append(hi)
        additions.append(val)
        partials.append(total)
        if j + 1 >= min_rungs and total > 0:
            rel = val / total
            if rel < conv_tol:
                verdict = IntegralVerdict.CONVERGES
                note = f"saturated after {j + 1} doublings"
                break
            if rel > div_tol and val >= additions[-2] * (1 - 1e-12):
                verdict = IntegralVerdict.DIVERGES
                note = "outer additions not shrinking"
                break
        lo = hi
    last_rel = additions[-1] / partials[-1] if partials and partials[-1] > 0 else 0.0
    if verdict is None:
        tail = additions[-4:]
        ratios = [tail[i + 1] / tail[i] for i in range(len(tail) - 1) if tail[i] > 0]
        if last_rel > div_tol or (ratios and all(r >= 0.99 for r in ratios)):
            verdict = IntegralVerdict.DIVERGES
            note = "outer additions persist across the full ladder"
        else:
            verdict = IntegralVerdict.INCONCLUSIVE
            note = "saturation undecided at the ladder end"
    return LadderTrace(cutoffs, additions, partials, verdict, last_rel, note)


@dataclass
class H3Report:
    """Entrance-boundary verdict for a drifted Brownian motion."""

    verdict: H3Verdict
    branch: Optional[int]
    inv_drift_integral: LadderTrace
    double_integral: Optional[LadderTrace]
    diagnostics: dict = field(default_factory=dict)
    swapped: bool = False

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "branch": self.branch,
            "inv_drift_integral": self.inv_drift_integral.to_dict(),
            "double_integral": None if self.double_integral is None
            else self.double_integral.to_dict(),
            "diagnostics": {k: (float(v) if isinstance(v, (int, float)) else v)
                            for k, v in self.diagnostics.items()},
            "swapped": self.swapped,
        }


def _check_h2(q: Callable, x0: float) -> None:
    xs = np.geomspace(x0, x0 * 2.0 ** 20, 300)
    vals = np.asarray(q(xs), dtype=float)
    if np.any(vals >= 0):
        bad = xs[np.flatnonzero(vals >= 0)[0]]
        raise H2Violation(f"drift is not negative at x = {bad:.6g} >= x0 = {x0:.6g}")
    lo = min(x0, 1.0)
    xs0 = np.geomspace(lo * 1e-10, lo, 80)
    vals0 = np.asarray(q(xs0), dtype=float)
    blowing_up = float(vals0[0]) == float(np.max(vals0)) \
        and float(vals0[0]) > max(1e4, 10.0 * abs(float(vals0[-1])) + 10.0)
    if np.any(np.isposinf(vals0)) or blowing_up:
        raise H2Violation("drift blows up (to +infinity) near the origin")


def h3_check(
    q: Callable[[float], float],
    x0: float,
    *,
    swapped: bool = False,
    full: bool = False,
    probe_decades: float = 6.0,
    ladder_kwargs: Optional[dict] = None,
) -> H3Report:
    """Decide whether infinity is an entrance boundary for dX = q dt + dW.

    Three sufficient-condition branches are evaluated first from the tail
    behaviour of 1/|q| and the finite-difference derivative of q; when one
    fires it decides the verdict and the (slower) double integral is skipped
    unless ``full=True``.  Without a firing branch the Cauchy-saturation
    verdict of the double integral decides.
    """
    if x0 <= 0:
        raise ValueError("x0 must be positive")
    qv = _vectorize(q)
    _check_h2(qv, x0)

    inv_trace = _ladder_integral(lambda x: 1.0 / abs(float(qv(x))), x0,
                                 **(ladder_kwargs or {}))
    inv_verdict = inv_trace.verdict

    xs = np.geomspace(x0, x0 * 10.0 ** probe_decades, 400)
    h = 1e-4 * (1.0 + np.abs(xs))
    qp = (np.asarray(qv(xs + h)) - np.asarray(qv(xs - h))) / (2.0 * h)
    qx = np.asarray(qv(xs), dtype=float)
    ratio = qp / (qx * qx)
    tail = xs >= xs[len(xs) // 2]
    limsup_proxy = float(np.max(ratio[tail]))
    liminf_proxy = float(np.min(ratio[tail]))
    deriv_max = float(np.max(qp))
    q_max = float(np.max(qx))

    branch = None
    verdict = None
    margin = liminf_proxy + 2.0
    deriv_scale = float(np.max(np.abs(qp))) + 1.0
    if inv_verdict is IntegralVerdict.DIVERGES and limsup_proxy < 1e2:
        branch, verdict = 1, H3Verdict.FAILS
    elif inv_verdict is IntegralVerdict.CONVERGES and deriv_max <= 1e-7 * deriv_scale:
        branch, verdict = 3, H3Verdict.HOLDS
    elif (inv_verdict is IntegralVerdict.CONVERGES and q_max < 0
          and margin > 0.05):
        branch, verdict = 2, H3Verdict.HOLDS

    double = None
    if branch is None or full:
        pot = _Potential(qv)
        double = _double_integral_ladder(pot, swapped=swapped,
                                         **(ladder_kwargs or {}))
        if verdict is None:
            verdict = {
                IntegralVerdict.CONVERGES: H3Verdict.HOLDS,
                IntegralVerdict.DIVERGES: H3Verdict.FAILS,
                IntegralVerdict.INCONCLUSIVE: H3Verdict.INCONCLUSIVE,
            }[double.verdict]

    return H3Report(
        verdict=verdict,
        branch=branch,
        inv_drift_integral=inv_trace,
        double_integral=double,
        diagnostics={
            "limsup_qprime_over_q2": limsup_proxy,
            "liminf_qprime_over_q2": liminf_proxy,
            "liminf_margin_over_minus2": margin,
            "q_max_on_tail": q_max,
            "deriv_max_on_tail": deriv_max,
        },
        swapped=swapped,
    )


def diffusion_drifts(model: InteractionModel) -> tuple[Callable, Callable]:
    """Drifts of the height and mass diffusions derived from the interaction.

    q_height(y) = (f(y^2) - 1) / (2y) and q_mass(u) = f(2u) / (4u); both are
    singular at 0, which is the caller's concern.
    """
    f = model.f

    def q_height(y):
        y = np.asarray(y, dtype=float)
        out = (np.asarray(f(y * y), dtype=float) - 1.0) / (2.0 * y)
        return out if out.ndim else float(out)

    def q_mass(u):
        u = np.asarray(u, dtype=float)
        out = np.asarray(f(2.0 * u), dtype=float) / (4.0 * u)
        return out if out.ndim else float(out)

    return q_height, q_mass


# --------------------------------------------------------------------------
# Merged classification
# --------------------------------------------------------------------------

_ENTRANCE_TO_INTEGRAL = {
    EntranceVerdict.ENTRANCE: IntegralVerdict.CONVERGES,
    EntranceVerdict.NOT_ENTRANCE: IntegralVerdict.DIVERGES,
    EntranceVerdict.INCONCLUSIVE: IntegralVerdict.INCONCLUSIVE,
}

_H3_TO_INTEGRAL = {
    H3Verdict.HOLDS: IntegralVerdict.CONVERGES,
    H3Verdict.FAILS: IntegralVerdict.DIVERGES,
    H3Verdict.INCONCLUSIVE: IntegralVerdict.INCONCLUSIVE,
}


@dataclass
class ClassificationReport:
    lam: float
    mu: float
    height_verdict: Verdict
    mass_verdict: Verdict
    height_integral: IntegralReport
    mass_integral: IntegralReport
    series_height: Optional[SeriesDiagnostics]
    series_mass: Optional[SeriesDiagnostics]
    h3_height: Optional[H3Report]
    h3_mass: Optional[H3Report]
    provenance: dict

    def to_dict(self) -> dict:
        def opt(x):
            return None if x is None else x.to_dict()

        return {
            "lam": self.lam,
            "mu": self.mu,
            "height_verdict": self.height_verdict.value,
            "mass_verdict": self.mass_verdict.value,
            "height_integral": self.height_integral.to_dict(),
            "mass_integral": self.mass_integral.to_dict(),
            "series_height": opt(self.series_height),
            "series_mass": opt(self.series_mass),
            "h3_height": opt(self.h3_height),
            "h3_mass": opt(self.h3_mass),
            "provenance": self.provenance,
        }


def _resolve_target(
    integral: IntegralReport,
    corroborations: list[tuple[str, IntegralVerdict]],
) -> tuple[Verdict, dict]:
    primary = integral.verdict
    prov = {
        "source": integral.provenance,
        "routes": {name: v.value for name, v in corroborations},
    }
    if primary is IntegralVerdict.INCONCLUSIVE:
        prov["resolution"] = "primary route inconclusive"
        return Verdict.INCONCLUSIVE, prov
    disagree = [name for name, v in corroborations
                if v is not IntegralVerdict.INCONCLUSIVE and v is not primary]
    if disagree:
        prov["resolution"] = f"route disagreement: {', '.join(disagree)}"
        return Verdict.INCONCLUSIVE, prov
    prov["resolution"] = "agreement"
    if primary is IntegralVerdict.CONVERGES:
        return Verdict.FINITE_EXP_MOMENT, prov
    return Verdict.DIVERGES, prov


def classify(
    model: InteractionModel,
    lam: float,
    mu: float,
    *,
    n_trunc: int = 10_000,
    corroborate: bool = True,
) -> ClassificationReport:
    """Four-way height/mass classification with cross-route corroboration.

    The tail-integral route (closed form for built-in families) is the
    primary decider; the birth-death series route and the drifted-BM route
    corroborate.  A definite disagreement between routes downgrades the
    verdict to INCONCLUSIVE with full diagnostics; routes whose preconditions
    fail are recorded as skipped and do not veto.
    """
    model.require_a0()
    height_integral = integral_criterion(model, Target.HEIGHT)
    mass_integral = integral_criterion(model, Target.MASS)

    skipped: dict[str, str] = {}
    series_h = series_m = None
    h3_h = h3_m = None
    height_routes: list[tuple[str, IntegralVerdict]] = []
    mass_routes: list[tuple[str, IntegralVerdict]] = []
    if height_integral.closed_form is not None:
        height_routes.append(("integral-ladder", height_integral.numeric.verdict))
        mass_routes.append(("integral-ladder", mass_integral.numeric.verdict))

    if corroborate:
        if lam > 0:
            series_h = series_criterion(bd_rates(rate_sums(model, n_trunc), lam, mu),
                                        n_trunc)
            height_routes.append(("series", _ENTRANCE_TO_INTEGRAL[series_h.verdict]))
            try:
                sums1 = rate_sums_over_x(model, n_trunc)
                series_m = series_criterion(bd_rates(sums1, lam, mu), n_trunc)
                mass_routes.append(("series", _ENTRANCE_TO_INTEGRAL[series_m.verdict]))
            except Exception as exc:  # per-capita drift fails its check
                skipped["series_mass"] = f"{type(exc).__name__}: {exc}"
        else:
            skipped["series_height"] = "base birth rate is zero"
            skipped["series_mass"] = "base birth rate is zero"

        q_height, q_mass = diffusion_drifts(model)
        a0 = model.require_a0()
        try:
            h3_h = h3_check(q_height, max(math.sqrt(a0) * 1.05, 1e-3))
            height_routes.append(("h3", _H3_TO_INTEGRAL[h3_h.verdict]))
        except H2Violation as exc:
            skipped["h3_height"] = str(exc)
        try:
            h3_m = h3_check(q_mass, max(a0 / 2.0 * 1.05, 1e-3))
            mass_routes.append(("h3", _H3_TO_INTEGRAL[h3_m.verdict]))
        except H2Violation as exc:
            skipped["h3_mass"] = str(exc)

    height_verdict, hprov = _resolve_target(height_integral, height_routes)
    mass_verdict, mprov = _resolve_target(mass_integral, mass_routes)
    return ClassificationReport(
        lam=lam,
        mu=mu,
        height_verdict=height_verdict,
        mass_verdict=mass_verdict,
        height_integral=height_integral,
        mass_integral=mass_integral,
        series_height=series_h,
        series_mass=series_m,
        h3_height=h3_h,
        h3_mass=h3_m,
        provenance={"height": hprov, "mass": mprov, "skipped": skipped,
                    "family": model.family, "params": model.params},
    )

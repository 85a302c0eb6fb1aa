import numpy as np
import pytest

from popforest.interaction import build_model


def make_piecewise_linear(rng):
    """Random continuous piecewise-linear drift with f(0)=0.

    Slopes are bounded above, so the exact sublinearity constant is the
    largest slope; the tail slope is kept away from zero so the sign
    eventually stabilizes.
    """
    n_seg = int(rng.integers(2, 6))
    knots = np.sort(rng.uniform(0.5, 60.0, n_seg - 1))
    slopes = rng.uniform(-4.0, 2.0, n_seg)
    if abs(slopes[-1]) < 0.25:
        slopes[-1] = -1.0
    pts = np.concatenate(([0.0], knots))
    vals = np.concatenate(([0.0], np.cumsum(slopes[:-1] * np.diff(pts))))

    def f(x):
        arr = np.asarray(x, dtype=float)
        a = np.atleast_1d(arr)
        out = np.interp(a, pts, vals)
        beyond = a > pts[-1]
        out[beyond] = vals[-1] + slopes[-1] * (a[beyond] - pts[-1])
        return out if arr.ndim else float(out[0])

    theta = float(max(slopes.max(), 0.0))
    return f, theta, slopes, pts, vals


@pytest.fixture
def random_models():
    """Twenty random piecewise-linear models with exact theta supplied."""
    rng = np.random.default_rng(987654321)
    models = []
    for _ in range(20):
        f, theta, slopes, pts, _vals = make_piecewise_linear(rng)
        models.append(build_model(f, theta=theta, a0=float(pts[-1]) + 80.0,
                                  family="custom"))
    return models

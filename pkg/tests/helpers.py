"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np

from genbench.core.training import loss_gradient

GRAD_RTOL = 1e-4
GRAD_FLOOR = 1e-8
FD_STEP = 1e-5


def finite_difference_gradient(objective, params, batch, h=FD_STEP):
    """Central differences of the scalar objective over every parameter."""
    out = np.zeros(len(params))
    for i in range(len(params)):
        plus, minus = params.values.copy(), params.values.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = float(objective(params.with_values(plus).tensors(), batch).value)
        f_minus = float(objective(params.with_values(minus).tensors(), batch).value)
        out[i] = (f_plus - f_minus) / (2 * h)
    return out


def gradient_relative_error(objective, params, batch):
    """Largest |g - g_fd| / max(|g|, |g_fd|, floor) over parameters."""
    _, g = loss_gradient(objective, params, batch)
    g_fd = finite_difference_gradient(objective, params, batch)
    denom = np.maximum(np.maximum(np.abs(g), np.abs(g_fd)), GRAD_FLOOR)
    return float(np.max(np.abs(g - g_fd) / denom))


def randomized(params, seed, scale=0.5):
    """Same layout, non-degenerate values (zero output layers would hide bugs)."""
    rng = np.random.default_rng(seed)
    return params.with_values(scale * rng.standard_normal(len(params)))


def trapezoid(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))

"""Fixed-step explicit ODE integrators."""

from __future__ import annotations

from typing import Callable

import numpy as np

Field = Callable[[np.ndarray, float], np.ndarray]

ORDERS = {"euler": 1, "midpoint": 2, "rk4": 4}


class TrajectoryError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at integration step {step}")
        self.step = step


def _step(f: Field, x: np.ndarray, t: float, h: float, method: str) -> np.ndarray:
    if method == "euler":
        return x + h * f(x, t)
    if method == "midpoint":
        k1 = f(x, t)
        return x + h * f(x + 0.5 * h * k1, t + 0.5 * h)
    if method == "rk4":
        k1 = f(x, t)
        k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = f(x + h * k3, t + h)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    raise ValueError(f"unknown integrator {method!r}; choose from {sorted(ORDERS)}")


def integrate(f: Field, x0: np.ndarray, t0: float, t1: float, steps: int, method: str = "euler") -> np.ndarray:
    """Integrate dx/dt = f(x, t) from t0 to t1 (either direction) in ``steps`` equal steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if method not in ORDERS:
        raise ValueError(f"unknown integrator {method!r}; choose from {sorted(ORDERS)}")
    h = (t1 - t0) / steps
    x = np.array(x0, dtype=np.float64)
    for k in range(steps):
        x = _step(f, x, t0 + k * h, h, method)
        if not np.all(np.isfinite(x)):
            raise TrajectoryError(k)
    return x

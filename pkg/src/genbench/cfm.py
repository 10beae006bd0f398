"""Conditional flow matching on straight-line conditional paths.

Time runs from the standard-normal prior at t=0 to the data at t=1. The
network regresses the conditional velocity ``x1 - x0`` of the interpolant
``(1 - t) x0 + t x1 + sigma_min * eps``. Sampling integrates the learned
ODE forward; likelihoods integrate state and divergence jointly backwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from genbench.core import autodiff as ad
from genbench.core.mlp import MLPConfig, ParameterVector, init_params, mlp_forward
from genbench.core.ode import ORDERS, integrate
from genbench.core.training import Budget, TrainingDivergence, fit

LOG_2PI = float(np.log(2.0 * np.pi))
COUPLINGS = ("independent", "minibatch-ot")


@dataclass
class PathSamples:
    t: np.ndarray  # (n,)
    x_t: np.ndarray  # (n, d)
    u_target: np.ndarray  # (n, d)


@dataclass
class CFMModel:
    d: int
    hidden_width: int = 64
    depth: int = 3
    sigma_min: float = 1e-2
    coupling: str = "independent"
    solver: str = "euler"
    steps: int = 50
    params: ParameterVector | None = None
    loss_trace: list[float] = field(default_factory=list)

    family = "cfm"

    def __post_init__(self):
        if self.sigma_min < 0:
            raise ValueError("sigma_min must be non-negative")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}")
        if self.solver not in ORDERS:
            raise ValueError(f"solver must be one of {sorted(ORDERS)}")
        if self.params is None:
            self.params = init_params(self.network, np.random.default_rng(0))
        elif len(self.params) != self.network.n_params():
            raise ValueError("parameter vector does not match the network config")

    @property
    def network(self) -> MLPConfig:
        return MLPConfig(self.d, self.d, self.hidden_width, self.depth, time_embedding=True)

    def n_params(self) -> int:
        return self.network.n_params()

    def init_params(self, seed: int) -> ParameterVector:
        return init_params(self.network, np.random.default_rng(seed))

    def hyperparameters(self) -> dict:
        return {
            "d": self.d,
            "hidden_width": self.hidden_width,
            "depth": self.depth,
            "sigma_min": self.sigma_min,
            "coupling": self.coupling,
            "solver": self.solver,
            "steps": self.steps,
        }

    def with_params(self, params: ParameterVector, loss_trace: list[float] | None = None) -> CFMModel:
        return CFMModel(**self.hyperparameters(), params=params, loss_trace=list(loss_trace or []))

    def velocity(self, x: np.ndarray, t) -> np.ndarray:
        return mlp_forward(self.network, self.params, x, t=t)


def ot_pairing(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` minimising sum ||x0[i] - x1[perm[i]]||^2."""
    cost = ((x0[:, None, :] - x1[None, :, :]) ** 2).sum(-1)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


def cfm_make_pairs(
    x1: np.ndarray,
    x0: np.ndarray,
    t: np.ndarray,
    sigma_min: float = 0.0,
    noise: np.ndarray | None = None,
    coupling: str = "independent",
) -> PathSamples:
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x1.shape[0],))
    if x0.shape != x1.shape:
        raise ValueError(f"prior batch {x0.shape} and data batch {x1.shape} differ")
    if coupling == "minibatch-ot":
        x1 = x1[ot_pairing(x0, x1)]
    elif coupling != "independent":
        raise ValueError(f"unknown coupling {coupling!r}")
    x_t = (1.0 - t[:, None]) * x0 + t[:, None] * x1
    if sigma_min > 0:
        if noise is None:
            raise ValueError("noise draws required when sigma_min > 0")
        x_t = x_t + sigma_min * noise
    return PathSamples(np.array(t), x_t, x1 - x0)


def cfm_objective(model: CFMModel):
    net = model.network

    def objective(tensors, pairs: PathSamples):
        pred = mlp_forward(net, tensors, pairs.x_t, t=pairs.t)
        return ad.mean(ad.tsum(ad.square(pred - pairs.u_target), axis=1))

    return objective


def cfm_loss(model: CFMModel, pairs: PathSamples) -> float:
    value = float(cfm_objective(model)(model.params.tensors(), pairs).value)
    if not np.isfinite(value):
        raise TrainingDivergence(f"non-finite loss {value}", 0)
    return value


def _prepare(model: CFMModel):
    def prepare(batch, rng):
        n, d = batch.shape
        x0 = rng.standard_normal((n, d))
        t = rng.random(n)
        noise = rng.standard_normal((n, d))
        return cfm_make_pairs(batch, x0, t, model.sigma_min, noise, model.coupling)

    return prepare


def cfm_train(model: CFMModel, train, budget: Budget, seed: int) -> CFMModel:
    data = np.asarray(getattr(train, "samples", train), dtype=np.float64)
    result = fit(model.params, cfm_objective(model), _prepare(model), data, budget, seed)
    return model.with_params(result.params, result.loss_trace)


def cfm_sample(model: CFMModel, n: int, seed: int, steps: int | None = None, method: str | None = None) -> np.ndarray:
    x0 = np.random.default_rng(seed).standard_normal((n, model.d))
    return integrate(model.velocity, x0, 0.0, 1.0, steps or model.steps, method or model.solver)


def _quadratic_forms(field, x: np.ndarray, t: float, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Field value at ``x`` and v^T J v for each stacked probe set ``vectors`` (K, n, d)."""
    k, n, d = vectors.shape
    xt = ad.Tensor(np.tile(x, (k, 1)), requires_grad=True)
    out = field(xt, t)
    flat = vectors.reshape(k * n, d)
    (g,) = ad.grad(out, [xt], seed=flat)
    return out.value[:n], (g * flat).sum(axis=1).reshape(k, n)


def divergence_exact(field, x: np.ndarray, t: float) -> np.ndarray:
    """Jacobian trace of ``field(x_tensor, t)`` via one vector-Jacobian product per coordinate."""
    n, d = x.shape
    basis = np.repeat(np.eye(d)[:, None, :], n, axis=1)
    return _quadratic_forms(field, x, t, basis)[1].sum(axis=0)


def divergence_hutchinson(field, x: np.ndarray, t: float, probes: np.ndarray) -> np.ndarray:
    """Hutchinson estimate mean_k eps_k^T J eps_k, with ``probes`` of shape (K, n, d)."""
    return _quadratic_forms(field, x, t, probes)[1].mean(axis=0)


def log_prob_ode(
    field,
    x: np.ndarray,
    t_data: float,
    t_prior: float,
    steps: int,
    method: str = "rk4",
    n_probe: int | None = 16,
    seed: int = 0,
) -> np.ndarray:
    """log density at ``x`` of the pushforward of N(0, I) along dx/dt = field(x, t).

    Integrates the state and the divergence from ``t_data`` back to
    ``t_prior``; ``n_probe=None`` uses the exact trace. Rademacher probes
    are drawn once and held fixed along the trajectory.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, d = x.shape
    probes = None
    if n_probe is not None:
        if n_probe < 1:
            raise ValueError("n_probe must be >= 1")
        probes = np.random.default_rng(seed).choice([-1.0, 1.0], size=(n_probe, n, d))

    def augmented(state, t):
        xs = state[:, :d]
        if probes is None:
            v, forms = _quadratic_forms(field, xs, t, np.repeat(np.eye(d)[:, None, :], n, axis=1))
            div = forms.sum(axis=0)
        else:
            v, forms = _quadratic_forms(field, xs, t, probes)
            div = forms.mean(axis=0)
        return np.concatenate([v, div[:, None]], axis=1)

    start = np.concatenate([x, np.zeros((n, 1))], axis=1)
    end = integrate(augmented, start, t_data, t_prior, steps, method)
    z, acc = end[:, :d], end[:, d]
    # d/dt log p_t(x(t)) = -div, so log p_data(x) = log q(z) + integral of div from t_data to t_prior
    log_q = -0.5 * (z**2).sum(axis=1) - 0.5 * d * LOG_2PI
    return log_q + acc


def cfm_log_prob(model: CFMModel, x: np.ndarray, n_probe: int | None = 16, seed: int = 0, steps: int = 100, method: str = "rk4") -> np.ndarray:
    net, params = model.network, model.params.tensors()

    def field(xt, t):
        return mlp_forward(net, params, xt, t=t)

    return log_prob_ode(field, x, 1.0, 0.0, steps, method, n_probe, seed)

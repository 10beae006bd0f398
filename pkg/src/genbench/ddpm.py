"""Denoising diffusion probabilistic model with noise prediction.

Discrete steps are indexed 1..T. The network sees time as ``t / T``. Besides
the ancestral sampler there is a probability-flow ODE sampler on the
continuous interpolation of the schedule: log(alpha_bar) is linear between
the knots ``s = i / T`` (with alpha_bar(0) = 1), which makes the time
dilation ``lambda(s) = -0.5 d/ds log alpha_bar(s)`` piecewise constant and
gives the linear-drift SDE ``dx = -lambda x ds + sqrt(2 lambda) dB`` the
same marginals as the discrete chain at every knot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from genbench.core import autodiff as ad
from genbench.core.mlp import MLPConfig, ParameterVector, init_params, mlp_forward
from genbench.core.ode import ORDERS, TrajectoryError, integrate
from genbench.core.training import Budget, TrainingDivergence, fit
from genbench.cfm import log_prob_ode

VARIANCES = ("beta", "posterior")


@dataclass
class NoiseSchedule:
    betas: np.ndarray
    strict: bool = True  # require a near-normal terminal marginal

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64).ravel()
        b = self.betas
        if b.size < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValueError("betas must be non-decreasing")
        if self.strict and self.alpha_bar[-1] > 1e-2:
            raise ValueError(f"terminal alpha_bar {self.alpha_bar[-1]:.3g} exceeds 1e-2")

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2, strict: bool = True) -> NoiseSchedule:
        return cls(np.linspace(beta_start, beta_end, T), strict)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def alpha_bar_at(self, t) -> np.ndarray:
        """alpha_bar for 1-based step indices; index 0 maps to 1."""
        t = np.asarray(t)
        return np.concatenate([[1.0], self.alpha_bar])[t]

    # continuous interpolation ------------------------------------------------

    def log_alpha_bar_continuous(self, s) -> np.ndarray:
        knots = np.concatenate([[0.0], np.cumsum(np.log(self.alphas))])
        return np.interp(np.asarray(s, dtype=np.float64) * self.T, np.arange(self.T + 1), knots)

    def dilation(self, s) -> np.ndarray:
        """lambda(s) on the piecewise-linear log(alpha_bar); left-continuous at knots."""
        s = np.asarray(s, dtype=np.float64)
        i = np.clip(np.ceil(s * self.T - 1e-9).astype(int), 1, self.T)
        return -0.5 * self.T * np.log(self.alphas[i - 1])


@dataclass
class DDPMModel:
    d: int
    hidden_width: int = 64
    depth: int = 3
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    variance: str = "beta"
    params: ParameterVector | None = None
    loss_trace: list[float] = field(default_factory=list)

    family = "ddpm"

    def __post_init__(self):
        if self.variance not in VARIANCES:
            raise ValueError(f"variance must be one of {VARIANCES}")
        self.schedule = NoiseSchedule.linear(self.T, self.beta_start, self.beta_end, strict=False)
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
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "variance": self.variance,
        }

    def with_params(self, params: ParameterVector, loss_trace: list[float] | None = None) -> DDPMModel:
        return DDPMModel(**self.hyperparameters(), params=params, loss_trace=list(loss_trace or []))

    def predict_noise(self, x, s, tensors=None):
        """Noise prediction at continuous time ``s`` in (0, 1] (``s = t / T`` on the knots)."""
        return mlp_forward(self.network, self.params.tensors() if tensors is None else tensors, x, t=s)


def q_sample(x0: np.ndarray, t, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.T):
        raise IndexError(f"step index out of range 1..{schedule.T}")
    ab = schedule.alpha_bar_at(t_arr)
    x0 = np.asarray(x0, dtype=np.float64)
    if ab.ndim == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


@dataclass
class NoisedBatch:
    x_t: np.ndarray
    s: np.ndarray
    noise: np.ndarray


def ddpm_make_batch(model: DDPMModel, x0: np.ndarray, t: np.ndarray, noise: np.ndarray) -> NoisedBatch:
    return NoisedBatch(q_sample(x0, t, noise, model.schedule), np.asarray(t) / model.schedule.T, noise)


def ddpm_objective(model: DDPMModel):
    net = model.network

    def objective(tensors, batch: NoisedBatch):
        pred = mlp_forward(net, tensors, batch.x_t, t=batch.s)
        return ad.mean(ad.tsum(ad.square(pred - batch.noise), axis=1))

    return objective


def _prepare(model: DDPMModel):
    def prepare(batch, rng):
        n, d = batch.shape
        t = rng.integers(1, model.schedule.T + 1, size=n)
        noise = rng.standard_normal((n, d))
        return ddpm_make_batch(model, batch, t, noise)

    return prepare


def ddpm_loss(model: DDPMModel, batch: np.ndarray, seed: int) -> float:
    """Monte-Carlo noise-prediction loss of ``batch`` with (t, noise) drawn from ``seed``."""
    nb = _prepare(model)(np.asarray(batch, dtype=np.float64), np.random.default_rng(seed))
    value = float(ddpm_objective(model)(model.params.tensors(), nb).value)
    if not np.isfinite(value):
        raise TrainingDivergence(f"non-finite loss {value}", 0)
    return value


def ddpm_train(model: DDPMModel, train, budget: Budget, seed: int) -> DDPMModel:
    data = np.asarray(getattr(train, "samples", train), dtype=np.float64)
    result = fit(model.params, ddpm_objective(model), _prepare(model), data, budget, seed)
    return model.with_params(result.params, result.loss_trace)


def ancestral_sigma(schedule: NoiseSchedule, t: int, variance: str = "beta") -> float:
    beta = schedule.betas[t - 1]
    if variance == "beta":
        return float(np.sqrt(beta))
    ab_prev = schedule.alpha_bar_at(t - 1)
    return float(np.sqrt(beta * (1.0 - ab_prev) / (1.0 - schedule.alpha_bar_at(t))))


def ddpm_sample(model: DDPMModel, n: int, seed: int) -> np.ndarray:
    """Ancestral sampling from x_T ~ N(0, I) down to t = 1 (no noise on the last step)."""
    rng = np.random.default_rng(seed)
    sched = model.schedule
    x = rng.standard_normal((n, model.d))
    tensors = model.params.tensors()
    T = sched.T
    for t in range(T, 0, -1):
        beta = sched.betas[t - 1]
        ab = sched.alpha_bar_at(t)
        eps = model.predict_noise(x, t / T, tensors)
        x = (x - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(1.0 - beta)
        if t > 1:
            x = x + ancestral_sigma(sched, t, model.variance) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise TrajectoryError(T - t)
    return x


def pf_ode_field(model: DDPMModel, tensors=None):
    """Right-hand side -lambda(s) [x + score(x, s)] with score = -eps / sqrt(1 - alpha_bar(s))."""
    sched = model.schedule
    tensors = model.params.tensors() if tensors is None else tensors

    def field(x, s):
        lam = float(sched.dilation(s))
        sigma = float(np.sqrt(-np.expm1(sched.log_alpha_bar_continuous(s))))
        eps = model.predict_noise(x, s, tensors)
        return -lam * (x - eps / sigma)

    return field


def ddpm_pf_ode_sample(model: DDPMModel, n: int, steps: int = 100, seed: int = 0, method: str = "rk4") -> np.ndarray:
    """Deterministic sampler: integrate the probability-flow ODE from s=1 to s=1/T, then denoise once."""
    if method not in ORDERS:
        raise ValueError(f"unknown integrator {method!r}")
    x = np.random.default_rng(seed).standard_normal((n, model.d))
    s_end = 1.0 / model.schedule.T
    x = integrate(pf_ode_field(model), x, 1.0, s_end, steps, method)
    beta1 = model.schedule.betas[0]
    eps = model.predict_noise(x, s_end)
    return (x - np.sqrt(beta1) * eps) / np.sqrt(1.0 - beta1)


def ddpm_log_prob(model: DDPMModel, x: np.ndarray, n_probe: int | None = 16, seed: int = 0, steps: int = 100, method: str = "rk4") -> np.ndarray:
    """Probability-flow log density of the slightly noised marginal at s = 1/T."""
    return log_prob_ode(pf_ode_field(model), x, 1.0 / model.schedule.T, 1.0, steps, method, n_probe, seed)

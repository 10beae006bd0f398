"""Coupling normalizing flow with rational-quadratic spline transforms.

The flow ``f`` maps data to a standard-normal latent. Each coupling layer
splits the coordinates into ``[0, ceil(d/2))`` and the rest, transforms one
block with a spline whose parameters come from a conditioner network fed
the other block, and alternates roles between layers. For ``d == 1`` there
is nothing to condition on, so each layer owns a global set of spline
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from genbench.core import autodiff as ad
from genbench.core.mlp import MLPConfig, ParameterVector, init_params, mlp_forward
from genbench.core.training import Budget, fit
from genbench.flows.spline import (
    DEFAULT_BINS,
    DEFAULT_BOUND,
    SplineParams,
    n_raw_params,
    rq_spline_forward,
    rq_spline_inverse,
)

LOG_2PI = float(np.log(2.0 * np.pi))


class FlowError(FloatingPointError):
    def __init__(self, layer: int, direction: str):
        super().__init__(f"non-finite values after coupling layer {layer} ({direction})")
        self.layer = layer


@dataclass
class NSModel:
    d: int
    n_layers: int = 8
    bins: int = DEFAULT_BINS
    bound: float = DEFAULT_BOUND
    hidden_width: int = 64
    depth: int = 2
    params: ParameterVector | None = None
    loss_trace: list[float] = field(default_factory=list)

    family = "ns"

    def __post_init__(self):
        if self.d < 1 or self.n_layers < 1:
            raise ValueError("d and n_layers must be positive")
        if self.bins < 2:
            raise ValueError("at least two spline bins are required")
        if self.params is None:
            self.params = self.init_params(0)
        elif len(self.params) != self.n_params():
            raise ValueError(f"parameter vector has {len(self.params)} entries, model needs {self.n_params()}")

    # -- structure ---------------------------------------------------------

    def blocks(self, layer: int) -> tuple[slice, slice]:
        """(conditioning block, transformed block) of a layer."""
        half = (self.d + 1) // 2
        first, rest = slice(0, half), slice(half, self.d)
        return (first, rest) if layer % 2 == 0 else (rest, first)

    def _width(self, s: slice) -> int:
        return len(range(*s.indices(self.d)))

    def conditioner(self, layer: int) -> MLPConfig | None:
        if self.d == 1:
            return None
        cond, trans = self.blocks(layer)
        return MLPConfig(
            input_dim=self._width(cond),
            output_dim=self._width(trans) * n_raw_params(self.bins),
            hidden_width=self.hidden_width,
            depth=self.depth,
        )

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        for layer in range(self.n_layers):
            cfg = self.conditioner(layer)
            if cfg is None:
                out.append((f"layer{layer}.spline", (1, n_raw_params(self.bins))))
            else:
                out.extend(cfg.layout(f"layer{layer}."))
        return out

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())

    def init_params(self, seed: int) -> ParameterVector:
        """Random hidden layers; zero output layers so every spline starts as the identity."""
        rng = np.random.default_rng(seed)
        parts = []
        for layer in range(self.n_layers):
            cfg = self.conditioner(layer)
            if cfg is None:
                parts.append(ParameterVector(np.zeros(n_raw_params(self.bins)), [(f"layer{layer}.spline", (1, n_raw_params(self.bins)))]))
            else:
                parts.append(init_params(cfg, rng, prefix=f"layer{layer}.", zero_last=True))
        return ParameterVector.concatenate(parts)

    def hyperparameters(self) -> dict:
        return {
            "d": self.d,
            "n_layers": self.n_layers,
            "bins": self.bins,
            "bound": self.bound,
            "hidden_width": self.hidden_width,
            "depth": self.depth,
        }

    def with_params(self, params: ParameterVector, loss_trace: list[float] | None = None) -> NSModel:
        return NSModel(**self.hyperparameters(), params=params, loss_trace=list(loss_trace or []))

    # -- transforms --------------------------------------------------------

    def _spline_params(self, tensors: dict, layer: int, cond_input, n: int) -> SplineParams:
        p = n_raw_params(self.bins)
        cfg = self.conditioner(layer)
        if cfg is None:
            raw = ad.add(tensors[f"layer{layer}.spline"], np.zeros((n, 1, p)))
        else:
            out = mlp_forward(cfg, tensors, cond_input, prefix=f"layer{layer}.")
            raw = ad.reshape(out, (n, cfg.output_dim // p, p))
        return SplineParams.from_unconstrained(raw, self.bins, self.bound)

    def forward(self, x, tensors: dict | None = None):
        """Data -> latent. Returns (z, summed log|det J|) as Tensors."""
        tensors = self.params.tensors() if tensors is None else tensors
        h = ad.as_tensor(x)
        n = h.shape[0]
        total = ad.Tensor(np.zeros(n))
        for layer in range(self.n_layers):
            cond, trans = self.blocks(layer)
            sp = self._spline_params(tensors, layer, h[:, cond], n)
            y, ld = rq_spline_forward(h[:, trans], sp)
            y = ad.as_tensor(y)
            h = ad.concat([h[:, cond], y], axis=1) if cond.start == 0 else ad.concat([y, h[:, cond]], axis=1)
            total = total + ad.tsum(ld, axis=1)
            if not (np.all(np.isfinite(h.value)) and np.all(np.isfinite(total.value))):
                raise FlowError(layer, "forward")
        return h, total

    def inverse(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Latent -> data. Returns (x, summed log|det| of the inverse map)."""
        tensors = self.params.tensors()
        h = np.array(z, dtype=np.float64)
        n = h.shape[0]
        total = np.zeros(n)
        for layer in reversed(range(self.n_layers)):
            cond, trans = self.blocks(layer)
            sp = self._spline_params(tensors, layer, h[:, cond], n)
            x_t, ld = rq_spline_inverse(h[:, trans], sp)
            h[:, trans] = x_t
            total += ld.sum(axis=1)
            if not np.all(np.isfinite(h)):
                raise FlowError(layer, "inverse")
        return h, total


def _std_normal_logpdf(z):
    d = z.shape[1]
    return -0.5 * ad.tsum(ad.square(z), axis=1) - 0.5 * d * LOG_2PI


def ns_log_prob(model: NSModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.d:
        raise ValueError(f"expected {model.d} columns, got {x.shape[1]}")
    z, logdet = model.forward(x)
    return (_std_normal_logpdf(z) + logdet).value


def ns_nll_objective(model: NSModel):
    """Mean negative log-likelihood of a batch, as a differentiable objective."""

    def objective(tensors, batch):
        z, logdet = model.forward(batch, tensors)
        return -ad.mean(_std_normal_logpdf(z) + logdet)

    return objective


def ns_train(model: NSModel, train: np.ndarray, budget: Budget, seed: int) -> NSModel:
    data = np.asarray(getattr(train, "samples", train), dtype=np.float64)
    result = fit(model.params, ns_nll_objective(model), lambda batch, rng: batch, data, budget, seed)
    return model.with_params(result.params, result.loss_trace)


def ns_sample(model: NSModel, n: int, seed: int) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal((n, model.d))
    x, _ = model.inverse(z)
    return x

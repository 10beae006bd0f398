"""Gradient evaluation and the shared training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict
from typing import Any, Callable

import numpy as np

from genbench.core import autodiff as ad
from genbench.core.mlp import ParameterVector
from genbench.core.optim import OptimizerState, adam_step

log = logging.getLogger(__name__)

# objective(tensors, batch) -> scalar Tensor; batch is whatever prepare() returned
Objective = Callable[[dict, Any], ad.Tensor]
Prepare = Callable[[np.ndarray, np.random.Generator], Any]


class TrainingDivergence(FloatingPointError):
    def __init__(self, message: str, batch_index: int):
        super().__init__(f"{message} (batch {batch_index})")
        self.batch_index = batch_index


@dataclass
class Budget:
    """Training budget. ``steps`` bounds optimizer updates; ``seconds`` adds a wall-clock cap."""

    steps: int | None = 10_000
    batch_size: int = 256
    lr: float = 1e-3
    seconds: float | None = None

    def __post_init__(self):
        if self.steps is None and self.seconds is None:
            raise ValueError("budget needs steps, seconds, or both")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: ParameterVector
    loss_trace: list[float] = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0


def loss_gradient(objective: Objective, params: ParameterVector, batch: Any, batch_index: int = 0) -> tuple[float, np.ndarray]:
    """Mean batch loss and its exact gradient with respect to ``params``."""
    leaves = params.leaves()
    loss = objective(leaves, batch)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingDivergence(f"non-finite loss {value}", batch_index)
    names = [name for name, _ in params.layout]
    grads = ad.grad(loss, [leaves[n] for n in names]) if loss.requires_grad else [np.zeros(leaves[n].shape) for n in names]
    return value, params.flatten_grads(dict(zip(names, grads)))


def fit(params: ParameterVector, objective: Objective, prepare: Prepare, data: np.ndarray, budget: Budget, seed: int) -> TrainResult:
    """Minimise ``objective`` with Adam over minibatches of ``data``."""
    rng = np.random.default_rng(seed)
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    state = OptimizerState.zeros(len(params), lr=budget.lr)
    current = params.copy()
    trace: list[float] = []
    start = time.perf_counter()
    step = 0
    while budget.steps is None or step < budget.steps:
        if budget.seconds is not None and time.perf_counter() - start >= budget.seconds:
            break
        rows = rng.integers(0, n, size=budget.batch_size)
        batch = prepare(data[rows], rng)
        value, g = loss_gradient(objective, current, batch, batch_index=step)
        try:
            new_values, state = adam_step(state, current.values, g)
        except FloatingPointError as exc:
            raise TrainingDivergence(str(exc), step) from exc
        current = current.with_values(new_values)
        trace.append(value)
        step += 1
        if step % 2000 == 0:
            log.debug("step %d loss %.5f", step, value)
    return TrainResult(current, trace, step, time.perf_counter() - start)

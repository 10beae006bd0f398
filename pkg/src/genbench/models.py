"""Uniform entry points over the three model families."""

from __future__ import annotations

import numpy as np

from genbench.cfm import CFMModel, cfm_sample, cfm_train
from genbench.core.training import Budget
from genbench.ddpm import DDPMModel, ddpm_sample, ddpm_train
from genbench.flows.ns import NSModel, ns_sample, ns_train

FAMILIES = {"ns": NSModel, "cfm": CFMModel, "ddpm": DDPMModel}
_TRAIN = {"ns": ns_train, "cfm": cfm_train, "ddpm": ddpm_train}
_SAMPLE = {"ns": ns_sample, "cfm": cfm_sample, "ddpm": ddpm_sample}

# Desk-scale defaults; CFM and DDPM share the backbone so their capacity matches.
DEFAULT_HYPERPARAMETERS = {
    "ns": {"n_layers": 8, "bins": 8, "bound": 3.0, "hidden_width": 64, "depth": 2},
    "cfm": {"hidden_width": 64, "depth": 3, "sigma_min": 1e-2, "coupling": "independent", "solver": "euler", "steps": 50},
    "ddpm": {"hidden_width": 64, "depth": 3, "T": 1000, "beta_start": 1e-4, "beta_end": 2e-2, "variance": "beta"},
}


def _family(name: str) -> str:
    if name not in FAMILIES:
        raise ValueError(f"unknown model family {name!r}; choose from {sorted(FAMILIES)}")
    return name


def build_model(family: str, d: int, seed: int = 0, **overrides):
    family = _family(family)
    hp = dict(DEFAULT_HYPERPARAMETERS[family])
    unknown = set(overrides) - set(hp)
    if unknown:
        raise ValueError(f"unknown {family} hyperparameters: {sorted(unknown)}")
    hp.update(overrides)
    model = FAMILIES[family](d=d, **hp)
    return model.with_params(model.init_params(seed))


def train_model(model, data: np.ndarray, budget: Budget, seed: int):
    return _TRAIN[_family(model.family)](model, data, budget, seed)


def sample_model(model, n: int, seed: int) -> np.ndarray:
    return _SAMPLE[_family(model.family)](model, n, seed)


def sampler_label(model) -> str:
    if model.family == "ns":
        return f"rq-inverse-{model.n_layers}"
    if model.family == "cfm":
        return f"{model.solver}-{model.steps}"
    return f"ancestral-{model.T}"

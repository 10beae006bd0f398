"""Experiment configuration: flat ``key = <json>`` text files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from genbench.core.training import Budget
from genbench.models import DEFAULT_HYPERPARAMETERS

KINDS = {
    "gmm-dim-sweep": ("fig1a", "d"),
    "gmm-trainsize": ("fig1b", "n_samples"),
    "gmm-asymmetry": ("fig2", "true_delta_f"),
    "gmm-timing": ("fig3a", "d"),
    "gmm-params": ("fig3b", "d"),
    "dihedral-residues": ("fig4a", "residue"),
    "dihedral-trainsize": ("fig4b", "n_samples"),
    "hp-sweep": ("fig6", "hp_value"),
}

HP_SWEEP_PARAMETER = {"ns": "n_layers", "cfm": "hidden_width", "ddpm": "hidden_width"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    name: str = ""
    models: list[str] = field(default_factory=lambda: ["ns", "cfm", "ddpm"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    # data
    dims: list[int] = field(default_factory=lambda: [50])
    n_modes: int = 4
    weights: list[float] | None = None  # uniform when unset
    n_samples: list[int] = field(default_factory=lambda: [100_000])
    delta_fs: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5])
    half_width: float = 8.0
    means_seed: int = 1234
    test_fraction: float = 0.1
    dihedral_path: str | None = None
    residues: list[int] = field(default_factory=lambda: list(range(1, 10)))
    residue: int = 5
    # training
    steps: int | None = 10_000
    batch_size: int = 256
    lr: float = 1e-3
    seconds: float | None = None
    hyperparameters: dict = field(default_factory=dict)
    hp_values: dict = field(default_factory=dict)
    # evaluation
    n_eval: int = 10_000
    bins: list[int] = field(default_factory=lambda: [50, 50])
    epsilon: float = 1e-10
    cutoff: float = 0.0374
    beta: float = 1.0
    timing_n: int = 1000
    timing_repeats: int = 5
    out_dir: str = "results"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {sorted(KINDS)}")
        if not self.name:
            self.name = self.kind
        for key in ("models", "seeds", "dims", "n_samples", "delta_fs", "residues"):
            if not getattr(self, key):
                raise ConfigError(f"{key} must be a non-empty list")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for m in self.models:
            if m not in DEFAULT_HYPERPARAMETERS:
                raise ConfigError(f"unknown model {m!r}")
        for m, hp in self.hyperparameters.items():
            unknown = set(hp) - set(DEFAULT_HYPERPARAMETERS.get(m, {}))
            if unknown:
                raise ConfigError(f"unknown {m} hyperparameters {sorted(unknown)}")
        if self.kind == "hp-sweep":
            for m in self.models:
                if not self.hp_values.get(m):
                    raise ConfigError(f"hp-sweep needs a non-empty hp_values list for {m}")
        if self.weights is not None and len(self.weights) != self.n_modes:
            raise ConfigError(f"{len(self.weights)} weights for {self.n_modes} modes")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        self.budget  # validates

    @property
    def figure(self) -> str:
        return KINDS[self.kind][0]

    @property
    def sweep_name(self) -> str:
        if self.kind == "hp-sweep":
            return "hp_value"
        return KINDS[self.kind][1]

    @property
    def budget(self) -> Budget:
        try:
            return Budget(steps=self.steps, batch_size=self.batch_size, lr=self.lr, seconds=self.seconds)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_hyperparameters(self, family: str) -> dict:
        return dict(self.hyperparameters.get(family, {}))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value  # bare strings
    return out


def make_config(values: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "kind" not in values:
        raise ConfigError("config must set 'kind'")
    return ExperimentConfig(**values)


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    values.update(overrides or {})
    return make_config(values)

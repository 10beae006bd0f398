"""Checkpoint directories: a plain-text manifest plus little-endian float32 parameters.

Layout of ``<dir>/``::

    manifest.txt   one ``key = <json>`` line per field
    params.f32     parameter values in layout order
    loss.txt       training loss trace, one value per line
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from genbench.core.mlp import ParameterVector
from genbench.datasets import StandardizationStats, destandardize
from genbench.models import FAMILIES, sample_model

MANIFEST = "manifest.txt"
PARAMS = "params.f32"
LOSS = "loss.txt"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_digest(family: str, hyperparameters: dict) -> str:
    blob = json.dumps({"family": family, **hyperparameters}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def round_to_storage(params: ParameterVector) -> ParameterVector:
    """Parameters exactly as they will read back from disk."""
    return params.with_values(params.values.astype("<f4").astype(np.float64))


@dataclass
class ModelCheckpoint:
    model: object
    stats: StandardizationStats | None = None
    angular: list[bool] = field(default_factory=list)
    training: dict = field(default_factory=dict)

    @property
    def family(self) -> str:
        return self.model.family

    def sample(self, n: int, seed: int) -> np.ndarray:
        """Samples in data units."""
        z = sample_model(self.model, n, seed)
        if self.stats is None:
            return z
        return destandardize(z, self.stats, self.angular or None).samples

    def manifest(self) -> dict:
        hp = self.model.hyperparameters()
        return {
            "format": FORMAT_VERSION,
            "family": self.family,
            "config_digest": config_digest(self.family, hp),
            "hyperparameters": hp,
            "n_params": len(self.model.params),
            "layout": [[name, list(shape)] for name, shape in self.model.params.layout],
            "standardization": None if self.stats is None else self.stats.to_dict(),
            "angular": list(self.angular),
            "training": self.training,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        lines = [f"{key} = {json.dumps(value, sort_keys=True)}" for key, value in self.manifest().items()]
        (path / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
        (path / PARAMS).write_bytes(self.model.params.values.astype("<f4").tobytes())
        (path / LOSS).write_text("".join(f"{v!r}\n" for v in self.model.loss_trace), encoding="utf-8")
        return path


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    out = {}
    try:
        text = (path / MANIFEST).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CheckpointError(f"no manifest in {path}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{path / MANIFEST}:{lineno}: expected 'key = value'")
        out[key.strip()] = json.loads(value)
    return out


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    path = Path(path)
    man = read_manifest(path)
    family = man.get("family")
    if family not in FAMILIES:
        raise CheckpointError(f"unknown family {family!r} in {path}")
    values = np.frombuffer((path / PARAMS).read_bytes(), dtype="<f4").astype(np.float64)
    layout = [(name, tuple(shape)) for name, shape in man["layout"]]
    params = ParameterVector(values, layout)
    if config_digest(family, man["hyperparameters"]) != man["config_digest"]:
        raise CheckpointError(f"config digest mismatch in {path}")
    loss = []
    if (path / LOSS).exists():
        loss = [float(v) for v in (path / LOSS).read_text(encoding="utf-8").split()]
    model = FAMILIES[family](**man["hyperparameters"], params=params, loss_trace=loss)
    stats = None if man.get("standardization") is None else StandardizationStats(**man["standardization"])
    return ModelCheckpoint(model, stats, list(man.get("angular", [])), man.get("training", {}))

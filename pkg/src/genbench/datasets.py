"""Gaussian-mixture generators, dihedral ingestion, splitting and standardization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DIHEDRAL_COLUMNS = [f"{name}{i}" for i in range(1, 10) for name in ("phi", "psi")]


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path}:" if path else ""
        where += f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


@dataclass
class GMMSpec:
    means: np.ndarray  # (n_modes, d)
    weights: np.ndarray  # (n_modes,)
    scale: float = 1.0  # isotropic standard deviation
    seed: int = 0

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.means.shape[0] == 0 or self.means.shape[1] == 0:
            raise ValueError("GMM needs at least one mode of positive dimension")
        if self.weights.shape[0] != self.means.shape[0]:
            raise ValueError(f"{self.weights.shape[0]} weights for {self.means.shape[0]} modes")
        if np.any(self.weights <= 0) or np.any(self.weights > 1):
            raise ValueError("mode weights must lie in (0, 1]")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mode weights sum to {self.weights.sum()!r}, not 1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_modes(self) -> int:
        return self.means.shape[0]

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "weights": self.weights.tolist(),
            "scale": self.scale,
            "seed": self.seed,
        }


@dataclass
class Dataset:
    samples: np.ndarray
    columns: list[str] = field(default_factory=list)
    angular: list[bool] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    labels: np.ndarray | None = None  # generation-time mode labels, when known

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be an n x d matrix")
        d = self.samples.shape[1]
        if not self.columns:
            self.columns = [f"x{i}" for i in range(d)]
        if not self.angular:
            self.angular = [False] * d
        if len(self.columns) != d or len(self.angular) != d:
            raise ValueError("column metadata does not match sample width")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("dataset contains non-finite entries")
        ang = np.asarray(self.angular, dtype=bool)
        if ang.any():
            block = self.samples[:, ang]
            if np.any(block < -180.0) or np.any(block >= 180.0):
                raise ValueError("angular columns must lie in [-180, 180)")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def subset(self, rows: np.ndarray) -> Dataset:
        return Dataset(
            self.samples[rows],
            list(self.columns),
            list(self.angular),
            dict(self.meta),
            None if self.labels is None else self.labels[rows],
        )

    def select_columns(self, cols: list[int]) -> Dataset:
        return Dataset(
            self.samples[:, cols],
            [self.columns[c] for c in cols],
            [self.angular[c] for c in cols],
            dict(self.meta),
            self.labels,
        )


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std <= 0):
            raise ValueError("standard deviations must be positive")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


# -- generation ------------------------------------------------------------

def random_mode_means(
    dim: int,
    n_modes: int,
    half_width: float = 8.0,
    seed: int = 0,
    min_separation: float = 6.0,
    max_tries: int = 10_000,
) -> np.ndarray:
    """Uniform means in [-half_width, half_width]^dim, redrawn until pairwise distances exceed ``min_separation``."""
    if dim < 1 or n_modes < 1:
        raise ValueError("dim and n_modes must be positive")
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        means = rng.uniform(-half_width, half_width, size=(n_modes, dim))
        if n_modes == 1 or _min_pairwise_distance(means) > min_separation:
            return means
    raise RuntimeError(f"no separated draw of {n_modes} means in {max_tries} tries")


def _min_pairwise_distance(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    return float(dist[np.triu_indices(points.shape[0], 1)].min())


def weights_for_delta_f(delta_f: float) -> np.ndarray:
    """Two-mode weights (minor, major) whose log ratio major/minor is ``delta_f`` at beta=1."""
    minor = 1.0 / (1.0 + np.exp(delta_f))
    return np.array([minor, 1.0 - minor])


def gen_gmm(spec: GMMSpec, n: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed)
    labels = rng.choice(spec.n_modes, size=n, p=spec.weights)
    samples = spec.means[labels] + spec.scale * rng.standard_normal((n, spec.dim))
    meta = {"generator": "gmm", "seed": spec.seed, "n": n, "d": spec.dim, "spec": spec.to_dict()}
    return Dataset(samples, meta=meta, labels=labels)


def wrap_degrees(values: np.ndarray) -> np.ndarray:
    """Map angles into [-180, 180); values already in range are left bit-identical."""
    values = np.asarray(values, dtype=np.float64)
    outside = (values < -180.0) | (values >= 180.0)
    wrapped = np.mod(values + 180.0, 360.0) - 180.0
    return np.where(outside, wrapped, values)


def dihedral_surrogate(n: int, seed: int = 0) -> Dataset:
    """Von Mises mixture stand-in for a 9-residue helical peptide trajectory.

    Each frame has a chain handedness (left/right helix). Residues flip
    away from the chain handedness independently, more often at the chain
    ends, and exterior residues are broader and visit a bridge region.
    """
    rng = np.random.default_rng(seed)
    centers = {"L": (-57.0, -47.0), "R": (57.0, 47.0), "bridge": (-80.0, 75.0)}
    flip = np.array([0.30, 0.15, 0.08, 0.05, 0.04, 0.05, 0.08, 0.15, 0.30])
    bridge = np.array([0.12, 0.05, 0.02, 0.0, 0.0, 0.0, 0.02, 0.05, 0.12])
    kappa = np.array([6.0, 10.0, 14.0, 18.0, 20.0, 18.0, 14.0, 10.0, 6.0])  # on radians
    hand = rng.random(n) < 0.5
    out = np.empty((n, 18))
    for i in range(9):
        u = rng.random(n)
        is_bridge = u < bridge[i]
        flipped = (~is_bridge) & (u < bridge[i] + flip[i])
        right = hand ^ flipped
        phi_c = np.where(right, centers["R"][0], centers["L"][0])
        psi_c = np.where(right, centers["R"][1], centers["L"][1])
        phi_c = np.where(is_bridge, centers["bridge"][0], phi_c)
        psi_c = np.where(is_bridge, centers["bridge"][1], psi_c)
        phi = np.degrees(rng.vonmises(np.radians(phi_c), kappa[i]))
        psi = np.degrees(rng.vonmises(np.radians(psi_c), kappa[i]))
        out[:, 2 * i] = phi
        out[:, 2 * i + 1] = psi
    meta = {"generator": "dihedral-surrogate", "seed": seed, "n": n, "d": 18}
    return Dataset(wrap_degrees(out), list(DIHEDRAL_COLUMNS), [True] * 18, meta)


# -- splitting and scaling -------------------------------------------------

def split(dataset: Dataset, test_fraction: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(round(dataset.n * test_fraction))
    if n_test == 0 or n_test == dataset.n:
        raise ValueError(f"split of {dataset.n} rows at fraction {test_fraction} leaves an empty partition")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    test_rows, train_rows = perm[:n_test], perm[n_test:]
    return dataset.subset(train_rows), dataset.subset(test_rows)


def fit_standardization(samples: np.ndarray, columns: list[str] | None = None) -> StandardizationStats:
    samples = np.asarray(samples, dtype=np.float64)
    mean = samples.mean(axis=0)
    std = samples.std(axis=0)
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        name = columns[bad[0]] if columns else f"column {bad[0]}"
        raise ValueError(f"zero-variance column {name!r} cannot be standardized")
    return StandardizationStats(mean, std)


def standardize(dataset: Dataset, stats: StandardizationStats | None = None) -> tuple[Dataset, StandardizationStats]:
    """Column-wise z-scoring; the result's angular flags are cleared."""
    if stats is None:
        stats = fit_standardization(dataset.samples, dataset.columns)
    z = (dataset.samples - stats.mean) / stats.std
    meta = dict(dataset.meta, standardized=True)
    return Dataset(z, list(dataset.columns), [False] * dataset.d, meta, dataset.labels), stats


def destandardize(dataset: Dataset | np.ndarray, stats: StandardizationStats, angular: list[bool] | None = None) -> Dataset:
    samples = dataset.samples if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    x = samples * stats.std + stats.mean
    columns = list(dataset.columns) if isinstance(dataset, Dataset) else []
    meta = dict(dataset.meta) if isinstance(dataset, Dataset) else {}
    meta.pop("standardized", None)
    if angular and any(angular):
        # generated angles are reported on the principal branch
        x = np.where(np.asarray(angular), wrap_degrees(x), x)
    return Dataset(x, columns, list(angular) if angular else [], meta)


# -- files -----------------------------------------------------------------

def _sidecar(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def write_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write CSV plus a ``<name>.meta.json`` sidecar. Floats use shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(dataset.columns) + "\n")
        for row in dataset.samples:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = {
        "generator": dataset.meta.get("generator", "unknown"),
        "seed": dataset.meta.get("seed"),
        "n": dataset.n,
        "d": dataset.d,
        "angular": list(map(bool, dataset.angular)),
    }
    meta.update({k: v for k, v in dataset.meta.items() if k not in meta})
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _read_rows(path: Path, expected_columns: int | None = None) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file, header expected", 1, str(path)) from None
        header = [h.strip() for h in header]
        width = len(header)
        if expected_columns is not None and width != expected_columns:
            raise DatasetFormatError(f"header has {width} columns, expected {expected_columns}", 1, str(path))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DatasetFormatError(f"{len(row)} cells, expected {width}", lineno, str(path))
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DatasetFormatError(f"non-numeric cell in {row!r}", lineno, str(path)) from None
    data = np.array(rows, dtype=np.float64).reshape(-1, width)
    return header, data


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    header, data = _read_rows(path)
    if not np.all(np.isfinite(data)):
        raise DatasetFormatError("non-finite values", None, str(path))
    meta, angular = {}, []
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        angular = [bool(a) for a in meta.get("angular", [])]
    if not angular and [h.lower() for h in header] == DIHEDRAL_COLUMNS:
        angular = [True] * 18
    return Dataset(data, header, angular, meta)


def ingest_dihedrals(path: str | Path) -> Dataset:
    """Read an 18-column phi/psi CSV (degrees) and wrap angles into [-180, 180)."""
    path = Path(path)
    header, data = _read_rows(path, expected_columns=18)
    if [h.lower() for h in header] != DIHEDRAL_COLUMNS:
        raise DatasetFormatError(f"unrecognised header {header!r}; expected {','.join(DIHEDRAL_COLUMNS)}", 1, str(path))
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(data), axis=1))[0])
        raise DatasetFormatError("non-finite angle", bad + 2, str(path))
    meta = {"generator": "dihedral-ingest", "source": str(path), "n": data.shape[0], "d": 18}
    return Dataset(wrap_degrees(data), list(DIHEDRAL_COLUMNS), [True] * 18, meta)


def residue_columns(residue: int) -> list[int]:
    """Column indices of the (phi, psi) pair of a 1-based residue index."""
    if not 1 <= residue <= 9:
        raise ValueError("residue index must be in 1..9")
    return [2 * (residue - 1), 2 * (residue - 1) + 1]

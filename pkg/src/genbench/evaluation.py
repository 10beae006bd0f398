"""PCA projection, binned KL divergence, free-energy estimates and timing."""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

DEFAULT_BINS = (50, 50)
DEFAULT_EXPAND = 0.05
DEFAULT_EPSILON = 1e-10
DEFAULT_CUTOFF = 0.0374


class EvaluationError(ValueError):
    pass


# -- PCA -------------------------------------------------------------------

@dataclass
class PCABasis:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (2, d), orthonormal rows
    explained_variance: np.ndarray  # (2,)


def pca_fit(train: np.ndarray) -> PCABasis:
    x = np.asarray(getattr(train, "samples", train), dtype=np.float64)
    n, d = x.shape
    if n < 3 or d < 2:
        raise EvaluationError(f"PCA needs n >= 3 and d >= 2, got n={n}, d={d}")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    evals, comps = evals[order], evecs[:, order].T.copy()
    scale = max(float(np.max(np.abs(np.linalg.eigvalsh(cov)))), 1e-300)
    if np.sum(evals > 1e-12 * scale) < 2:
        raise EvaluationError("covariance has fewer than two positive eigenvalues")
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PCABasis(mean, comps, evals)


def pca_project(basis: PCABasis, samples: np.ndarray) -> np.ndarray:
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    return (x - basis.mean) @ basis.components.T


# -- histograms and KL -----------------------------------------------------

@dataclass
class Histogram2D:
    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray  # (nx, ny) int
    overflow: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        return 0.5 * (self.x_edges[1:] + self.x_edges[:-1]), 0.5 * (self.y_edges[1:] + self.y_edges[:-1])

    def probabilities(self) -> np.ndarray:
        if self.total == 0:
            raise EvaluationError("histogram is empty")
        return self.counts / self.total

    def same_edges(self, other: Histogram2D) -> bool:
        return (
            self.x_edges.shape == other.x_edges.shape
            and self.y_edges.shape == other.y_edges.shape
            and np.array_equal(self.x_edges, other.x_edges)
            and np.array_equal(self.y_edges, other.y_edges)
        )


def histogram_ranges(reference: np.ndarray, expand: float = DEFAULT_EXPAND) -> tuple[tuple[float, float], tuple[float, float]]:
    """Per-axis (min, max) of ``reference``, widened by ``expand`` of the span on each side."""
    ref = np.asarray(reference, dtype=np.float64)
    out = []
    for axis in range(2):
        lo, hi = float(ref[:, axis].min()), float(ref[:, axis].max())
        pad = expand * (hi - lo)
        out.append((lo - pad, hi + pad))
    return tuple(out)


def histogram2d(points: np.ndarray, bins: tuple[int, int] = DEFAULT_BINS, ranges=None, reference: np.ndarray | None = None) -> Histogram2D:
    """Bin 2-D points; points outside ``ranges`` go to the overflow tally.

    ``ranges`` defaults to the expanded extent of ``reference`` (itself
    defaulting to ``points``).
    """
    pts = np.asarray(points, dtype=np.float64)
    if ranges is None:
        ranges = histogram_ranges(pts if reference is None else reference)
    (x0, x1), (y0, y1) = ranges
    if not (x1 > x0 and y1 > y0):
        raise EvaluationError(f"histogram range {ranges} has zero area")
    x_edges = np.linspace(x0, x1, bins[0] + 1)
    y_edges = np.linspace(y0, y1, bins[1] + 1)
    inside = (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
    counts, _, _ = np.histogram2d(pts[inside, 0], pts[inside, 1], bins=[x_edges, y_edges])
    return Histogram2D(x_edges, y_edges, counts.astype(np.int64), int((~inside).sum()))


def binned_kld(p: Histogram2D, q: Histogram2D, epsilon: float = DEFAULT_EPSILON) -> float:
    """sum p ln(p/q) over bins after adding ``epsilon`` to every count of both histograms."""
    if not p.same_edges(q):
        raise EvaluationError("histograms do not share bin edges")
    if epsilon <= 0:
        raise EvaluationError("epsilon must be positive")
    pc = p.counts.astype(np.float64).ravel() + epsilon
    qc = q.counts.astype(np.float64).ravel() + epsilon
    pp, qq = pc / pc.sum(), qc / qc.sum()
    return float(max(np.sum(pp * np.log(pp / qq)), 0.0))


def kld_2d(reference: np.ndarray, generated: np.ndarray, bins=DEFAULT_BINS, epsilon: float = DEFAULT_EPSILON) -> float:
    """KL(reference || generated) on a grid fixed by the reference projection."""
    ranges = histogram_ranges(reference)
    return binned_kld(histogram2d(reference, bins, ranges), histogram2d(generated, bins, ranges), epsilon)


# -- free energy -----------------------------------------------------------

def free_energy_surface(hist: Histogram2D, beta: float = 1.0) -> np.ndarray:
    """F = -ln(p)/beta shifted to min 0; NaN marks empty bins."""
    if beta <= 0:
        raise EvaluationError("beta must be positive")
    if hist.total == 0:
        raise EvaluationError("histogram is empty")
    p = hist.probabilities()
    with np.errstate(divide="ignore"):
        f = np.where(p > 0, -np.log(np.where(p > 0, p, 1.0)) / beta, np.nan)
    return f - np.nanmin(f)


@dataclass
class Boundary:
    """Straight line ``(c - point) . normal = 0``; domain 1 is the negative side."""

    point: np.ndarray
    normal: np.ndarray

    def domain(self, points: np.ndarray) -> np.ndarray:
        """1 or 2 per point (on-line points go to domain 2)."""
        side = (np.asarray(points, dtype=np.float64) - self.point) @ self.normal
        return np.where(side < 0, 1, 2)

    def flipped(self) -> Boundary:
        return Boundary(self.point.copy(), -self.normal)

    def oriented_towards(self, point_in_domain1: np.ndarray) -> Boundary:
        return self if self.domain(np.atleast_2d(point_in_domain1))[0] == 1 else self.flipped()

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "normal": self.normal.tolist()}


@dataclass
class FreeEnergyEstimate:
    delta_f: float
    z1: float
    z2: float
    boundary: dict
    cutoff: float
    beta: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def _bin_centers(hist: Histogram2D) -> np.ndarray:
    cx, cy = hist.centers
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def mode_delta_f(hist: Histogram2D, boundary: Boundary, cutoff: float = DEFAULT_CUTOFF, beta: float = 1.0) -> FreeEnergyEstimate:
    """Delta F = -ln(Z1/Z2)/beta, each Z summing bins within ``cutoff`` of its domain's free-energy minimum."""
    if cutoff < 0:
        raise EvaluationError("cutoff must be non-negative")
    f = free_energy_surface(hist, beta).ravel()
    p = hist.probabilities().ravel()
    dom = boundary.domain(_bin_centers(hist))
    z = []
    for label in (1, 2):
        mask = (dom == label) & np.isfinite(f)
        if not mask.any():
            raise EvaluationError(f"domain {label} holds no probability")
        f_min = f[mask].min()
        keep = mask & (f <= f_min + cutoff)
        z.append(float(p[keep].sum()))
    if min(z) <= 0:
        raise EvaluationError("a domain has zero included probability")
    return FreeEnergyEstimate(-math.log(z[0] / z[1]) / beta, z[0], z[1], boundary.to_dict(), cutoff, beta)


def local_maxima(hist: Histogram2D, smooth: float = 1.0) -> list[tuple[int, int]]:
    """Bins not exceeded by any 8-neighbour, highest first (ties by bin index)."""
    c = hist.counts.astype(np.float64)
    if smooth > 0:
        c = gaussian_filter(c, smooth, mode="constant")
    peak = (c >= maximum_filter(c, size=3, mode="constant", cval=-np.inf)) & (c > 0)
    idx = [tuple(map(int, ij)) for ij in np.argwhere(peak)]
    return sorted(idx, key=lambda ij: (-c[ij], ij))


def _smoothing_variance_factor(smooth: float) -> float:
    """Variance of a smoothed Poisson count divided by its mean: the sum of squared kernel weights."""
    if smooth <= 0:
        return 1.0
    size = 2 * int(math.ceil(4 * smooth)) + 1
    delta = np.zeros((size, size))
    delta[size // 2, size // 2] = 1.0
    return float(np.sum(gaussian_filter(delta, smooth, mode="constant") ** 2))


def _valley_separated(c: np.ndarray, a: tuple[int, int], b: tuple[int, int], depth: float, significance: float, var_factor: float = 1.0) -> bool:
    n = max(abs(a[0] - b[0]), abs(a[1] - b[1])) + 1
    ii = np.rint(np.linspace(a[0], b[0], n)).astype(int)
    jj = np.rint(np.linspace(a[1], b[1], n)).astype(int)
    lower = min(c[a], c[b])
    floor = c[ii, jj].min()
    # the dip must also beat Poisson noise, or isolated tail counts pass as modes
    return floor < depth * lower and lower - floor > significance * math.sqrt(var_factor * lower)


def default_boundary(hist: Histogram2D, smooth: float = 1.0, valley: float = 0.5, significance: float = 3.0) -> Boundary:
    """Perpendicular bisector between the two highest separated density peaks.

    Peaks are 8-neighbourhood maxima of the lightly smoothed counts; the
    second peak is the highest one separated from the first by a valley
    below ``valley`` times the lower peak and deeper than ``significance``
    standard deviations of that peak's smoothed Poisson count, which discards noise bumps on
    a single mode and stray tail counts. Domain 1 holds the highest peak.
    """
    c = hist.counts.astype(np.float64)
    if smooth > 0:
        c = gaussian_filter(c, smooth, mode="constant")
    maxima = local_maxima(hist, smooth)
    if not maxima:
        raise EvaluationError("histogram has no local maxima; supply a boundary manually")
    first = maxima[0]
    var_factor = _smoothing_variance_factor(smooth)
    second = next((m for m in maxima[1:] if _valley_separated(c, first, m, valley, significance, var_factor)), None)
    if second is None:
        raise EvaluationError("fewer than two separated maxima; supply a boundary manually")
    cx, cy = hist.centers
    a = np.array([cx[first[0]], cy[first[1]]])
    b = np.array([cx[second[0]], cy[second[1]]])
    return Boundary(0.5 * (a + b), b - a)


# -- r^2, timing, parameter count -----------------------------------------

def r_squared(pairs) -> float:
    """1 - SS_res / SS_tot with residuals measured from the identity line."""
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise EvaluationError("r_squared needs at least two (true, estimate) pairs")
    truth, est = arr[:, 0], arr[:, 1]
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0:
        raise EvaluationError("true values are constant")
    return 1.0 - float(np.sum((est - truth) ** 2)) / ss_tot


def measure_sampling_time(sampler: Callable[[int, int], object], n: int = 1000, repeats: int = 5) -> float:
    """Median wall-clock seconds per sample over ``repeats`` batches, after one warm-up batch.

    ``sampler(n, seed)`` must generate ``n`` samples. Not safe to run
    concurrently with other timing work.
    """
    if n < 100:
        raise EvaluationError("timing batches need n >= 100")
    if repeats < 1:
        raise EvaluationError("repeats must be >= 1")
    sampler(n, 0)
    times = []
    for r in range(repeats):
        start = time.perf_counter()
        sampler(n, r + 1)
        times.append((time.perf_counter() - start) / n)
    return float(statistics.median(times))


def count_parameters(model) -> int:
    return len(model.params)


@dataclass
class EvaluationReport:
    kld: float
    sec_per_sample: float
    param_count: int
    delta_f: FreeEnergyEstimate | None = None
    r_squared: float | None = None
    epsilon: float = DEFAULT_EPSILON
    bins: tuple[int, int] = DEFAULT_BINS

    def __post_init__(self):
        if not self.kld >= 0:
            raise EvaluationError("kld must be non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["bins"] = list(self.bins)
        return out

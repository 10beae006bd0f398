"""Monotonic rational-quadratic spline on [-B, B] with identity (linear) tails.

Bins are parameterised by their widths, heights and the derivatives at the
knots; the two boundary derivatives are fixed at 1 so the map joins the
identity tails with a continuous slope. Forward evaluation is written with
:mod:`genbench.core.autodiff` ops so it can be differentiated with respect
to both the input and the spline parameters; the inverse is numpy-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from genbench.core import autodiff as ad

DEFAULT_BINS = 8
DEFAULT_BOUND = 3.0
MIN_BIN_WIDTH = 1e-3
MIN_BIN_HEIGHT = 1e-3
MIN_DERIVATIVE = 1e-3
# softplus(raw + offset) + MIN_DERIVATIVE == 1 at raw == 0
_DERIV_OFFSET = float(np.log(np.expm1(1.0 - MIN_DERIVATIVE)))


def n_raw_params(bins: int) -> int:
    """Unconstrained scalars per transformed coordinate."""
    return 3 * bins - 1


@dataclass
class SplineParams:
    """Bin widths/heights (each summing to 2B) and interior knot derivatives.

    Fields hold arrays or ``Tensor``s with a common leading shape; the last
    axis runs over bins (K) or interior knots (K - 1).
    """

    widths: object
    heights: object
    derivatives: object
    bound: float = DEFAULT_BOUND

    @property
    def bins(self) -> int:
        return ad.value_of(self.widths).shape[-1]

    @classmethod
    def from_unconstrained(cls, raw, bins: int = DEFAULT_BINS, bound: float = DEFAULT_BOUND) -> SplineParams:
        """Map raw conditioner outputs (..., 3K-1) to valid spline parameters.

        An all-zero input yields equal bins and unit derivatives, i.e. the identity map.
        """
        raw = ad.as_tensor(raw)
        if raw.shape[-1] != n_raw_params(bins):
            raise ValueError(f"expected {n_raw_params(bins)} raw parameters per coordinate, got {raw.shape[-1]}")
        lead = (slice(None),) * (raw.ndim - 1)
        uw = raw[lead + (slice(0, bins),)]
        uh = raw[lead + (slice(bins, 2 * bins),)]
        ud = raw[lead + (slice(2 * bins, 3 * bins - 1),)]
        span = 2.0 * bound
        widths = (MIN_BIN_WIDTH + (1.0 - MIN_BIN_WIDTH * bins) * ad.softmax(uw, axis=-1)) * span
        heights = (MIN_BIN_HEIGHT + (1.0 - MIN_BIN_HEIGHT * bins) * ad.softmax(uh, axis=-1)) * span
        derivs = ad.softplus(ud + _DERIV_OFFSET) + MIN_DERIVATIVE
        return cls(widths, heights, derivs, bound)

    @classmethod
    def identity(cls, shape: tuple[int, ...] = (), bins: int = DEFAULT_BINS, bound: float = DEFAULT_BOUND) -> SplineParams:
        return cls(
            np.full(shape + (bins,), 2.0 * bound / bins),
            np.full(shape + (bins,), 2.0 * bound / bins),
            np.ones(shape + (bins - 1,)),
            bound,
        )

    def values(self) -> SplineParams:
        """Detached numpy copy."""
        return SplineParams(ad.value_of(self.widths), ad.value_of(self.heights), ad.value_of(self.derivatives), self.bound)


def _knots(sizes, bound: float):
    """Knot positions (..., K+1) from bin sizes, with both ends pinned exactly."""
    sizes = ad.as_tensor(sizes)
    lead_shape = sizes.shape[:-1]
    lead = (slice(None),) * (sizes.ndim - 1)
    interior = ad.cumsum(sizes, axis=-1)[lead + (slice(0, -1),)] - bound
    lo = np.full(lead_shape + (1,), -bound)
    hi = np.full(lead_shape + (1,), bound)
    return ad.concat([lo, interior, hi], axis=-1)


def _full_derivatives(derivs):
    derivs = ad.as_tensor(derivs)
    ones = np.ones(derivs.shape[:-1] + (1,))
    return ad.concat([ones, derivs, ones], axis=-1)


def _bin_index(knots: np.ndarray, v: np.ndarray) -> np.ndarray:
    bins = knots.shape[-1] - 1
    idx = (v[..., None] >= knots).sum(axis=-1) - 1
    return np.clip(idx, 0, bins - 1)[..., None]


def _gather(arr, idx):
    return ad.reshape(ad.take_along_axis(arr, idx, axis=-1), idx.shape[:-1])


def rq_spline_forward(x, params: SplineParams):
    """Apply the spline elementwise. Returns (y, log dy/dx) with the shape of ``x``.

    ``x`` may be an array or ``Tensor``; the outputs are ``Tensor``s when
    anything involved is tracked, numpy arrays otherwise.
    """
    track = isinstance(x, ad.Tensor) or isinstance(params.widths, ad.Tensor)
    x = ad.as_tensor(x)
    xv = x.value
    bound = params.bound
    inside = (xv >= -bound) & (xv <= bound)
    xc = ad.where(inside, x, 0.0)

    kx = _knots(params.widths, bound)
    ky = _knots(params.heights, bound)
    dk_all = _full_derivatives(params.derivatives)
    idx = _bin_index(kx.value, ad.value_of(xc))

    w_all = kx[(Ellipsis, slice(1, None))] - kx[(Ellipsis, slice(0, -1))]
    h_all = ky[(Ellipsis, slice(1, None))] - ky[(Ellipsis, slice(0, -1))]
    x_k = _gather(kx, idx)
    y_k = _gather(ky, idx)
    w_k = _gather(w_all, idx)
    h_k = _gather(h_all, idx)
    d_k = _gather(dk_all, idx)
    d_k1 = _gather(dk_all, idx + 1)

    slope = h_k / w_k
    theta = (xc - x_k) / w_k
    one_minus = 1.0 - theta
    tt = theta * one_minus
    denom = slope + (d_k1 + d_k - 2.0 * slope) * tt
    numer = h_k * (slope * ad.square(theta) + d_k * tt)
    y_in = y_k + numer / denom
    dnum = ad.square(slope) * (d_k1 * ad.square(theta) + 2.0 * slope * tt + d_k * ad.square(one_minus))
    logdet_in = ad.log(dnum) - 2.0 * ad.log(denom)

    y = ad.where(inside, y_in, x)
    logdet = ad.where(inside, logdet_in, 0.0)
    if track:
        return y, logdet
    return y.value, logdet.value


def rq_spline_inverse(y, params: SplineParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic inverse (root of the per-bin quadratic). Returns (x, log dx/dy)."""
    p = params.values()
    y = np.asarray(ad.value_of(y), dtype=np.float64)
    bound = p.bound
    inside = (y >= -bound) & (y <= bound)
    yc = np.where(inside, y, 0.0)

    kx = _knots(p.widths, bound).value
    ky = _knots(p.heights, bound).value
    dk_all = _full_derivatives(p.derivatives).value
    idx = _bin_index(ky, yc)

    def gather(a, i=idx):
        return np.take_along_axis(a, i, axis=-1)[..., 0]

    x_k, y_k = gather(kx), gather(ky)
    w_k = gather(np.diff(kx, axis=-1))
    h_k = gather(np.diff(ky, axis=-1))
    d_k, d_k1 = gather(dk_all), gather(dk_all, idx + 1)
    slope = h_k / w_k
    dy = yc - y_k
    curv = d_k1 + d_k - 2.0 * slope
    a = h_k * (slope - d_k) + dy * curv
    b = h_k * d_k - dy * curv
    c = -slope * dy
    disc = np.maximum(b * b - 4.0 * a * c, 0.0)
    theta = (2.0 * c) / (-b - np.sqrt(disc))
    x_in = x_k + theta * w_k

    tt = theta * (1.0 - theta)
    denom = slope + curv * tt
    dnum = slope**2 * (d_k1 * theta**2 + 2.0 * slope * tt + d_k * (1.0 - theta) ** 2)
    logdet_in = -(np.log(dnum) - 2.0 * np.log(denom))
    return np.where(inside, x_in, y), np.where(inside, logdet_in, 0.0)

"""Filtered back-projection baseline."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .exceptions import DataError
from .filtering import FilterSpec, ramp_filter
from .geometry import GridSpec, SeriesKind, TiltGeometry, TiltSeries, Volume


def angular_weights(geometry: TiltGeometry) -> np.ndarray:
    """Per-tilt quadrature weights in radians.

    Interior tilts get half the gap to each neighbour; the two end tilts get
    half the inner gap plus an equal half gap outside. Uniform angles thus all
    get the spacing, and N uniform angles over a half circle sum to pi. A
    single tilt gets weight pi.
    """
    t = geometry.radians
    if t.size == 1:
        return np.array([np.pi])
    gaps = np.diff(t)
    w = np.empty_like(t)
    w[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    w[0] = gaps[0]
    w[-1] = gaps[-1]
    return w


def backproject(ts: TiltSeries, grid: GridSpec, weights: np.ndarray | None = None) -> Volume:
    """Weighted sum over tilts of the filtered projections sampled at each voxel's detector point."""
    if ts.kind is not SeriesKind.FILTERED:
        raise DataError(f"backproject expects a filtered series, got {ts.kind.value}")
    if ts.det_v != grid.ny:
        raise DataError(
            f"detector v size {ts.det_v} must equal grid ny {grid.ny} (tilt axis alignment)"
        )
    w = angular_weights(ts.geometry) if weights is None else np.asarray(weights, dtype=np.float64)
    t = ts.geometry.radians
    data = _kernels.backproject(
        np.asarray(ts.data, dtype=np.float64), np.cos(t), np.sin(t), w, grid.nx, grid.ny, grid.nz
    )
    return Volume(grid, data)


def fbp(ts: TiltSeries, grid: GridSpec, spec: FilterSpec = FilterSpec()) -> Volume:
    """Ramp-filter a raw series (if needed) and back-project it onto ``grid``."""
    if ts.kind is not SeriesKind.FILTERED:
        ts = ramp_filter(ts, spec)
    return backproject(ts, grid)

"""Parallel-beam forward model about the y axis and the observation noise model."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import DataError, NumericalError
from .geometry import SeriesKind, TiltGeometry, TiltSeries, Volume


def project(volume: Volume, geometry: TiltGeometry, det_u: int | None = None,
            det_v: int | None = None, step: float = 1.0) -> TiltSeries:
    """Line integrals of ``volume`` for every tilt and detector pixel.

    Rays run along ``(sin t, 0, cos t)`` through the lifted detector point and
    are integrated with the midpoint rule over the grid's bounding diagonal.
    ``det_u``/``det_v`` default to ``nx``/``ny``.
    """
    g = volume.grid
    det_u = g.nx if det_u is None else int(det_u)
    det_v = g.ny if det_v is None else int(det_v)
    if det_u < 1 or det_v < 1:
        raise DataError(f"detector dimensions must be positive, got {det_u}x{det_v}")
    if not step > 0:
        raise DataError(f"step must be positive, got {step}")
    diag = math.sqrt(g.nx**2 + g.ny**2 + g.nz**2)
    n_steps = int(math.ceil(diag / step))
    t0 = -0.5 * n_steps * step
    t = geometry.radians
    data = _kernels.project(
        np.asarray(volume.data, dtype=np.float64), np.cos(t), np.sin(t),
        det_u, det_v, float(step), t0, n_steps,
    )
    return TiltSeries(geometry, data, SeriesKind.CLEAN, g.voxel_size)


class NoiseKind(str, enum.Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    POISSON = "poisson"


@dataclass(frozen=True)
class NoiseModel:
    kind: NoiseKind = NoiseKind.GAUSSIAN
    # gaussian: noise std in units of the clean series' std
    sigma: float = 0.5
    # poisson: expected counts per pixel at the mean (shifted) level
    dose: float = 100.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.kind is NoiseKind.GAUSSIAN and not self.sigma >= 0:
            raise DataError(f"gaussian noise needs sigma >= 0, got {self.sigma}")
        if self.kind is NoiseKind.POISSON and not self.dose > 0:
            raise DataError(f"poisson noise needs dose > 0, got {self.dose}")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> NoiseModel:
        """Parse ``none``, ``gaussian:SIGMA`` or ``poisson:DOSE``."""
        kind, _, arg = text.partition(":")
        kind = NoiseKind(kind.strip().lower())
        if kind is NoiseKind.NONE:
            return cls(kind, seed=seed)
        if not arg:
            raise DataError(f"noise spec {text!r} needs a parameter, e.g. gaussian:0.5")
        if kind is NoiseKind.GAUSSIAN:
            return cls(kind, sigma=float(arg), seed=seed)
        return cls(kind, dose=float(arg), seed=seed)


def _tilt_rng(seed: int, tilt: int) -> np.random.Generator:
    # one independent stream per tilt: results do not depend on processing order
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(tilt)])))


def apply_noise(ts: TiltSeries, model: NoiseModel) -> TiltSeries:
    if ts.kind is not SeriesKind.CLEAN:
        raise DataError(f"noise is applied to clean series only, got {ts.kind.value}")
    if model.kind is NoiseKind.NONE:
        return ts.replace(ts.data.copy(), SeriesKind.NOISY)
    clean = np.asarray(ts.data, dtype=np.float64)
    out = np.empty_like(clean)
    if model.kind is NoiseKind.GAUSSIAN:
        scale = model.sigma * clean.std()
        for n in range(ts.n_tilts):
            out[n] = clean[n] + scale * _tilt_rng(model.seed, n).standard_normal(clean[n].shape)
    else:
        floor = clean.min()
        shifted = clean - floor
        mean = shifted.mean()
        if not mean > 0:
            raise NumericalError("degenerate dose normalization")
        alpha = model.dose / mean
        for n in range(ts.n_tilts):
            counts = _tilt_rng(model.seed, n).poisson(alpha * shifted[n])
            out[n] = counts / alpha + floor
    return ts.replace(out, SeriesKind.NOISY)

"""Localized patch extraction around each voxel's detector footprint.

For voxel ``r`` and tilt ``t`` the patch is sampled on a ``P x P`` lattice
with spacing ``delta`` centered at ``world_to_detector(r, t)``:
``patch[i, j] = y_t(u0 - delta * i, v0 - delta * j)`` for
``i, j = -(P-1)/2 .. (P-1)/2``. A voxel's feature vector concatenates its
patches over all tilts (tilt-major, row-major inside a patch).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import DataError, NumericalError
from .geometry import SeriesKind, TiltSeries, bilinear_sample, world_to_detector


class Normalize(str, enum.Enum):
    NONE = "none"
    ZSCORE = "per_series_zscore"


@dataclass(frozen=True)
class PatchConfig:
    size: int = 11
    delta: float = 1.0
    normalize: Normalize = Normalize.ZSCORE

    def __post_init__(self):
        object.__setattr__(self, "normalize", Normalize(self.normalize))
        if int(self.size) != self.size or self.size < 1 or self.size % 2 == 0:
            raise DataError(f"patch size must be an odd positive integer, got {self.size}")
        object.__setattr__(self, "size", int(self.size))
        if not self.delta > 0:
            raise DataError(f"patch spacing must be positive, got {self.delta}")

    @property
    def half(self) -> int:
        return self.size // 2

    def feature_dim(self, n_tilts: int) -> int:
        return n_tilts * self.size * self.size

    def default_margin(self) -> int:
        """Voxels kept away from the border when sampling training targets."""
        return int(math.ceil(self.delta * (self.size - 1) / 2)) + 1

    def offsets(self) -> np.ndarray:
        return np.arange(-self.half, self.half + 1)


def _require_filtered(ts: TiltSeries):
    if ts.kind is not SeriesKind.FILTERED:
        raise DataError(f"patches are taken from filtered series, got {ts.kind.value}")


def extract_patch(ts: TiltSeries, tilt_index: int, r, cfg: PatchConfig) -> np.ndarray:
    """``P x P`` patch of tilt ``tilt_index`` around the detector point of ``r`` (float64)."""
    _require_filtered(ts)
    if not 0 <= tilt_index < ts.n_tilts:
        raise DataError(f"tilt index {tilt_index} out of range for {ts.n_tilts} tilts")
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3,) or not np.all(np.isfinite(r)):
        raise DataError("r must be a finite 3-vector")
    u0, v0 = world_to_detector(r, ts.geometry.angles_deg[tilt_index])
    off = cfg.delta * cfg.offsets()
    uv = np.stack(np.meshgrid(u0 - off, v0 - off, indexing="ij"), axis=-1)
    return bilinear_sample(ts.data[tilt_index], uv)


@dataclass(frozen=True)
class SeriesNormalizer:
    """Affine applied to every feature of one series: ``(x - shift) / scale``."""

    shift: float = 0.0
    scale: float = 1.0

    @classmethod
    def fit(cls, ts: TiltSeries, mode: Normalize) -> SeriesNormalizer:
        if Normalize(mode) is Normalize.NONE:
            return cls()
        data = np.asarray(ts.data, dtype=np.float64)
        std = data.std()
        if not std > 0:
            raise NumericalError("degenerate normalization")
        return cls(float(data.mean()), float(std))


class FeatureSampler:
    """Precomputed per-series state for fast batched feature assembly.

    Holds the filtered projections, trig tables and normalization of one
    series; :meth:`features` is the hot path used in training and inference.
    """

    def __init__(self, ts: TiltSeries, cfg: PatchConfig):
        _require_filtered(ts)
        self.cfg = cfg
        self.n_tilts = ts.n_tilts
        self.det_shape = (ts.det_u, ts.det_v)
        self.norm = SeriesNormalizer.fit(ts, cfg.normalize)
        self._proj = np.ascontiguousarray(ts.data, dtype=np.float64)
        t = ts.geometry.radians
        self._cos = np.cos(t)
        self._sin = np.sin(t)

    @property
    def dim(self) -> int:
        return self.cfg.feature_dim(self.n_tilts)

    def features(self, points, dtype=np.float32) -> np.ndarray:
        """Normalized feature matrix ``(B, N*P*P)`` for centered points ``(B, 3)``."""
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        out = np.empty((pts.shape[0], self.dim), dtype=dtype)
        _kernels.gather_patches(self._proj, self._cos, self._sin, pts, self.cfg.half,
                                float(self.cfg.delta), self.norm.shift, 1.0 / self.norm.scale, out)
        return out


def assemble_features(ts: TiltSeries, r, cfg: PatchConfig) -> np.ndarray:
    """Feature vector of length ``N * P * P`` for one centered point ``r`` (float64)."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3,) or not np.all(np.isfinite(r)):
        raise DataError("r must be a finite 3-vector")
    return FeatureSampler(ts, cfg).features(r[None, :], dtype=np.float64)[0]

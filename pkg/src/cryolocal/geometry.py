"""Grids, volumes and tilt series with a single centered-coordinate convention.

Index ``i`` on an axis with ``n`` samples sits at centered coordinate
``i - (n - 1) / 2``. Volumes are stored as ``data[ix, iy, iz]`` and tilt
series as ``data[tilt, iu, iv]``; the tilt axis is ``y`` and the detector
``v`` axis runs parallel to it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exceptions import DataError


class SeriesKind(str, enum.Enum):
    CLEAN = "clean"
    NOISY = "noisy"
    FILTERED = "filtered"


def centered(index, n):
    """Centered coordinate of ``index`` on an axis of ``n`` samples."""
    return np.asarray(index, dtype=np.float64) - 0.5 * (n - 1)


def to_index(coord, n):
    """Inverse of :func:`centered` (fractional index)."""
    return np.asarray(coord, dtype=np.float64) + 0.5 * (n - 1)


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nz: int
    voxel_size: float = 1.0

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DataError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not self.voxel_size > 0:
            raise DataError(f"voxel_size must be positive, got {self.voxel_size!r}")

    @classmethod
    def cube(cls, n: int, voxel_size: float = 1.0) -> GridSpec:
        return cls(n, n, n, voxel_size)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    def coords(self, ix, iy, iz) -> np.ndarray:
        """Centered coordinates of voxel indices, stacked on the last axis."""
        return np.stack(
            np.broadcast_arrays(centered(ix, self.nx), centered(iy, self.ny), centered(iz, self.nz)),
            axis=-1,
        )

    def indices(self, r) -> np.ndarray:
        """Fractional indices of centered coordinates ``r`` (shape ``(..., 3)``)."""
        r = np.asarray(r, dtype=np.float64)
        return np.stack(
            [to_index(r[..., 0], self.nx), to_index(r[..., 1], self.ny), to_index(r[..., 2], self.nz)],
            axis=-1,
        )

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            centered(np.arange(self.nx), self.nx),
            centered(np.arange(self.ny), self.ny),
            centered(np.arange(self.nz), self.nz),
        )


def _frozen(data, dtype=np.float32) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    if not np.all(np.isfinite(arr)):
        raise DataError("data contains NaN or Inf")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar field on ``grid``; ``data`` is read-only float32 ``[ix, iy, iz]``."""

    grid: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.shape != self.grid.shape:
            raise DataError(f"volume data shape {arr.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def zeros(cls, grid: GridSpec) -> Volume:
        return cls(grid, np.zeros(grid.shape, dtype=np.float32))

    @classmethod
    def from_array(cls, data, voxel_size: float = 1.0) -> Volume:
        data = np.asarray(data)
        if data.ndim != 3:
            raise DataError(f"expected a 3D array, got shape {data.shape}")
        return cls(GridSpec(*data.shape, voxel_size=voxel_size), data)

    def with_data(self, data) -> Volume:
        return Volume(self.grid, data)


@dataclass(frozen=True)
class TiltGeometry:
    """Tilt angles in degrees about the y axis, strictly increasing within [-90, 90]."""

    angles_deg: tuple[float, ...]

    def __post_init__(self):
        a = np.asarray(self.angles_deg, dtype=np.float64).ravel()
        if a.size < 1:
            raise DataError("a tilt geometry needs at least one angle")
        if not np.all(np.isfinite(a)) or a.min() < -90.0 or a.max() > 90.0:
            raise DataError("tilt angles must be finite and within [-90, 90] degrees")
        if np.any(np.diff(a) <= 0):
            raise DataError("tilt angles must be strictly increasing")
        object.__setattr__(self, "angles_deg", tuple(float(x) for x in a))

    @classmethod
    def uniform(cls, start: float, stop: float, count: int) -> TiltGeometry:
        """``count`` equally spaced angles including both endpoints."""
        if count < 1:
            raise DataError("count must be at least 1")
        if count == 1:
            if start != stop:
                raise DataError("a single tilt needs start == stop")
            return cls((float(start),))
        return cls(tuple(np.linspace(start, stop, count)))

    @property
    def n_tilts(self) -> int:
        return len(self.angles_deg)

    @property
    def radians(self) -> np.ndarray:
        return np.deg2rad(np.asarray(self.angles_deg))

    def rotation(self, index: int) -> np.ndarray:
        """Rotation about y taking (rx, ry, rz) to (rx cos - rz sin, ry, rx sin + rz cos)."""
        t = self.radians[index]
        c, s = np.cos(t), np.sin(t)
        return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


@dataclass(frozen=True, eq=False)
class TiltSeries:
    """Stack of projections ``data[tilt, iu, iv]`` (read-only float32)."""

    geometry: TiltGeometry
    data: np.ndarray = field(repr=False)
    kind: SeriesKind = SeriesKind.CLEAN
    pixel_size: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[0] != self.geometry.n_tilts:
            raise DataError(
                f"tilt series data shape {arr.shape} inconsistent with {self.geometry.n_tilts} tilts"
            )
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise DataError("detector dimensions must be positive")
        object.__setattr__(self, "data", _frozen(arr))
        object.__setattr__(self, "kind", SeriesKind(self.kind))

    @property
    def n_tilts(self) -> int:
        return self.geometry.n_tilts

    @property
    def det_u(self) -> int:
        return self.data.shape[1]

    @property
    def det_v(self) -> int:
        return self.data.shape[2]

    def replace(self, data, kind=None) -> TiltSeries:
        return TiltSeries(self.geometry, data, self.kind if kind is None else kind, self.pixel_size)


def world_to_detector(r, theta_deg) -> np.ndarray:
    """Detector point ``(rx cos t - rz sin t, ry)`` hit by the ray through ``r``.

    ``r`` may carry leading batch dimensions; ``theta_deg`` broadcasts against them.
    """
    r = np.asarray(r, dtype=np.float64)
    t = np.deg2rad(np.asarray(theta_deg, dtype=np.float64))
    u = r[..., 0] * np.cos(t) - r[..., 2] * np.sin(t)
    v = np.broadcast_to(r[..., 1], np.shape(u))
    return np.stack([u, v], axis=-1)


def sample_volume_trilinear(volume: Volume, r):
    """Trilinear interpolation at centered point(s) ``r``; zero outside the voxel-center hull."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 3:
        raise DataError("points must have 3 coordinates")
    idx = volume.grid.indices(r).reshape(-1, 3)
    vals = _kernels.trilinear_points(np.asarray(volume.data, dtype=np.float64), np.ascontiguousarray(idx))
    if r.ndim == 1:
        return float(vals[0])
    return vals.reshape(r.shape[:-1])


def bilinear_sample(image: np.ndarray, uv):
    """Bilinear interpolation of a ``[iu, iv]`` image at centered detector point(s) ``uv``."""
    image = np.asarray(image, dtype=np.float64)
    uv = np.asarray(uv, dtype=np.float64)
    du, dv = image.shape
    idx = np.stack([to_index(uv[..., 0], du), to_index(uv[..., 1], dv)], axis=-1).reshape(-1, 2)
    vals = _kernels.bilinear_points(image, np.ascontiguousarray(idx))
    if uv.ndim == 1:
        return float(vals[0])
    return vals.reshape(uv.shape[:-1])

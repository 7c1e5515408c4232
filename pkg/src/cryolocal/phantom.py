"""Synthetic ground-truth volumes built from soft-edged primitives.

Each primitive is rasterized with a one-voxel linear edge ramp (coverage
``clip(0.5 - d, 0, 1)`` for signed distance ``d``), so voxels away from a
surface take exactly the background or background plus density. Overlapping
primitives add.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .geometry import GridSpec, Volume

MIN_SIDE = 8


class BlobKind(str, enum.Enum):
    ELLIPSOID = "ellipsoid"
    SHELL = "shell"
    ROD = "rod"


@dataclass(frozen=True)
class PhantomSpec:
    grid: GridSpec
    seed: int = 0
    n_blobs: int = 12
    blob_kind: BlobKind = BlobKind.ELLIPSOID
    density_range: tuple[float, float] = (0.5, 1.0)
    background: float = 0.0
    # semi-axis (or rod radius / half-length) range in voxels
    size_range: tuple[float, float] = (2.0, 8.0)

    def __post_init__(self):
        object.__setattr__(self, "blob_kind", BlobKind(self.blob_kind))
        lo, hi = self.density_range
        if lo > hi:
            raise DataError(f"density_range lower bound {lo} exceeds upper bound {hi}")
        if self.n_blobs < 1:
            raise DataError("n_blobs must be at least 1")
        smin, smax = self.size_range
        if smin < 0 or smin > smax:
            raise DataError(f"invalid size_range {self.size_range}")
        if not 0 <= int(self.seed) < 2**64:
            raise DataError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class Blob:
    kind: BlobKind
    center: tuple[float, float, float]
    axes: tuple[float, float, float]
    rotation: np.ndarray
    density: float
    # shell wall thickness (voxels); unused for other kinds
    thickness: float = 2.0


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    # uniform on SO(3) via a random unit quaternion
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def draw_blobs(spec: PhantomSpec) -> list[Blob]:
    """Random primitives for ``spec``; a pure function of the spec and its seed."""
    rng = np.random.Generator(np.random.PCG64(int(spec.seed)))
    g = spec.grid
    half = 0.5 * np.array([g.nx - 1, g.ny - 1, g.nz - 1])
    lo, hi = spec.density_range
    smin, smax = spec.size_range
    blobs = []
    for _ in range(spec.n_blobs):
        center = rng.uniform(-0.75, 0.75, size=3) * half
        axes = rng.uniform(smin, smax, size=3)
        if spec.blob_kind is BlobKind.ROD:
            # radius, radius, half-length
            r = rng.uniform(smin, max(smin, 0.5 * (smin + smax)))
            axes = np.array([r, r, rng.uniform(smin, smax) * 2.0])
        blobs.append(
            Blob(
                kind=spec.blob_kind,
                center=tuple(center),
                axes=tuple(axes),
                rotation=_random_rotation(rng),
                density=float(rng.uniform(lo, hi)),
                thickness=float(rng.uniform(1.5, 3.0)),
            )
        )
    return blobs


def _local_coords(grid: GridSpec, blob: Blob) -> np.ndarray:
    x, y, z = grid.axes()
    pts = np.stack(np.meshgrid(x, y, z, indexing="ij"), axis=-1) - np.asarray(blob.center)
    # body frame: columns of ``rotation`` are the body axes
    return pts @ blob.rotation


def _ellipsoid_coverage(local: np.ndarray, axes) -> np.ndarray:
    axes = np.maximum(np.asarray(axes, dtype=np.float64), 1e-9)
    rho = np.sqrt(np.sum((local / axes) ** 2, axis=-1))
    dist = np.sqrt(np.sum(local**2, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        signed = np.where(rho > 0, dist - dist / rho, -np.min(axes))
    return np.clip(0.5 - signed, 0.0, 1.0)


def _rod_coverage(local: np.ndarray, axes) -> np.ndarray:
    radius, _, half_len = axes
    radial = np.sqrt(local[..., 0] ** 2 + local[..., 1] ** 2) - radius
    axial = np.abs(local[..., 2]) - half_len
    return np.clip(0.5 - np.maximum(radial, axial), 0.0, 1.0)


def render_blob(grid: GridSpec, blob: Blob) -> np.ndarray:
    """Density contributed by one primitive on ``grid`` (float64, ``[ix, iy, iz]``)."""
    if max(blob.axes) == 0.0:
        # degenerate primitive: a single voxel nearest to its center
        out = np.zeros(grid.shape)
        idx = np.rint(grid.indices(np.asarray(blob.center))).astype(int)
        if np.all(idx >= 0) and np.all(idx < np.array(grid.shape)):
            out[tuple(idx)] = blob.density
        return out
    local = _local_coords(grid, blob)
    if blob.kind is BlobKind.ELLIPSOID:
        cov = _ellipsoid_coverage(local, blob.axes)
    elif blob.kind is BlobKind.SHELL:
        inner = np.maximum(np.asarray(blob.axes) - blob.thickness, 0.0)
        cov = _ellipsoid_coverage(local, blob.axes)
        if inner.max() > 0:
            cov = cov - _ellipsoid_coverage(local, inner)
        cov = np.clip(cov, 0.0, 1.0)
    else:
        cov = _rod_coverage(local, blob.axes)
    return blob.density * cov


def render(grid: GridSpec, blobs, background: float = 0.0) -> Volume:
    data = np.full(grid.shape, float(background))
    for blob in blobs:
        data += render_blob(grid, blob)
    return Volume(grid, data)


def generate_phantom(spec: PhantomSpec) -> Volume:
    """Background plus ``spec.n_blobs`` random primitives, deterministic in ``spec.seed``."""
    g = spec.grid
    if min(g.shape) < MIN_SIDE:
        raise DataError(f"phantom grids must be at least {MIN_SIDE}^3, got {g.shape}")
    return render(g, draw_blobs(spec), spec.background)


def sphere(grid: GridSpec, radius: float, density: float = 1.0, center=(0.0, 0.0, 0.0),
           background: float = 0.0) -> Volume:
    """Soft-edged sphere; the standard fixture for projector and FBP checks."""
    blob = Blob(BlobKind.ELLIPSOID, tuple(center), (radius,) * 3, np.eye(3), float(density))
    return render(grid, [blob], background)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cryolocal.exceptions import DataError
from cryolocal.geometry import GridSpec
from cryolocal.phantom import Blob, BlobKind, PhantomSpec, generate_phantom, render, sphere


def test_degenerate_blob_is_single_voxel():
    grid = GridSpec.cube(9)
    blob = Blob(BlobKind.ELLIPSOID, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), np.eye(3), 0.7)
    data = np.asarray(render(grid, [blob]).data)
    assert np.count_nonzero(data) == 1
    assert data[4, 4, 4] == pytest.approx(0.7)


def test_sphere_is_indicator_away_from_edge(grid64):
    vol = sphere(grid64, 10.0)
    x, y, z = np.meshgrid(*grid64.axes(), indexing="ij")
    d = np.sqrt(x**2 + y**2 + z**2)
    data = np.asarray(vol.data)
    assert np.all(data[d < 9.5] == 1.0)
    assert np.all(data[d > 10.5] == 0.0)
    edge = data[(d >= 9.5) & (d <= 10.5)]
    assert edge.min() >= 0.0 and edge.max() <= 1.0


def test_sphere_mass_within_two_percent(sphere64):
    analytic = 4.0 / 3.0 * math.pi * 10.0**3
    assert abs(float(np.sum(sphere64.data, dtype=np.float64)) - analytic) < 0.02 * analytic


@pytest.mark.parametrize("kind", list(BlobKind))
def test_generation_is_deterministic(kind):
    spec = PhantomSpec(GridSpec.cube(24), seed=7, n_blobs=5, blob_kind=kind)
    a, b = generate_phantom(spec), generate_phantom(spec)
    assert a.data.tobytes() == b.data.tobytes()
    other = generate_phantom(PhantomSpec(GridSpec.cube(24), seed=8, n_blobs=5, blob_kind=kind))
    assert a.data.tobytes() != other.data.tobytes()
    assert np.all(np.isfinite(a.data)) and np.any(np.asarray(a.data) > 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.floats(0.0, 2.0), st.floats(0.0, 2.0),
       st.floats(-1.0, 1.0), st.sampled_from(list(BlobKind)))
def test_values_within_density_bounds(seed, n, lo, width, background, kind):
    # each primitive adds density in [0, hi]; the upper bound is background + n * hi
    hi = lo + width
    spec = PhantomSpec(GridSpec.cube(12), seed=seed, n_blobs=n, blob_kind=kind,
                       density_range=(lo, hi), background=background)
    data = np.asarray(generate_phantom(spec).data, dtype=np.float64)
    tol = 1e-5 * (1 + abs(background) + n * hi)
    assert data.min() >= background - tol
    assert data.max() <= background + n * hi + tol


def test_rejects_small_grid():
    with pytest.raises(DataError):
        generate_phantom(PhantomSpec(GridSpec.cube(7)))


@pytest.mark.parametrize("kw", [{"density_range": (1.0, 0.5)}, {"n_blobs": 0},
                                {"size_range": (3.0, 1.0)}, {"blob_kind": "cube"}])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        PhantomSpec(GridSpec.cube(16), **kw)


def test_shell_is_hollow():
    grid = GridSpec.cube(32)
    blob = Blob(BlobKind.SHELL, (0.0, 0.0, 0.0), (10.0, 10.0, 10.0), np.eye(3), 1.0, thickness=2.0)
    data = np.asarray(render(grid, [blob]).data)
    assert data[16, 16, 16] == 0.0
    x = np.asarray(grid.axes()[0])
    profile = data[:, 16, 16]
    assert profile[np.argmin(np.abs(np.abs(x) - 9.0))] > 0.9

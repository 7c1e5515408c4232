import csv
import math

import numpy as np
import pytest

from cryolocal.exceptions import DataError
from cryolocal.geometry import GridSpec, TiltGeometry, Volume
from cryolocal.mlp import MlpArch
from cryolocal.patch import PatchConfig
from cryolocal.phantom import PhantomSpec, generate_phantom
from cryolocal.pipeline import (LocalModel, TrainConfig, VoxelSampler, make_pair, reconstruct,
                                reconstruct_region, sample_minibatch, train)
from cryolocal.projector import NoiseModel, apply_noise, project

SMALL = dict(patch=PatchConfig(5), hidden=(16, 8), batch_size=32, val_every=10)


def phantom_pair(n=24, seed=0, angles=(-60, 60, 11), noise=None, pid="p"):
    vol = generate_phantom(PhantomSpec(GridSpec.cube(n), seed=seed, n_blobs=6, size_range=(2.0, 5.0)))
    ts = project(vol, TiltGeometry.uniform(*angles))
    if noise is not None:
        ts = apply_noise(ts, noise)
    return make_pair(vol, ts, id=pid)


@pytest.fixture(scope="module")
def pair24():
    return phantom_pair()


@pytest.fixture(scope="module")
def small_model(pair24):
    model, _ = train([pair24], TrainConfig(steps=30, seed=1, **SMALL))
    return model


def raw_series(pair_seed=0, n=24):
    vol = generate_phantom(PhantomSpec(GridSpec.cube(n), seed=pair_seed, n_blobs=6, size_range=(2.0, 5.0)))
    return project(vol, TiltGeometry.uniform(-60, 60, 11))


def test_margin_leaves_central_box():
    vol = Volume.zeros(GridSpec.cube(16))
    ts = project(vol, TiltGeometry.uniform(-60, 60, 3))
    pair = make_pair(Volume.from_array(np.arange(16.0**3).reshape(16, 16, 16)), ts)
    cfg = TrainConfig(patch=PatchConfig(3, 1.0, "none"), batch_size=1, margin=7, val_fraction=0.0)
    rng = np.random.default_rng(0)
    sampler = VoxelSampler([pair], cfg)
    seen = set()
    for _ in range(200):
        _, _, which, vox = sample_minibatch([pair], cfg, rng, sampler)
        assert np.all((vox >= 7) & (vox <= 8))
        seen.add(tuple(vox[0]))
    assert len(seen) == 8


def test_margin_too_large():
    ts = project(Volume.zeros(GridSpec.cube(16)), TiltGeometry.uniform(-60, 60, 3))
    pair = make_pair(Volume.zeros(GridSpec.cube(16)), ts)
    with pytest.raises(DataError):
        VoxelSampler([pair], TrainConfig(patch=PatchConfig(3, 1.0, "none"), margin=8))


def test_pair_selection_is_uniform(pair24):
    other = phantom_pair(seed=1, pid="q")
    sampler = VoxelSampler([pair24, other], TrainConfig(**SMALL))
    which, _ = sampler.draw(np.random.default_rng(7), 100_000)
    assert abs(np.mean(which == 0) - 0.5) <= 0.01


def test_minibatch_determinism_and_targets(pair24):
    cfg = TrainConfig(**SMALL)
    a = sample_minibatch([pair24], cfg, np.random.default_rng(3))
    b = sample_minibatch([pair24], cfg, np.random.default_rng(3))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    x, y, which, vox = a
    assert x.shape == (32, 11 * 25)
    ref = np.asarray(pair24.reference.data)
    np.testing.assert_array_equal(y, ref[vox[:, 0], vox[:, 1], vox[:, 2]])


def test_inconsistent_tilt_counts(pair24):
    other = phantom_pair(angles=(-60, 60, 9))
    with pytest.raises(DataError, match="tilt count"):
        train([pair24, other], TrainConfig(steps=1, **SMALL))
    with pytest.raises(DataError):
        VoxelSampler([], TrainConfig())


def test_pair_requires_filtered_and_aligned(pair24):
    from cryolocal.pipeline import TrainingPair

    with pytest.raises(DataError):
        TrainingPair(pair24.reference, raw_series())
    with pytest.raises(DataError):
        make_pair(Volume.zeros(GridSpec(24, 20, 24)), raw_series())


def test_config_validation():
    for kw in ({"steps": 0}, {"batch_size": 0}, {"val_fraction": 1.0}, {"margin": -1},
               {"lr_schedule": "step"}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_cosine_schedule():
    cfg = TrainConfig(steps=100, lr=1e-3, lr_schedule="cosine_decay")
    assert cfg.lr_at(1) == pytest.approx(1e-3)
    assert cfg.lr_at(51) == pytest.approx(5e-4)
    assert TrainConfig(lr=2e-4).lr_at(77) == 2e-4


def test_one_step_moves_parameters(pair24):
    from cryolocal.mlp import init_params

    cfg = TrainConfig(steps=1, val_fraction=0.0, seed=5, **SMALL)
    model, log = train([pair24], cfg)
    init = init_params(cfg.arch(11), seed=5)
    moved = [np.any(a != b) for a, b in zip(model.params.arrays, init.arrays)]
    assert all(moved)
    assert len(log.steps) == 1 and math.isnan(log.val_mse[0])


def test_training_is_reproducible(pair24, tmp_path):
    cfg = TrainConfig(steps=25, seed=2, **SMALL)
    (m1, l1), (m2, l2) = train([pair24], cfg), train([pair24], cfg)
    l1.to_csv(tmp_path / "a.csv")
    l2.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for a, b in zip(m1.params.arrays, m2.params.arrays):
        assert a.tobytes() == b.tobytes()


def test_log_csv_columns(pair24, tmp_path):
    _, log = train([pair24], TrainConfig(steps=20, **SMALL))
    log.to_csv(tmp_path / "log.csv")
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert list(rows[0]) == ["step", "train_mse", "val_mse", "lr"]
    assert len(rows) == 20
    assert rows[0]["val_mse"] == "" and rows[9]["val_mse"] != ""


def test_zero_val_fraction_holds_nothing_out(pair24):
    cfg = TrainConfig(steps=5, val_fraction=0.0, **SMALL)
    sampler = VoxelSampler([pair24], cfg)
    assert all(len(v) == 0 for v in sampler.val_idx)
    assert sampler.validation_set(np.random.default_rng(0), 100) is None
    _, log = train([pair24], cfg)
    assert all(math.isnan(v) for v in log.val_mse)


def test_validation_voxels_excluded_from_training(pair24):
    sampler = VoxelSampler([pair24], TrainConfig(val_fraction=0.2, **SMALL))
    train_set = {tuple(v) for v in sampler.train_idx[0]}
    val_set = {tuple(v) for v in sampler.val_idx[0]}
    assert val_set and not (train_set & val_set)


def test_overfit_probe():
    pair = phantom_pair(n=64, angles=(-60, 60, 41))
    cfg = TrainConfig(patch=PatchConfig(5), hidden=(64, 32), steps=5000, batch_size=64,
                      val_fraction=0.0)
    _, log = train([pair], cfg)
    initial = log.train_mse[0]
    final = float(np.mean(log.train_mse[-100:]))
    assert final < 0.1 * initial


def test_fixed_batch_descent_is_monotone():
    pair = phantom_pair(n=32, angles=(-60, 60, 21))
    cfg = TrainConfig(patch=PatchConfig(5), hidden=(32, 16), steps=500, batch_size=128,
                      val_fraction=0.0, fixed_batch=True)
    _, log = train([pair], cfg)
    d = np.diff(log.train_mse)[49:]
    assert np.mean(d <= 0) >= 0.95


def test_chunk_invariance(small_model):
    ts = raw_series(3)
    a = reconstruct(ts, small_model, chunk_size=1)
    b = reconstruct(ts, small_model, chunk_size=4096)
    c = reconstruct(ts, small_model, chunk_size=300)
    assert a.data.tobytes() == b.data.tobytes() == c.data.tobytes()


def test_sub_box_consistency(small_model):
    ts = raw_series(4)
    full = np.asarray(reconstruct(ts, small_model).data)
    grid = GridSpec.cube(24)
    region = ((3, 11), (20, 24), (0, 7))
    sub = reconstruct_region(ts, small_model, grid, region, chunk_size=17)
    assert sub.tobytes() == full[3:11, 20:24, 0:7].tobytes()


def test_zero_weights_give_constant_volume(small_model):
    params = small_model.params.zeros_like()
    model = LocalModel(small_model.arch, params, small_model.patch, 11, 0.0, 1.0)
    vol = reconstruct(raw_series(5), model)
    assert not np.any(vol.data)
    shifted = LocalModel(small_model.arch, params, small_model.patch, 11, 0.25, 2.0)
    assert np.all(np.asarray(reconstruct(raw_series(5), shifted).data) == np.float32(0.25))


def test_reconstruct_dimension_mismatch(small_model):
    ts = project(Volume.zeros(GridSpec.cube(24)), TiltGeometry.uniform(-60, 60, 9))
    with pytest.raises(DataError, match="expects 11 tilts but the series has 9"):
        reconstruct(ts, small_model)
    bad = LocalModel(MlpArch(10, (16, 8)), small_model.params, small_model.patch, 11)
    with pytest.raises(DataError):
        reconstruct(raw_series(), bad)


def test_reconstruct_filters_internally(small_model):
    from cryolocal.filtering import ramp_filter

    ts = raw_series(6)
    a = reconstruct(ts, small_model)
    b = reconstruct(ramp_filter(ts, small_model.filter), small_model)
    assert a.data.tobytes() == b.data.tobytes()


def test_noisy_training_runs():
    pair = phantom_pair(noise=NoiseModel("gaussian", 0.5, seed=3))
    model, log = train([pair], TrainConfig(steps=10, **SMALL))
    assert np.all(np.isfinite(log.train_mse))
    assert model.target_scale > 0

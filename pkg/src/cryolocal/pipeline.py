"""Supervised training of the voxel-wise network and full-volume inference."""

from __future__ import annotations

import csv
import enum
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError
from .filtering import FilterSpec, ramp_filter
from .geometry import GridSpec, SeriesKind, TiltSeries, Volume
from .mlp import (Activation, AdamState, MlpArch, MlpParams, adam_step, forward_batch,
                  init_params, mlp_backward)
from .patch import FeatureSampler, PatchConfig

log = logging.getLogger(__name__)

# rows per network evaluation; every voxel goes through an identically shaped
# matmul regardless of chunking, which keeps outputs bitwise chunk-invariant
INFER_BLOCK = 256


class LrSchedule(str, enum.Enum):
    CONSTANT = "constant"
    COSINE = "cosine_decay"


@dataclass(frozen=True)
class TrainConfig:
    patch: PatchConfig = field(default_factory=PatchConfig)
    hidden: tuple[int, ...] = (512, 512, 256, 128)
    activation: Activation = Activation.RELU
    steps: int = 20000
    batch_size: int = 1024
    lr: float = 1e-4
    lr_schedule: LrSchedule = LrSchedule.CONSTANT
    seed: int = 0
    val_fraction: float = 0.05
    val_max_voxels: int = 2048
    val_every: int = 100
    margin: int | None = None
    target_zscore: bool = True
    filter: FilterSpec = field(default_factory=FilterSpec)
    fixed_batch: bool = False

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "lr_schedule", LrSchedule(self.lr_schedule))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.steps < 1:
            raise DataError("steps must be at least 1")
        if self.batch_size < 1:
            raise DataError("batch_size must be at least 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise DataError("val_fraction must lie in [0, 1)")
        if self.margin is not None and self.margin < 0:
            raise DataError("margin must be nonnegative")

    @property
    def effective_margin(self) -> int:
        return self.patch.default_margin() if self.margin is None else int(self.margin)

    def arch(self, n_tilts: int) -> MlpArch:
        return MlpArch(self.patch.feature_dim(n_tilts), self.hidden, self.activation)

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based ``step``."""
        if self.lr_schedule is LrSchedule.CONSTANT:
            return self.lr
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * (step - 1) / self.steps))


@dataclass(frozen=True)
class TrainingPair:
    reference: Volume
    measurements: TiltSeries
    id: str = ""

    def __post_init__(self):
        if self.measurements.kind is not SeriesKind.FILTERED:
            raise DataError(f"pair {self.id!r}: measurements must be ramp-filtered")
        if self.measurements.det_v != self.reference.grid.ny:
            raise DataError(
                f"pair {self.id!r}: detector v size {self.measurements.det_v} != grid ny "
                f"{self.reference.grid.ny}"
            )


def make_pair(reference: Volume, series: TiltSeries, filter_spec: FilterSpec = FilterSpec(),
              id: str = "") -> TrainingPair:
    if series.kind is not SeriesKind.FILTERED:
        series = ramp_filter(series, filter_spec)
    return TrainingPair(reference, series, id)


@dataclass
class LocalModel:
    """A trained network together with everything needed to apply it."""

    arch: MlpArch
    params: MlpParams
    patch: PatchConfig
    n_tilts: int
    target_shift: float = 0.0
    target_scale: float = 1.0
    filter: FilterSpec = field(default_factory=FilterSpec)

    def check_series(self, ts: TiltSeries):
        if ts.n_tilts != self.n_tilts:
            raise DataError(
                f"model expects {self.n_tilts} tilts but the series has {ts.n_tilts}"
            )
        if self.arch.input_dim != self.patch.feature_dim(ts.n_tilts):
            raise DataError(
                f"network input {self.arch.input_dim} != feature length "
                f"{self.patch.feature_dim(ts.n_tilts)}"
            )
        if not self.params.matches(self.arch):
            raise DataError("parameter shapes do not match the architecture")


@dataclass
class TrainingLog:
    steps: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def append(self, step, train, val, lr):
        self.steps.append(int(step))
        self.train_mse.append(float(train))
        self.val_mse.append(float(val))
        self.lr.append(float(lr))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_mse", "val_mse", "lr"])
            for row in zip(self.steps, self.train_mse, self.val_mse, self.lr):
                w.writerow([row[0]] + ["" if math.isnan(x) else repr(x) for x in row[1:]])


def _interior_box(grid: GridSpec, margin: int) -> tuple[np.ndarray, ...]:
    axes = []
    for n in grid.shape:
        lo, hi = margin, n - 1 - margin
        if hi < lo:
            raise DataError(f"margin {margin} leaves no interior voxels on a grid of {grid.shape}")
        axes.append(np.arange(lo, hi + 1))
    return tuple(axes)


class VoxelSampler:
    """Uniform (pair, voxel) sampling with an optional held-out voxel split."""

    def __init__(self, pairs, cfg: TrainConfig):
        if not pairs:
            raise DataError("at least one training pair is required")
        n = {p.measurements.n_tilts for p in pairs}
        if len(n) != 1:
            raise DataError(f"training pairs disagree on tilt count: {sorted(n)}")
        det = {p.measurements.data.shape[1:] for p in pairs}
        if len(det) != 1:
            raise DataError(f"training pairs disagree on detector shape: {sorted(det)}")
        self.pairs = list(pairs)
        self.cfg = cfg
        self.n_tilts = n.pop()
        self.samplers = [FeatureSampler(p.measurements, cfg.patch) for p in pairs]
        self.targets = [np.asarray(p.reference.data, dtype=np.float64) for p in pairs]
        margin = cfg.effective_margin
        split_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(cfg.seed), 1])))
        self.train_idx, self.val_idx = [], []
        for p in self.pairs:
            box = _interior_box(p.reference.grid, margin)
            grid_idx = np.stack(np.meshgrid(*box, indexing="ij"), axis=-1).reshape(-1, 3)
            if cfg.val_fraction > 0:
                held = split_rng.random(len(grid_idx)) < cfg.val_fraction
                self.train_idx.append(grid_idx[~held])
                self.val_idx.append(grid_idx[held])
            else:
                self.train_idx.append(grid_idx)
                self.val_idx.append(grid_idx[:0])
        if any(len(t) == 0 for t in self.train_idx):
            raise DataError("no training voxels left after the validation split")

    @property
    def dim(self) -> int:
        return self.samplers[0].dim

    def draw(self, rng: np.random.Generator, batch_size: int):
        """Pair indices and voxel indices of ``batch_size`` uniform draws."""
        which = rng.integers(len(self.pairs), size=batch_size)
        u = rng.random(batch_size)
        vox = np.empty((batch_size, 3), dtype=np.int64)
        for k in range(len(self.pairs)):
            sel = which == k
            if sel.any():
                pool = self.train_idx[k]
                vox[sel] = pool[np.minimum((u[sel] * len(pool)).astype(np.int64), len(pool) - 1)]
        return which, vox

    def batch(self, which, vox, dtype=np.float32):
        x = np.empty((len(which), self.dim), dtype=dtype)
        y = np.empty(len(which))
        for k in range(len(self.pairs)):
            sel = np.flatnonzero(which == k)
            if sel.size == 0:
                continue
            grid = self.pairs[k].reference.grid
            pts = grid.coords(vox[sel, 0], vox[sel, 1], vox[sel, 2])
            x[sel] = self.samplers[k].features(pts, dtype=dtype)
            y[sel] = self.targets[k][vox[sel, 0], vox[sel, 1], vox[sel, 2]]
        return x, y

    def validation_set(self, rng: np.random.Generator, max_voxels: int):
        if sum(len(v) for v in self.val_idx) == 0:
            return None
        which = np.concatenate([np.full(len(v), k) for k, v in enumerate(self.val_idx)])
        vox = np.concatenate(self.val_idx)
        if len(which) > max_voxels:
            keep = np.sort(rng.choice(len(which), size=max_voxels, replace=False))
            which, vox = which[keep], vox[keep]
        return self.batch(which, vox)


def sample_minibatch(pairs, cfg: TrainConfig, rng: np.random.Generator, sampler: VoxelSampler | None = None):
    """Draw ``cfg.batch_size`` (features, target) samples; also returns the drawn indices.

    Returns ``(features, targets, pair_indices, voxel_indices)``. Targets are raw
    reference values (no normalization).
    """
    sampler = VoxelSampler(pairs, cfg) if sampler is None else sampler
    which, vox = sampler.draw(rng, cfg.batch_size)
    x, y = sampler.batch(which, vox)
    return x, y, which, vox


def _target_affine(pairs, cfg: TrainConfig) -> tuple[float, float]:
    if not cfg.target_zscore:
        return 0.0, 1.0
    vals = np.concatenate([np.asarray(p.reference.data, dtype=np.float64).ravel() for p in pairs])
    std = vals.std()
    return float(vals.mean()), float(std) if std > 0 else 1.0


def train(pairs, cfg: TrainConfig, callback=None) -> tuple[LocalModel, TrainingLog]:
    """Minimize the voxel-wise squared error with Adam; returns the best-validation model.

    Training and validation MSE are logged in normalized target units. Without
    a validation split the final parameters are returned.
    """
    sampler = VoxelSampler(pairs, cfg)
    arch = cfg.arch(sampler.n_tilts)
    shift, scale = _target_affine(pairs, cfg)
    params = init_params(arch, cfg.seed)
    state = AdamState.zeros(params, lr=cfg.lr)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(cfg.seed), 2])))
    val_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(cfg.seed), 3])))
    val = sampler.validation_set(val_rng, cfg.val_max_voxels)
    if val is not None:
        val = (val[0], (val[1] - shift) / scale)
    fixed = None
    best, best_val = None, math.inf
    out_log = TrainingLog()
    t0 = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        if fixed is None or not cfg.fixed_batch:
            which, vox = sampler.draw(rng, cfg.batch_size)
            x, y = sampler.batch(which, vox)
            y = (y - shift) / scale
            if cfg.fixed_batch:
                fixed = (x, y)
        else:
            x, y = fixed
        loss, grads = mlp_backward(params, x, y, arch.activation)
        lr = cfg.lr_at(step)
        adam_step(params, grads, state, lr=lr, inplace=True)
        val_mse = math.nan
        if val is not None and (step % cfg.val_every == 0 or step == cfg.steps):
            pred = forward_batch(params, val[0], arch.activation).astype(np.float64)
            val_mse = float(np.mean((pred - val[1]) ** 2))
            if val_mse < best_val:
                best_val, best = val_mse, params.copy()
            log.info("step %d/%d train %.4g val %.4g (%.0fs)", step, cfg.steps, loss, val_mse,
                     time.perf_counter() - t0)
        out_log.append(step, loss, val_mse, lr)
        if callback is not None:
            callback(step, loss, val_mse)
    final = best if best is not None else params
    model = LocalModel(arch, final, cfg.patch, sampler.n_tilts, shift, scale, cfg.filter)
    return model, out_log


def _region_points(grid: GridSpec, region):
    ranges = []
    for (lo, hi), n in zip(region, grid.shape):
        if not 0 <= lo < hi <= n:
            raise DataError(f"region {region} outside grid {grid.shape}")
        ranges.append(np.arange(lo, hi))
    idx = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid.coords(idx[:, 0], idx[:, 1], idx[:, 2]), tuple(hi - lo for lo, hi in region)


def predict_points(sampler: FeatureSampler, model: LocalModel, points, chunk_size: int = 4096) -> np.ndarray:
    """Network estimate (in reference units, float32) at centered points ``(M, 3)``.

    Features are gathered ``chunk_size`` points at a time into a fixed
    ``INFER_BLOCK``-row buffer; the network only ever sees whole, aligned blocks,
    so the output does not depend on ``chunk_size``.
    """
    if chunk_size < 1:
        raise DataError("chunk_size must be positive")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(points), dtype=np.float32)
    block = np.zeros((INFER_BLOCK, sampler.dim), dtype=np.float32)
    act = model.arch.activation
    for b0 in range(0, len(points), INFER_BLOCK):
        b1 = min(b0 + INFER_BLOCK, len(points))
        block[b1 - b0:] = 0.0
        for c0 in range(b0, b1, chunk_size):
            c1 = min(c0 + chunk_size, b1)
            block[c0 - b0:c1 - b0] = sampler.features(points[c0:c1], dtype=np.float32)
        pred = forward_batch(model.params, block, act)[:b1 - b0].astype(np.float64)
        out[b0:b1] = pred * model.target_scale + model.target_shift
    return out


def reconstruct_region(ts: TiltSeries, model: LocalModel, grid: GridSpec, region,
                       chunk_size: int = 4096) -> np.ndarray:
    """Reconstruct the index box ``region = ((x0, x1), (y0, y1), (z0, z1))`` of ``grid``."""
    model.check_series(ts)
    if ts.kind is not SeriesKind.FILTERED:
        ts = ramp_filter(ts, model.filter)
    if ts.det_v != grid.ny:
        raise DataError(f"detector v size {ts.det_v} must equal grid ny {grid.ny}")
    pts, shape = _region_points(grid, region)
    sampler = FeatureSampler(ts, model.patch)
    return predict_points(sampler, model, pts, chunk_size).reshape(shape)


def reconstruct(ts: TiltSeries, model: LocalModel, grid: GridSpec | None = None,
                chunk_size: int = 4096) -> Volume:
    """Voxel-wise reconstruction of a raw (clean or noisy) tilt series.

    The series is ramp-filtered with the model's filter before patches are
    taken. ``grid`` defaults to a cube of side ``det_u`` with ``ny = det_v``.
    """
    if grid is None:
        grid = GridSpec(ts.det_u, ts.det_v, ts.det_u, ts.pixel_size)
    region = tuple((0, n) for n in grid.shape)
    return Volume(grid, reconstruct_region(ts, model, grid, region, chunk_size))

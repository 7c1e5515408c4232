"""scikit-learn style estimators wrapping the reconstruction pipeline.

``X`` is a tilt series (or a list of them for ``fit``) and ``y`` the matching
reference volume(s). Hyperparameters live in ``__init__`` so ``get_params``,
``set_params`` and ``sklearn.base.clone`` work as usual.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import io
from .exceptions import DataError
from .fbp import fbp
from .filtering import FilterSpec
from .geometry import GridSpec, SeriesKind, TiltSeries, Volume
from .metrics import fsc, fsc_auc
from .patch import PatchConfig
from .pipeline import TrainConfig, make_pair, reconstruct, train


def check_tilt_series(ts, allow_filtered: bool = False) -> TiltSeries:
    if not isinstance(ts, TiltSeries):
        raise TypeError(f"expected a TiltSeries, got {type(ts).__name__}")
    if ts.kind is SeriesKind.FILTERED and not allow_filtered:
        raise DataError("expected a raw (clean or noisy) tilt series, got a filtered one")
    return ts


def check_volume(v) -> Volume:
    if not isinstance(v, Volume):
        raise TypeError(f"expected a Volume, got {type(v).__name__}")
    return v


def check_training_data(X, y) -> tuple[list[TiltSeries], list[Volume]]:
    if isinstance(X, TiltSeries):
        X = [X]
    if isinstance(y, Volume):
        y = [y]
    X = [check_tilt_series(t, allow_filtered=True) for t in X]
    y = [check_volume(v) for v in y]
    if len(X) != len(y):
        raise DataError(f"{len(X)} tilt series but {len(y)} reference volumes")
    if not X:
        raise DataError("no training data")
    return X, y


def default_grid(ts: TiltSeries) -> GridSpec:
    return GridSpec(ts.det_u, ts.det_v, ts.det_u, ts.pixel_size)


def _score(est, X, y) -> float:
    return fsc_auc(fsc(est.predict(X, grid=y.grid), y))


class FBPReconstructor(BaseEstimator):
    """Filtered back-projection; stateless, ``fit`` only records the grid."""

    def __init__(self, filter="ramlak", pad_factor=2, nz=None):
        self.filter = filter
        self.pad_factor = pad_factor
        self.nz = nz

    def fit(self, X=None, y=None):
        self.filter_spec_ = FilterSpec(self.filter, self.pad_factor)
        return self

    def predict(self, X, grid: GridSpec | None = None) -> Volume:
        check_is_fitted(self)
        X = check_tilt_series(X, allow_filtered=True)
        if grid is None:
            g = default_grid(X)
            grid = GridSpec(g.nx, g.ny, self.nz or g.nz, g.voxel_size)
        return fbp(X, grid, self.filter_spec_)

    def score(self, X, y) -> float:
        """FSC area under curve of the reconstruction against ``y``."""
        return _score(self, X, check_volume(y))


class LocalMLPReconstructor(BaseEstimator):
    """Voxel-wise reconstruction by an MLP over localized filtered-projection patches."""

    def __init__(self, patch_size=11, delta=1.0, normalize="per_series_zscore",
                 hidden=(512, 512, 256, 128), activation="relu", steps=20000, batch_size=1024,
                 lr=1e-4, lr_schedule="constant", val_fraction=0.05, val_max_voxels=2048,
                 margin=None, target_zscore=True, filter="ramlak", pad_factor=2, seed=0,
                 chunk_size=4096):
        self.patch_size = patch_size
        self.delta = delta
        self.normalize = normalize
        self.hidden = hidden
        self.activation = activation
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.lr_schedule = lr_schedule
        self.val_fraction = val_fraction
        self.val_max_voxels = val_max_voxels
        self.margin = margin
        self.target_zscore = target_zscore
        self.filter = filter
        self.pad_factor = pad_factor
        self.seed = seed
        self.chunk_size = chunk_size

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            patch=PatchConfig(self.patch_size, self.delta, self.normalize),
            hidden=tuple(self.hidden), activation=self.activation, steps=self.steps,
            batch_size=self.batch_size, lr=self.lr, lr_schedule=self.lr_schedule, seed=self.seed,
            val_fraction=self.val_fraction, val_max_voxels=self.val_max_voxels, margin=self.margin,
            target_zscore=self.target_zscore, filter=FilterSpec(self.filter, self.pad_factor),
        )

    def fit(self, X, y, callback=None):
        X, y = check_training_data(X, y)
        cfg = self.train_config()
        pairs = [make_pair(v, t, cfg.filter, id=str(k)) for k, (t, v) in enumerate(zip(X, y))]
        self.model_, self.training_log_ = train(pairs, cfg, callback=callback)
        self.n_tilts_ = self.model_.n_tilts
        return self

    def predict(self, X, grid: GridSpec | None = None) -> Volume:
        check_is_fitted(self, "model_")
        X = check_tilt_series(X)
        return reconstruct(X, self.model_, grid or default_grid(X), self.chunk_size)

    def score(self, X, y) -> float:
        """FSC area under curve of the reconstruction against ``y``."""
        return _score(self, X, check_volume(y))

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        io.save_checkpoint(path, self.model_)

    @classmethod
    def load(cls, path, **kw) -> LocalMLPReconstructor:
        """Estimator whose hyperparameters mirror a saved checkpoint."""
        model = io.load_checkpoint(path)
        est = cls(patch_size=model.patch.size, delta=model.patch.delta,
                  normalize=model.patch.normalize.value, hidden=model.arch.hidden,
                  activation=model.arch.activation.value, filter=model.filter.kind.value,
                  pad_factor=model.filter.pad_factor, **kw)
        est.model_ = model
        est.n_tilts_ = model.n_tilts
        return est


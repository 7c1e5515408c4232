"""JSON run configuration with strict keys and flag overrides."""

from __future__ import annotations

import copy
import json
import platform
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .filtering import FilterSpec
from .geometry import GridSpec, TiltGeometry
from .patch import PatchConfig
from .phantom import PhantomSpec
from .pipeline import TrainConfig

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "angles": "-60:60:41",
    "noise": "gaussian:0.5",
    "phantom": {
        "size": 64,
        "n_blobs": 12,
        "blob_kind": "ellipsoid",
        "density_range": [0.5, 1.0],
        "background": 0.0,
        "size_range": [2.0, 8.0],
    },
    "projector": {"step": 1.0},
    "filter": {"kind": "ramlak", "pad_factor": 2},
    "patch": {"size": 11, "delta": 1.0, "normalize": "per_series_zscore"},
    "train": {
        "hidden": [512, 512, 256, 128],
        "activation": "relu",
        "steps": 20000,
        "batch_size": 1024,
        "lr": 1e-4,
        "lr_schedule": "constant",
        "val_fraction": 0.05,
        "val_max_voxels": 2048,
        "val_every": 100,
        "margin": None,
        "target_zscore": True,
    },
    "reconstruct": {"chunk_size": 4096},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise DataError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise DataError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def resolve(file: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then dotted-key ``overrides`` (``None`` values skipped)."""
    cfg = copy.deepcopy(DEFAULTS)
    if file is not None:
        try:
            loaded = json.loads(Path(file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{file}: cannot read config ({exc})") from exc
        if not isinstance(loaded, dict):
            raise DataError(f"{file}: config must be a JSON object")
        cfg = _merge(cfg, loaded)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        nested = value
        for part in reversed(dotted.split(".")):
            nested = {part: nested}
        cfg = _merge(cfg, nested)
    return cfg


def parse_angles(text: str) -> TiltGeometry:
    """``"start:stop:count"``, inclusive of both ends."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"angle spec {text!r} is not start:stop:count")
    start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 1 or (count == 1 and start != stop) or (count > 1 and stop <= start):
        raise ValueError(f"angle spec {text!r} does not describe increasing angles")
    return TiltGeometry.uniform(start, stop, count)


def phantom_spec(cfg: dict, seed: int) -> PhantomSpec:
    p = cfg["phantom"]
    return PhantomSpec(
        GridSpec.cube(int(p["size"])), seed=seed, n_blobs=int(p["n_blobs"]), blob_kind=p["blob_kind"],
        density_range=tuple(p["density_range"]), background=float(p["background"]),
        size_range=tuple(p["size_range"]),
    )


def filter_spec(cfg: dict) -> FilterSpec:
    return FilterSpec(cfg["filter"]["kind"], int(cfg["filter"]["pad_factor"]))


def patch_config(cfg: dict) -> PatchConfig:
    p = cfg["patch"]
    return PatchConfig(int(p["size"]), float(p["delta"]), p["normalize"])


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        patch=patch_config(cfg), hidden=tuple(t["hidden"]), activation=t["activation"],
        steps=int(t["steps"]), batch_size=int(t["batch_size"]), lr=float(t["lr"]),
        lr_schedule=t["lr_schedule"], seed=int(cfg["seed"]), val_fraction=float(t["val_fraction"]),
        val_max_voxels=int(t["val_max_voxels"]), val_every=int(t["val_every"]), margin=t["margin"],
        target_zscore=bool(t["target_zscore"]), filter=filter_spec(cfg),
    )


def versions() -> dict:
    import numba
    import sklearn

    from . import __version__

    return {
        "cryolocal": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "scikit-learn": sklearn.__version__,
    }


def write_resolved(out_dir: str | Path, cfg: dict, command: str) -> Path:
    out = Path(out_dir) / f"{command}_config.json"
    payload = {"command": command, "config": cfg, "versions": versions()}
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return out

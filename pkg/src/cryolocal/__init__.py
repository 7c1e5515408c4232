"""Voxel-wise cryo-ET reconstruction from localized patches of ramp-filtered tilt series."""

__version__ = "0.1.0"

from .estimators import FBPReconstructor, LocalMLPReconstructor
from .exceptions import CryoLocalError, DataError, FormatError, NumericalError
from .fbp import backproject, fbp
from .filtering import FilterSpec, ramp_filter
from .geometry import (GridSpec, SeriesKind, TiltGeometry, TiltSeries, Volume,
                       sample_volume_trilinear, world_to_detector)
from .metrics import FscCurve, fsc, fsc_auc, psnr
from .patch import PatchConfig, assemble_features, extract_patch
from .phantom import PhantomSpec, generate_phantom
from .pipeline import LocalModel, TrainConfig, TrainingPair, reconstruct, train
from .projector import NoiseModel, apply_noise, project

__all__ = [
    "FBPReconstructor", "LocalMLPReconstructor", "CryoLocalError", "DataError", "FormatError",
    "NumericalError", "backproject", "fbp", "FilterSpec", "ramp_filter", "GridSpec", "SeriesKind",
    "TiltGeometry", "TiltSeries", "Volume", "sample_volume_trilinear", "world_to_detector",
    "FscCurve", "fsc", "fsc_auc", "psnr", "PatchConfig", "assemble_features", "extract_patch",
    "PhantomSpec", "generate_phantom", "LocalModel", "TrainConfig", "TrainingPair", "reconstruct",
    "train", "NoiseModel", "apply_noise", "project",
]

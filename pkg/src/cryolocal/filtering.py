"""Ramp filtering of projection rows along the detector u axis."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .geometry import SeriesKind, TiltSeries


class FilterKind(str, enum.Enum):
    RAMLAK = "ramlak"
    HANN = "hann_windowed_ramlak"


@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind = FilterKind.RAMLAK
    pad_factor: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", FilterKind(self.kind))
        if int(self.pad_factor) != self.pad_factor or self.pad_factor < 2:
            raise DataError(f"pad_factor must be an integer >= 2, got {self.pad_factor}")

    def pad_length(self, det_u: int) -> int:
        """Smallest power of two that is at least ``pad_factor * det_u``."""
        need = int(self.pad_factor) * int(det_u)
        return 1 << (need - 1).bit_length()


def ramp_response(length: int, kind: FilterKind = FilterKind.RAMLAK) -> np.ndarray:
    """Frequency response ``|k| / L`` on the DFT grid, optionally Hann-windowed."""
    kind = FilterKind(kind)
    k = np.abs(np.fft.fftfreq(length) * length)
    h = k / length
    if kind is FilterKind.HANN:
        k_max = length // 2
        h = h * 0.5 * (1.0 + np.cos(np.pi * k / k_max))
    return h


def filter_rows(rows: np.ndarray, length: int, kind: FilterKind = FilterKind.RAMLAK,
                axis: int = -1) -> np.ndarray:
    """Zero-pad ``rows`` along ``axis`` to ``length``, apply the ramp, crop back."""
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[axis]
    if length < n:
        raise DataError(f"pad length {length} shorter than row length {n}")
    spec = np.fft.fft(rows, n=length, axis=axis)
    shape = [1] * rows.ndim
    shape[axis] = length
    spec *= ramp_response(length, kind).reshape(shape)
    full = np.fft.ifft(spec, axis=axis)
    out = np.take(full, np.arange(n), axis=axis)
    scale = max(np.abs(out).max(), np.finfo(float).tiny)
    if np.abs(out.imag).max() > 1e-9 * scale:
        raise ArithmeticError("ramp filter produced a non-negligible imaginary part")
    return out.real


def ramp_filter(ts: TiltSeries, spec: FilterSpec = FilterSpec()) -> TiltSeries:
    """Ramp-filter every projection row along u (the axis perpendicular to the tilt axis)."""
    if ts.kind is SeriesKind.FILTERED:
        raise DataError("tilt series is already filtered")
    length = spec.pad_length(ts.det_u)
    out = filter_rows(ts.data, length, spec.kind, axis=1)
    return ts.replace(out, SeriesKind.FILTERED)

"""Fourier shell correlation, PSNR and MSE."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .geometry import Volume


@dataclass(frozen=True)
class FscCurve:
    shell_frequencies: np.ndarray  # cycles per voxel
    values: np.ndarray
    shell_counts: np.ndarray

    def __len__(self):
        return len(self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frequency", "fsc", "shell_count"])
            for f, v, c in zip(self.shell_frequencies, self.values, self.shell_counts):
                w.writerow([repr(float(f)), repr(float(v)), int(c)])

    @classmethod
    def from_csv(cls, path) -> FscCurve:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            np.array([float(r["frequency"]) for r in rows]),
            np.array([float(r["fsc"]) for r in rows]),
            np.array([int(r["shell_count"]) for r in rows]),
        )


def _check_pair(a: Volume, b: Volume):
    if a.grid.shape != b.grid.shape:
        raise DataError(f"grid mismatch: {a.grid.shape} vs {b.grid.shape}")


def shell_index(shape, shell_width: float = 1.0) -> tuple[np.ndarray, float]:
    """Integer shell label of every DFT sample and the frequency step per shell.

    Radii are measured in frequency voxels of the largest axis, so on a cube
    shell ``s`` sits at ``s * shell_width / n`` cycles per voxel.
    """
    n_max = max(shape)
    freqs = np.meshgrid(*[np.fft.fftfreq(n) for n in shape], indexing="ij")
    radius = np.sqrt(sum(f**2 for f in freqs)) * n_max
    return np.rint(radius / shell_width).astype(np.int64), shell_width / n_max


def fsc(a: Volume, b: Volume, shell_width: float = 1.0) -> FscCurve:
    _check_pair(a, b)
    if not shell_width > 0:
        raise DataError("shell_width must be positive")
    fa = np.fft.fftn(np.asarray(a.data, dtype=np.float64))
    fb = np.fft.fftn(np.asarray(b.data, dtype=np.float64))
    labels, df = shell_index(a.grid.shape, shell_width)
    labels = labels.ravel()
    n_shells = labels.max() + 1
    cross = np.bincount(labels, weights=(fa * np.conj(fb)).real.ravel(), minlength=n_shells)
    ea = np.bincount(labels, weights=(np.abs(fa) ** 2).ravel(), minlength=n_shells)
    eb = np.bincount(labels, weights=(np.abs(fb) ** 2).ravel(), minlength=n_shells)
    counts = np.bincount(labels, minlength=n_shells)
    s = np.arange(n_shells)
    freq = s * df
    keep = (s > 0) & (counts > 0) & (freq <= 0.5 + 1e-12)
    denom = np.sqrt(ea * eb)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(denom > 0, cross / np.where(denom > 0, denom, 1.0), 0.0)
    vals = np.clip(vals, -1.0, 1.0)
    return FscCurve(freq[keep], vals[keep], counts[keep])


def fsc_auc(curve: FscCurve) -> float:
    """Trapezoidal area under ``max(fsc, 0)`` over the shell frequencies."""
    if len(curve) == 0:
        raise DataError("empty FSC curve")
    v = np.maximum(np.asarray(curve.values, dtype=np.float64), 0.0)
    f = np.asarray(curve.shell_frequencies, dtype=np.float64)
    if v.size == 1:
        return 0.0
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(f)))


def mse(a: Volume, b: Volume) -> float:
    _check_pair(a, b)
    d = np.asarray(a.data, dtype=np.float64) - np.asarray(b.data, dtype=np.float64)
    return float(np.mean(d * d))


def psnr(a: Volume, b: Volume) -> float:
    """Peak SNR of ``a`` against reference ``b`` in dB; ``math.inf`` when identical."""
    _check_pair(a, b)
    ref = np.asarray(b.data, dtype=np.float64)
    peak = ref.max() - ref.min()
    if peak == 0:
        raise DataError("PSNR reference volume is constant")
    err = mse(a, b)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def central_box(volume: Volume, size: int) -> Volume:
    """The centered ``size``-cube (clipped to the grid) of ``volume``."""
    sl = []
    for n in volume.grid.shape:
        m = min(size, n)
        lo = (n - m) // 2
        sl.append(slice(lo, lo + m))
    return Volume.from_array(volume.data[tuple(sl)], volume.grid.voxel_size)


def central_profiles(volume: Volume) -> dict[str, np.ndarray]:
    """Profiles through the grid center along x, y and z."""
    cx, cy, cz = (n // 2 for n in volume.grid.shape)
    d = np.asarray(volume.data, dtype=np.float64)
    return {"x": d[:, cy, cz], "y": d[cx, :, cz], "z": d[cx, cy, :]}


def fwhm(profile) -> float:
    """Full width at half maximum of the peak of a 1D profile, with linear interpolation."""
    p = np.asarray(profile, dtype=np.float64)
    k = int(np.argmax(p))
    half = 0.5 * p[k]
    left = k
    while left > 0 and p[left - 1] >= half:
        left -= 1
    right = k
    while right < len(p) - 1 and p[right + 1] >= half:
        right += 1
    lo = float(left)
    if left > 0:
        lo = left - (p[left] - half) / (p[left] - p[left - 1])
    hi = float(right)
    if right < len(p) - 1:
        hi = right + (p[right] - half) / (p[right] - p[right + 1])
    return hi - lo

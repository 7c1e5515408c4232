"""File formats: MRC2014 subset (mode 2 only), ``.tlt`` angle sidecars and ``.lmlp`` checkpoints.

MRC data are float32 with x fastest, then y, then z (the section axis). A
volume maps to ``(nx, ny, nz) = grid.shape``; a tilt stack maps to
``(det_u, det_v, n_tilts)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError, FormatError
from .filtering import FilterKind, FilterSpec
from .geometry import GridSpec, SeriesKind, TiltGeometry, TiltSeries, Volume
from .mlp import Activation, MlpArch, MlpParams
from .patch import Normalize, PatchConfig
from .pipeline import LocalModel

HEADER_BYTES = 1024
MODE_FLOAT32 = 2
_STAMP_LE = b"\x44\x44\x00\x00"
_STAMP_BE = b"\x11\x11\x00\x00"


@dataclass(frozen=True)
class MrcHeader:
    nx: int
    ny: int
    nz: int
    mode: int = MODE_FLOAT32
    cell: tuple[float, float, float] = (1.0, 1.0, 1.0)
    dmin: float = 0.0
    dmax: float = 0.0
    dmean: float = 0.0
    rms: float = 0.0
    ispg: int = 1
    nsymbt: int = 0
    byteorder: str = "<"

    @property
    def pixel_size(self) -> float:
        return self.cell[0] / self.nx if self.nx else 1.0

    def pack(self) -> bytes:
        e = "<"
        buf = bytearray(HEADER_BYTES)
        struct.pack_into(e + "3i", buf, 0, self.nx, self.ny, self.nz)
        struct.pack_into(e + "i", buf, 12, self.mode)
        struct.pack_into(e + "3i", buf, 16, 0, 0, 0)
        struct.pack_into(e + "3i", buf, 28, self.nx, self.ny, self.nz)
        struct.pack_into(e + "3f", buf, 40, *self.cell)
        struct.pack_into(e + "3f", buf, 52, 90.0, 90.0, 90.0)
        struct.pack_into(e + "3i", buf, 64, 1, 2, 3)
        struct.pack_into(e + "3f", buf, 76, self.dmin, self.dmax, self.dmean)
        struct.pack_into(e + "2i", buf, 88, self.ispg, 0)
        struct.pack_into(e + "i", buf, 108, 20140)
        buf[208:212] = b"MAP "
        buf[212:216] = _STAMP_LE
        struct.pack_into(e + "f", buf, 216, self.rms)
        struct.pack_into(e + "i", buf, 220, 1)
        label = b"cryolocal".ljust(80)
        buf[224:304] = label
        return bytes(buf)

    @classmethod
    def unpack(cls, raw: bytes) -> MrcHeader:
        if len(raw) < HEADER_BYTES:
            raise FormatError("short read: MRC header truncated")
        stamp = raw[212:216]
        if stamp[:1] == _STAMP_BE[:1]:
            e = ">"
        elif stamp[:1] == _STAMP_LE[:1]:
            e = "<"
        else:
            # unstamped files: pick the byte order giving a sane mode
            e = "<" if 0 <= struct.unpack_from("<i", raw, 12)[0] <= 16 else ">"
        nx, ny, nz, mode = struct.unpack_from(e + "4i", raw, 0)
        cell = struct.unpack_from(e + "3f", raw, 40)
        dmin, dmax, dmean = struct.unpack_from(e + "3f", raw, 76)
        ispg, nsymbt = struct.unpack_from(e + "2i", raw, 88)
        rms = struct.unpack_from(e + "f", raw, 216)[0]
        return cls(nx, ny, nz, mode, tuple(cell), dmin, dmax, dmean, rms, ispg, nsymbt, e)


def _read_stack(path) -> tuple[MrcHeader, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc
    hdr = MrcHeader.unpack(raw)
    if hdr.mode != MODE_FLOAT32:
        raise FormatError(f"{path}: unsupported MRC mode {hdr.mode}")
    if min(hdr.nx, hdr.ny, hdr.nz) < 1:
        raise FormatError(f"{path}: nonpositive MRC dimensions {(hdr.nx, hdr.ny, hdr.nz)}")
    if hdr.nsymbt < 0:
        raise FormatError(f"{path}: negative extended header size")
    start = HEADER_BYTES + hdr.nsymbt
    count = hdr.nx * hdr.ny * hdr.nz
    if len(raw) < start + 4 * count:
        raise FormatError(f"{path}: short read: expected {4 * count} data bytes, found {max(len(raw) - start, 0)}")
    zyx = np.frombuffer(raw, dtype=np.dtype(hdr.byteorder + "f4"), count=count, offset=start)
    zyx = zyx.reshape(hdr.nz, hdr.ny, hdr.nx).astype(np.float32)
    return hdr, zyx


def _write_stack(path, zyx: np.ndarray, cell, ispg: int) -> None:
    zyx = np.ascontiguousarray(zyx, dtype="<f4")
    if not np.all(np.isfinite(zyx)):
        raise DataError(f"{path}: refusing to write non-finite data")
    nz, ny, nx = zyx.shape
    d = zyx.astype(np.float64)
    hdr = MrcHeader(nx, ny, nz, MODE_FLOAT32, tuple(float(c) for c in cell), float(d.min()),
                    float(d.max()), float(d.mean()), float(d.std()), ispg)
    try:
        with open(path, "wb") as fh:
            fh.write(hdr.pack())
            fh.write(zyx.tobytes())
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc


def read_mrc(path) -> Volume:
    """Read a mode-2 MRC file as a Volume indexed ``[ix, iy, iz]``."""
    hdr, zyx = _read_stack(path)
    return Volume(GridSpec(hdr.nx, hdr.ny, hdr.nz, hdr.pixel_size if hdr.pixel_size > 0 else 1.0),
                  zyx.transpose(2, 1, 0))


def write_mrc(path, obj) -> None:
    """Write a Volume or TiltSeries (stack only; see :func:`write_tilt_series`)."""
    if isinstance(obj, Volume):
        g = obj.grid
        cell = (g.nx * g.voxel_size, g.ny * g.voxel_size, g.nz * g.voxel_size)
        _write_stack(path, obj.data.transpose(2, 1, 0), cell, ispg=1)
    elif isinstance(obj, TiltSeries):
        ps = obj.pixel_size
        _write_stack(path, obj.data.transpose(0, 2, 1), (obj.det_u * ps, obj.det_v * ps, obj.n_tilts * ps),
                     ispg=0)
    else:
        raise TypeError(f"cannot write {type(obj).__name__} as MRC")


def sidecar_path(stack_path) -> Path:
    return Path(stack_path).with_suffix(".tlt")


def read_angles(path) -> TiltGeometry:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: tilt angle sidecar not found")
    vals = []
    for k, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            vals.append(float(line))
        except ValueError as exc:
            raise FormatError(f"{path}:{k}: not an angle: {line!r}") from exc
    return TiltGeometry(tuple(vals))


def write_angles(path, geometry: TiltGeometry) -> None:
    Path(path).write_text("".join(f"{a!r}\n" for a in geometry.angles_deg))


def read_tilt_series(stack_path, angles_path=None, kind=SeriesKind.NOISY) -> TiltSeries:
    """Read a projection stack plus its angle sidecar (default: same stem, ``.tlt``)."""
    angles_path = sidecar_path(stack_path) if angles_path is None else Path(angles_path)
    if not Path(angles_path).exists():
        raise FormatError(f"{angles_path}: tilt angle sidecar not found (required for a tilt series)")
    geom = read_angles(angles_path)
    hdr, zyx = _read_stack(stack_path)
    if hdr.nz != geom.n_tilts:
        raise FormatError(f"{stack_path}: {hdr.nz} images but {geom.n_tilts} angles in {angles_path}")
    return TiltSeries(geom, zyx.transpose(0, 2, 1), kind, hdr.pixel_size if hdr.pixel_size > 0 else 1.0)


def write_tilt_series(stack_path, ts: TiltSeries, angles_path=None) -> None:
    write_mrc(stack_path, ts)
    write_angles(sidecar_path(stack_path) if angles_path is None else angles_path, ts.geometry)


def downsample_stack(ts: TiltSeries, factor: int) -> TiltSeries:
    """Fourier-crop every projection by ``factor`` keeping the mean intensity."""
    factor = int(factor)
    if factor < 1 or ts.det_u % factor or ts.det_v % factor:
        raise DataError(f"factor {factor} must divide detector size {ts.det_u}x{ts.det_v}")
    if factor == 1:
        return ts.replace(ts.data.copy())
    mu, mv = ts.det_u // factor, ts.det_v // factor
    spec = np.fft.fftshift(np.fft.fft2(np.asarray(ts.data, dtype=np.float64), axes=(1, 2)), axes=(1, 2))
    cu, cv = ts.det_u // 2, ts.det_v // 2
    crop = spec[:, cu - mu // 2:cu - mu // 2 + mu, cv - mv // 2:cv - mv // 2 + mv]
    small = np.fft.ifft2(np.fft.ifftshift(crop, axes=(1, 2)), axes=(1, 2)).real / (factor * factor)
    return TiltSeries(ts.geometry, small, ts.kind, ts.pixel_size * factor)


# checkpoint -----------------------------------------------------------------

MAGIC = b"LMLP"
VERSION = 1
_ACT = {Activation.RELU: 0, Activation.GELU: 1}
_NORM = {Normalize.NONE: 0, Normalize.ZSCORE: 1}
_FILT = {FilterKind.RAMLAK: 0, FilterKind.HANN: 1}


def _inv(d):
    return {v: k for k, v in d.items()}


def save_checkpoint(path, model: LocalModel) -> None:
    """Little-endian layout: magic, version, arch, patch config, tilt count,
    target affine, filter, parameter count, then float32 parameters (per layer:
    weights row-major as ``(fan_in, fan_out)``, then bias)."""
    a = model.arch
    if not model.params.matches(a):
        raise DataError("parameters do not match the architecture")
    head = bytearray()
    head += MAGIC
    head += struct.pack("<I", VERSION)
    head += struct.pack("<II", a.input_dim, len(a.hidden))
    head += struct.pack(f"<{len(a.hidden)}I", *a.hidden)
    head += struct.pack("<B", _ACT[a.activation])
    head += struct.pack("<IdB", model.patch.size, model.patch.delta, _NORM[model.patch.normalize])
    head += struct.pack("<I", model.n_tilts)
    head += struct.pack("<dd", model.target_shift, model.target_scale)
    head += struct.pack("<BI", _FILT[model.filter.kind], model.filter.pad_factor)
    head += struct.pack("<Q", a.param_count)
    blob = model.params.flat().astype("<f4").tobytes()
    try:
        Path(path).write_bytes(bytes(head) + blob)
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError(f"{self.path}: short read in checkpoint header")
        out = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return out


def load_checkpoint(path) -> LocalModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    r = _Reader(raw, path)
    r.pos = 4
    (version,) = r.take("<I")
    if version != VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {VERSION}")
    input_dim, n_hidden = r.take("<II")
    hidden = r.take(f"<{n_hidden}I")
    (act,) = r.take("<B")
    size, delta, norm = r.take("<IdB")
    (n_tilts,) = r.take("<I")
    shift, scale = r.take("<dd")
    filt, pad = r.take("<BI")
    (count,) = r.take("<Q")
    try:
        arch = MlpArch(input_dim, hidden, _inv(_ACT)[act])
        patch = PatchConfig(size, delta, _inv(_NORM)[norm])
        fspec = FilterSpec(_inv(_FILT)[filt], pad)
    except (KeyError, DataError) as exc:
        raise FormatError(f"{path}: invalid checkpoint metadata ({exc})") from exc
    if count != arch.param_count:
        raise FormatError(f"{path}: parameter count {count} does not match architecture ({arch.param_count})")
    need = 4 * count
    have = len(raw) - r.pos
    if have < need:
        raise FormatError(f"{path}: short read: expected {need} parameter bytes, found {have}")
    if have > need:
        raise FormatError(f"{path}: {have - need} trailing bytes after parameters")
    flat = np.frombuffer(raw, dtype="<f4", count=count, offset=r.pos)
    params = MlpParams.from_flat(arch, flat, dtype=np.float32)
    return LocalModel(arch, params, patch, n_tilts, shift, scale, fspec)

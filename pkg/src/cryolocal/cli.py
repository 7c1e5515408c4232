"""cryolocal: simulate, reconstruct (FBP or local MLP) and evaluate cryo-ET tilt series.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as rc
from . import io
from ._kernels import set_threads
from .exceptions import DataError, NumericalError
from .fbp import fbp
from .geometry import GridSpec, Volume
from .metrics import fsc, fsc_auc, psnr
from .phantom import generate_phantom
from .pipeline import make_pair, reconstruct, train
from .projector import NoiseModel, apply_noise, project

log = logging.getLogger("cryolocal")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _grid_for(ts, nz=None) -> GridSpec:
    return GridSpec(ts.det_u, ts.det_v, nz or ts.det_u, ts.pixel_size)


def cmd_simulate(args) -> int:
    cfg = rc.resolve(args.spec, {
        "seed": args.seed, "angles": args.angles, "noise": args.noise,
        "phantom.size": args.size, "phantom.n_blobs": args.n_blobs, "phantom.blob_kind": args.blob_kind,
        "projector.step": args.step,
    })
    try:
        geom = rc.parse_angles(cfg["angles"])
        noise = NoiseModel.parse(cfg["noise"], seed=int(cfg["seed"]) + 1)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args.out_dir)
    volume = generate_phantom(rc.phantom_spec(cfg, int(cfg["seed"])))
    clean = project(volume, geom, step=float(cfg["projector"]["step"]))
    noisy = apply_noise(clean, noise)
    io.write_mrc(out / "phantom.mrc", volume)
    io.write_tilt_series(out / "tilts.mrc", noisy)
    rc.write_resolved(out, cfg, "simulate")
    print(f"wrote {out / 'phantom.mrc'}, {out / 'tilts.mrc'}, {out / 'tilts.tlt'} ({geom.n_tilts} tilts)")
    return 0


def cmd_fbp(args) -> int:
    cfg = rc.resolve(args.config, {"filter.kind": args.filter, "filter.pad_factor": args.pad_factor})
    ts = io.read_tilt_series(args.tilts, args.angles)
    grid = _grid_for(ts, args.nz)
    t0 = time.perf_counter()
    vol = fbp(ts, grid, rc.filter_spec(cfg))
    elapsed = time.perf_counter() - t0
    io.write_mrc(args.out, vol)
    rc.write_resolved(Path(args.out).parent, cfg, "fbp")
    print(f"fbp: {elapsed:.2f} s")
    if args.reference:
        ref = io.read_mrc(args.reference)
        print(f"psnr: {psnr(vol, ref)!r} dB")
    return 0


def read_manifest(path) -> list[tuple[Path, Path, Path]]:
    path = Path(path)
    base = path.parent
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["reference", "tilts", "angles"]:
                raise UsageError(f"{path}: manifest header must be reference,tilts,angles")
            rows = [(base / r["reference"].strip(), base / r["tilts"].strip(), base / r["angles"].strip())
                    for r in reader]
    except OSError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if not rows:
        raise UsageError(f"{path}: manifest lists no training pairs")
    return rows


def cmd_train(args) -> int:
    cfg = rc.resolve(args.config, {
        "seed": args.seed, "train.steps": args.steps, "train.batch_size": args.batch_size,
        "train.lr": args.lr, "threads": args.threads,
    })
    set_threads(cfg["threads"])
    rows = read_manifest(args.pairs)
    tcfg = rc.train_config(cfg)
    pairs, n_first = [], None
    for k, (ref_path, tilt_path, ang_path) in enumerate(rows, start=1):
        ts = io.read_tilt_series(tilt_path, ang_path)
        if n_first is None:
            n_first = ts.n_tilts
        elif ts.n_tilts != n_first:
            raise DataError(f"manifest row {k} ({tilt_path}): {ts.n_tilts} tilts, expected {n_first}")
        pairs.append(make_pair(io.read_mrc(ref_path), ts, tcfg.filter, id=f"row{k}"))
    model, tlog = train(pairs, tcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(out, model)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    tlog.to_csv(log_path)
    rc.write_resolved(out.parent, cfg, "train")
    print(f"wrote {out} and {log_path}")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = rc.resolve(args.config, {"reconstruct.chunk_size": args.chunk, "threads": args.threads})
    set_threads(cfg["threads"])
    ts = io.read_tilt_series(args.tilts, args.angles)
    model = io.load_checkpoint(args.model)
    model.check_series(ts)
    t0 = time.perf_counter()
    vol = reconstruct(ts, model, _grid_for(ts, args.nz), int(cfg["reconstruct"]["chunk_size"]))
    elapsed = time.perf_counter() - t0
    io.write_mrc(args.out, vol)
    rc.write_resolved(Path(args.out).parent, cfg, "reconstruct")
    print(f"reconstruct: {elapsed:.2f} s")
    return 0


def cmd_fsc(args) -> int:
    a, b = io.read_mrc(args.a), io.read_mrc(args.b)
    curve = fsc(a, b, args.shell_width)
    curve.to_csv(args.out)
    print(f"fsc-auc: {fsc_auc(curve)!r}")
    return 0


def stretch(img: np.ndarray) -> np.ndarray:
    """1st-99th percentile contrast stretch to uint8; constant images map to mid-gray."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = np.percentile(img, [1, 99])
    if hi <= lo:
        return np.full(img.shape, 128, dtype=np.uint8)
    return np.rint(np.clip((img - lo) / (hi - lo), 0, 1) * 255).astype(np.uint8)


def orthoslices(volume: Volume) -> dict[str, np.ndarray]:
    """Central planes as images (rows, cols): xy = (y, x), xz = (z, x), yz = (z, y)."""
    d = np.asarray(volume.data)
    cx, cy, cz = (n // 2 for n in volume.grid.shape)
    return {"xy": d[:, :, cz].T, "xz": d[:, cy, :].T, "yz": d[cx, :, :].T}


def cmd_slice(args) -> int:
    from PIL import Image

    vol = io.read_mrc(args.volume)
    out = _out_dir(args.out_dir)
    for name, img in orthoslices(vol).items():
        Image.fromarray(stretch(img), mode="L").save(out / f"{name}.png")
    print(f"wrote xy.png, xz.png, yz.png to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cryolocal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="phantom + tilt series")
    s.add_argument("--spec", help="JSON run config (phantom, angles, noise, seed, ...)")
    s.add_argument("--angles", help='"start:stop:count", inclusive')
    s.add_argument("--noise", help="none | gaussian:SIGMA | poisson:DOSE")
    s.add_argument("--seed", type=int)
    s.add_argument("--size", type=int)
    s.add_argument("--n-blobs", type=int)
    s.add_argument("--blob-kind", choices=["ellipsoid", "shell", "rod"])
    s.add_argument("--step", type=float)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fbp", help="filtered back-projection")
    s.add_argument("--tilts", required=True)
    s.add_argument("--angles", help="angle sidecar (default: tilts stem + .tlt)")
    s.add_argument("--filter", choices=["ramlak", "hann_windowed_ramlak"])
    s.add_argument("--pad-factor", type=int)
    s.add_argument("--nz", type=int)
    s.add_argument("--reference", help="ground truth volume; prints PSNR")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fbp)

    s = sub.add_parser("train", help="train the voxel-wise network")
    s.add_argument("--pairs", required=True, help="manifest CSV: reference,tilts,angles")
    s.add_argument("--config")
    s.add_argument("--steps", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--log", help="training log CSV (default: next to --out)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="voxel-wise reconstruction with a trained model")
    s.add_argument("--tilts", required=True)
    s.add_argument("--angles")
    s.add_argument("--model", required=True)
    s.add_argument("--chunk", type=int)
    s.add_argument("--nz", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("fsc", help="Fourier shell correlation curve")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--shell-width", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fsc)

    s = sub.add_parser("slice", help="central orthoslices as PNG")
    s.add_argument("--volume", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_slice)
    return p


def _join_negative_values(argv: list[str]) -> list[str]:
    # argparse would read "--angles -60:60:41" as two options
    out, k = [], 0
    while k < len(argv):
        a = argv[k]
        if a == "--angles" and k + 1 < len(argv) and argv[k + 1].startswith("-") and ":" in argv[k + 1]:
            out.append(f"{a}={argv[k + 1]}")
            k += 2
            continue
        out.append(a)
        k += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_join_negative_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cryolocal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"cryolocal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError) as exc:
        print(f"cryolocal: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

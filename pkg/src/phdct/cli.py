"""Command-line entry points.

Every command except ``defaults`` (which prints the default configuration)
prints one JSON run-record on stdout. Exit status is 0 on success, 1 for
usage errors and 2 for unreadable or inconsistent data.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

from phdct import config as cfgmod
from phdct import io
from phdct.geometry import PHANTOM_KINDS, PRESETS, FanGeometry, make_phantom, preset, radon_forward
from phdct.metrics import report
from phdct.noise import DoseSpec, pwls_weights, scale_attenuation, simulate_low_dose
from phdct.sampler import reconstruct
from phdct.score import default_schedule, ema, load_model, make_schedule, save_model, train

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(record: dict, stream=None) -> None:
    stream = stream or sys.stdout
    stream.write(json.dumps(record, sort_keys=True, allow_nan=False) + "\n")
    stream.flush()


def _run_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    if getattr(args, "preset", None):
        g = preset(args.preset, cfg.geometry.image_size)
        cfg = cfgmod.RunConfig(**{**cfg.__dict__, "geometry": g})
    return cfg


def _geometry(side: dict, fallback: FanGeometry, image_size: int | None = None) -> FanGeometry:
    if "geometry" in side:
        try:
            return FanGeometry.from_dict(side["geometry"])
        except (TypeError, ValueError) as exc:
            raise io.DataError(f"bad geometry in sidecar: {exc}") from exc
    return fallback if image_size is None else fallback.replace(image_size=image_size)


def _require_kind(side: dict, kind: str, path) -> None:
    if side.get("kind") != kind:
        raise io.DataError(f"{path}: expected a {kind}, found {side.get('kind')!r}")


# ---------------------------------------------------------------------------
# commands

def cmd_phantom(args, cfg, seeds):
    spec = cfg.phantom
    size = args.size or spec.size
    kind = args.kind or spec.kind
    value = spec.value if args.value is None else args.value
    mli = spec.max_line_integral if args.max_line_integral is None else args.max_line_integral
    geom = cfg.geometry.replace(image_size=size)
    img = make_phantom(size, kind, value=value)
    factor = 1.0
    if mli > 0:
        img, factor = scale_attenuation(img, geom, mli)
    outs = io.write_raw(args.out, img, "image", geometry=geom.to_dict(), attenuation_factor=factor)
    return {"outputs": [str(p) for p in outs], "attenuation_factor": factor}


def cmd_project(args, cfg, seeds):
    img, side = io.read_raw(args.inp)
    _require_kind(side, "image", args.inp)
    if img.shape[0] != img.shape[1]:
        raise io.DataError(f"{args.inp}: image must be square, got {img.shape}")
    geom = _geometry(side, cfg.geometry, img.shape[0])
    if geom.image_size != img.shape[0]:
        raise io.DataError(f"{args.inp}: geometry image_size {geom.image_size} vs data {img.shape[0]}")
    sino = radon_forward(img, geom)
    outs = io.write_raw(args.out, sino, "sinogram", geometry=geom.to_dict())
    return {"outputs": [str(p) for p in outs]}


def cmd_lowdose(args, cfg, seeds):
    x, side = io.read_raw(args.inp)
    _require_kind(side, "sinogram", args.inp)
    dose = DoseSpec(args.intensity if args.intensity is not None else cfg.dose.source_intensity,
                    args.background if args.background is not None else cfg.dose.background,
                    seeds["noise"])
    y = simulate_low_dose(x, dose)
    extra = {"dose": dose.to_dict()}
    if "geometry" in side:
        extra["geometry"] = side["geometry"]
    outs = io.write_raw(args.out, y, "sinogram", **extra)
    return {"outputs": [str(p) for p in outs], "dose": dose.to_dict()}


def cmd_train(args, cfg, seeds):
    shots = []
    for path in args.shots:
        x, side = io.read_raw(path)
        _require_kind(side, "sinogram", path)
        shots.append(x)
    tc = cfg.train
    over = {k: v for k, v in dict(total_steps=args.steps, hidden=args.hidden,
                                  batch_size=args.batch_size).items() if v is not None}
    tc = type(tc)(**{**tc.__dict__, **over, "seed": seeds["training"]})
    sc = cfg.schedule
    window = cfg.recon.window
    patch_shape = (sc.patch_rows, window * window)
    if sc.sigma_max is None:
        schedule = default_schedule(shots, sc.N, sc.sigma_min, window, seed=seeds["training"],
                                    patch_shape=patch_shape)
    else:
        schedule = make_schedule(sc.N, sc.sigma_min, sc.sigma_max)
    result = train(shots, tc, schedule, patch_shape)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k, m in enumerate(result.models):
        written += [str(p) for p in save_model(m, out / f"partition{k}")]
    smooth = [float(ema(l)[-1]) if len(l) else None for l in result.losses]
    return {"outputs": written, "scale": result.scale, "schedule": list(schedule.levels),
            "final_smoothed_loss": smooth}


def _load_models(directory):
    d = Path(directory)
    try:
        return [load_model(d / f"partition{k}") for k in range(3)]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise io.DataError(f"cannot load models from {d}: {exc}") from exc


def cmd_reconstruct(args, cfg, seeds):
    y, side = io.read_raw(args.inp)
    _require_kind(side, "sinogram", args.inp)
    models = _load_models(args.models)
    geom = _geometry(side, cfg.geometry)
    if (geom.num_views, geom.num_detectors) != y.shape:
        raise io.DataError(f"{args.inp}: geometry {geom.num_views}x{geom.num_detectors} vs data {y.shape}")
    dose = DoseSpec(**side["dose"]) if "dose" in side else cfg.dose
    weights = pwls_weights(y, dose, cfg.eta)
    rc = cfg.recon
    over = {k: v for k, v in dict(N=args.N, M=args.M).items() if v is not None}
    rc = type(rc)(**{**rc.__dict__, **over, "seed": seeds["sampling"]})
    truth = None
    if args.truth:
        truth, tside = io.read_raw(args.truth)
        _require_kind(tside, "sinogram", args.truth)
        if truth.shape != y.shape:
            raise io.DataError(f"{args.truth}: shape {truth.shape} differs from {y.shape}")

    def log(i, x):
        line = {"iteration": i}
        if truth is not None:
            p = report(truth, x).psnr
            line["psnr"] = None if math.isinf(p) else p
        _emit(line, sys.stderr)

    x, image = reconstruct(y, models, weights, geom, rc, callback=log, filter=cfg.filter)
    outs = io.write_raw(args.out, x, "sinogram", geometry=geom.to_dict())
    outs += io.write_raw(f"{args.out}_image", image, "image", geometry=geom.to_dict())
    rec = {"outputs": [str(p) for p in outs], "recon": {"N": rc.N, "M": rc.M, "seed": rc.seed}}
    if truth is not None:
        rec["sinogram_metrics"] = report(truth, x).to_dict()
    return rec


def cmd_metrics(args, cfg, seeds):
    ref, rside = io.read_raw(args.ref)
    test, tside = io.read_raw(args.test)
    if ref.shape != test.shape:
        raise io.DataError(f"shape mismatch: {args.ref} {ref.shape} vs {args.test} {test.shape}")
    rep = report(ref, test).to_dict()
    rep["domain"] = args.domain or rside.get("kind")
    return rep


def cmd_export_png(args, cfg, seeds):
    values, _ = io.read_raw(args.inp)
    if not args.high > args.low:
        raise UsageError(f"degenerate display window [{args.low}, {args.high}]")
    path = io.export_png(values, args.out, args.low, args.high)
    return {"outputs": [str(path)], "window": [args.low, args.high]}


COMMANDS = {
    "phantom": cmd_phantom, "project": cmd_project, "lowdose": cmd_lowdose, "train": cmd_train,
    "reconstruct": cmd_reconstruct, "metrics": cmd_metrics, "export-png": cmd_export_png,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--preset", choices=sorted(PRESETS), help="geometry preset")

    p = _Parser(prog="phdct", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", parents=[common])
    s.add_argument("--size", type=int)
    s.add_argument("--kind", choices=PHANTOM_KINDS)
    s.add_argument("--value", type=float)
    s.add_argument("--max-line-integral", type=float)
    s.add_argument("--out", required=True)

    s = sub.add_parser("project", parents=[common])
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("lowdose", parents=[common])
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--intensity", type=float)
    s.add_argument("--background", type=float)

    s = sub.add_parser("train", parents=[common])
    s.add_argument("--shots", nargs="+", required=True)
    s.add_argument("--out", required=True, help="model directory")
    s.add_argument("--steps", type=int)
    s.add_argument("--hidden", type=int)
    s.add_argument("--batch-size", type=int)

    s = sub.add_parser("reconstruct", parents=[common])
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--truth", help="clean sinogram for per-iteration PSNR")
    s.add_argument("--N", type=int)
    s.add_argument("--M", type=int)

    s = sub.add_parser("metrics", parents=[common])
    s.add_argument("--ref", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--domain", choices=("image", "sinogram"))

    s = sub.add_parser("export-png", parents=[common])
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--low", type=float, required=True)
    s.add_argument("--high", type=float, required=True)

    sub.add_parser("defaults", parents=[common])
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        if args.seed < 0:
            raise UsageError("--seed must be >= 0")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    if args.command == "defaults":
        sys.stdout.write(cfgmod.RunConfig().to_json())
        return 0
    try:
        cfg = _run_config(args)
        seeds = cfgmod.sub_seeds(args.seed)
        result = COMMANDS[args.command](args, cfg, seeds)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, OSError, ValueError) as exc:
        print(f"phdct {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    inputs = {k: v for k, v in vars(args).items() if k not in ("command",) and v is not None}
    record = {"command": args.command, "inputs": inputs, "config_hash": cfg.digest(),
              "seed": args.seed, "seeds": seeds,
              "timings": {"total_s": time.perf_counter() - t0}, **result}
    _emit(record)
    return 0


if __name__ == "__main__":
    sys.exit(main())

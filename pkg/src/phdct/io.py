"""Raw float32 arrays with JSON sidecars, and 16-bit PNG export.

``<base>.raw`` holds little-endian float32 values in row-major order;
``<base>.json`` holds ``{width, height, kind, scale, src_dims?, ...}``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

KINDS = ("image", "sinogram", "hankel")


class DataError(ValueError):
    """Unreadable or inconsistent input files."""


def raw_paths(base: str | Path) -> tuple[Path, Path]:
    base = Path(base)
    if base.suffix in (".raw", ".json"):
        base = base.with_suffix("")
    return base.with_name(base.name + ".raw"), base.with_name(base.name + ".json")


def dumps(obj) -> str:
    # repr of a Python float is the shortest string that round-trips exactly
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_raw(base, values: np.ndarray, kind: str, scale: float = 1.0,
              src_dims=None, **extra) -> tuple[Path, Path]:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("only 2-D arrays are stored")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if not np.all(np.isfinite(values)):
        raise ValueError("refusing to write non-finite values")
    raw, meta = raw_paths(base)
    raw.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(values, dtype="<f4").tofile(raw)
    side = {"width": int(values.shape[1]), "height": int(values.shape[0]),
            "kind": kind, "scale": float(scale), **extra}
    if src_dims is not None:
        side["src_dims"] = [int(v) for v in src_dims]
    meta.write_text(dumps(side))
    return raw, meta


def read_raw(base) -> tuple[np.ndarray, dict]:
    """Array (as float64) and its sidecar dictionary."""
    raw, meta = raw_paths(base)
    try:
        side = json.loads(meta.read_text())
        payload = raw.read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {raw.with_suffix('')}: {exc}") from exc
    try:
        w, h, kind = int(side["width"]), int(side["height"]), side["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{meta}: malformed sidecar ({exc})") from exc
    if kind not in KINDS:
        raise DataError(f"{meta}: unknown kind {kind!r}")
    if w < 1 or h < 1 or len(payload) != 4 * w * h:
        raise DataError(f"{raw}: payload has {len(payload)} bytes, sidecar implies {4 * w * h}")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)
    if kind == "hankel" and "src_dims" in side:
        lx, ly, l = side["src_dims"]
        if (h, w) != ((lx - l + 1) * (ly - l + 1), l * l):
            raise DataError(f"{meta}: src_dims {side['src_dims']} inconsistent with {h}x{w}")
    return values, side


def to_uint16(values: np.ndarray, low: float, high: float) -> np.ndarray:
    """Linear map of ``[low, high]`` onto ``[0, 65535]`` with clamping."""
    if not high > low:
        raise ValueError(f"degenerate display window [{low}, {high}]")
    t = (np.asarray(values, dtype=float) - low) / (high - low)
    return np.rint(np.clip(t, 0.0, 1.0) * 65535).astype(np.uint16)


def from_uint16(q: np.ndarray, low: float, high: float) -> np.ndarray:
    return low + np.asarray(q, dtype=float) / 65535 * (high - low)


def export_png(values: np.ndarray, path, low: float, high: float) -> Path:
    from PIL import Image

    q = to_uint16(values, low, high)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q).save(path)
    return path


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im).astype(np.uint16)

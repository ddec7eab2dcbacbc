"""Fan-beam geometry, test phantoms, Siddon forward projection and FBP.

Coordinate conventions
----------------------
Images are ``(rows, cols)`` arrays. Column index grows with +x, row index
grows with -y (row 0 is the top edge), the rotation center sits at the
middle of the image square.

Sinograms are ``(num_views, num_detectors)`` arrays. For view angle ``beta``
the source sits at ``R * e`` with ``e = (cos beta, sin beta)`` and the flat
detector is centred at ``-D * e`` with bins laid out along
``u = (-sin beta, cos beta)``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FanGeometry:
    """Flat-panel fan-beam acquisition over a full 360 degree turn.

    ``pixel_spacing=None`` sizes the image square so its inscribed circle is
    the scanner's field of view.
    """

    num_views: int = 180
    num_detectors: int = 360
    source_to_center: float = 40.0
    detector_to_center: float = 40.0
    detector_width: float = 41.3
    image_size: int = 64
    pixel_spacing: float | None = None

    def __post_init__(self):
        for name in ("num_views", "num_detectors", "image_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("source_to_center", "detector_to_center", "detector_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.pixel_spacing is not None and not self.pixel_spacing > 0:
            raise ValueError("pixel_spacing must be > 0")

    @property
    def fov_radius(self) -> float:
        half_fan = math.atan(0.5 * self.detector_width / self.source_to_detector)
        return self.source_to_center * math.sin(half_fan)

    @property
    def source_to_detector(self) -> float:
        return self.source_to_center + self.detector_to_center

    @property
    def spacing(self) -> float:
        if self.pixel_spacing is not None:
            return float(self.pixel_spacing)
        return 2.0 * self.fov_radius / self.image_size

    @property
    def detector_spacing(self) -> float:
        return self.detector_width / self.num_detectors

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.num_views) / self.num_views

    @property
    def detector_positions(self) -> np.ndarray:
        """Bin-centre coordinates along the detector (cm)."""
        idx = np.arange(self.num_detectors) - (self.num_detectors - 1) / 2.0
        return idx * self.detector_spacing

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FanGeometry":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown geometry keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def replace(self, **changes) -> "FanGeometry":
        return dataclasses.replace(self, **changes)


# Named presets. "toy" is the 64 x 64 sinogram used for quick runs, "scanner"
# the 720-bin / 360-view clinical scanner; "scanner-768" keeps the 768 x 768 sinogram
# size quoted for the training data.
PRESETS = {
    "toy": dict(num_views=64, num_detectors=64),
    "desk": dict(num_views=180, num_detectors=360),
    "scanner": dict(num_views=360, num_detectors=720),
    "scanner-768": dict(num_views=768, num_detectors=768),
}


def preset(name: str, image_size: int = 64, **overrides) -> FanGeometry:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown geometry preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(image_size=image_size, **overrides)
    return FanGeometry(**base)


# ---------------------------------------------------------------------------
# phantoms

# Modified (Toft) Shepp-Logan: intensity, semi-axis a, semi-axis b, x0, y0, phi (deg)
SHEPP_LOGAN = np.array([
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
])

PHANTOM_KINDS = ("shepp-logan", "uniform-disk", "constant")


def pixel_centers(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalised pixel-centre coordinates in [-1, 1], shape ``(size, size)`` each."""
    c = (np.arange(size) + 0.5 - size / 2.0) / (size / 2.0)
    x = np.broadcast_to(c[None, :], (size, size))
    y = np.broadcast_to(-c[:, None], (size, size))
    return x, y


def make_phantom(size: int, kind: str = "shepp-logan", value: float = 1.0,
                 radius: float | None = None) -> np.ndarray:
    """Deterministic test image with values in [0, 1].

    ``value`` is the fill level for ``constant`` and ``uniform-disk``;
    ``radius`` is the disk radius in pixels (default ``size / 2``).
    """
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unsupported phantom kind {kind!r}; choose from {PHANTOM_KINDS}")
    if size < 16:
        raise ValueError("phantom size must be >= 16")
    if kind == "constant":
        return np.full((size, size), float(value))
    x, y = pixel_centers(size)
    if kind == "uniform-disk":
        r = 0.5 * size if radius is None else float(radius)
        inside = x ** 2 + y ** 2 <= (r / (size / 2.0)) ** 2
        return np.where(inside, float(value), 0.0)
    img = np.zeros((size, size))
    for intensity, a, b, x0, y0, phi in SHEPP_LOGAN:
        t = np.deg2rad(phi)
        xr = (x - x0) * np.cos(t) + (y - y0) * np.sin(t)
        yr = -(x - x0) * np.sin(t) + (y - y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += intensity
    # float round-off on the overlapping ellipses can leave ~1e-17 negatives
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Siddon ray tracing

def _check_image(img: np.ndarray, geom: FanGeometry) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.shape != (geom.image_size, geom.image_size):
        raise ValueError(f"image shape {img.shape} does not match geometry image_size {geom.image_size}")
    return img


def view_rays(geom: FanGeometry, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Source point ``(2,)`` and detector bin centres ``(num_detectors, 2)`` for one view."""
    e = np.array([math.cos(beta), math.sin(beta)])
    u = np.array([-math.sin(beta), math.cos(beta)])
    src = geom.source_to_center * e
    dst = -geom.detector_to_center * e[None, :] + geom.detector_positions[:, None] * u[None, :]
    return src, dst


def siddon_segments(src: np.ndarray, dst: np.ndarray, size: int, spacing: float):
    """Exact pixel intersections for a bundle of rays sharing one source.

    Returns ``(rows, cols, lengths)``, each ``(n_rays, 2 * size + 3)``. Padding
    entries have zero length and in-range indices, so they can be gathered
    and summed without masking.
    """
    dst = np.atleast_2d(np.asarray(dst, dtype=float))
    src = np.asarray(src, dtype=float)
    n = dst.shape[0]
    half = 0.5 * size * spacing
    d = dst - src[None, :]
    length = np.hypot(d[:, 0], d[:, 1])
    planes = -half + spacing * np.arange(size + 1)

    with np.errstate(divide="ignore", invalid="ignore"):
        ax = (planes[None, :] - src[0]) / d[:, 0:1]
        ay = (planes[None, :] - src[1]) / d[:, 1:2]

    lo = np.zeros(n)
    hi = np.ones(n)
    for k, a in ((0, ax), (1, ay)):
        par = d[:, k] == 0.0
        a_first, a_last = a[:, 0], a[:, -1]
        lo = np.where(par, lo, np.maximum(lo, np.minimum(a_first, a_last)))
        hi = np.where(par, hi, np.minimum(hi, np.maximum(a_first, a_last)))
        # a ray parallel to these planes misses the square unless it lies inside the slab
        outside = par & ((src[k] < -half) | (src[k] > half))
        hi = np.where(outside, lo, hi)
    hit = hi > lo
    hi = np.where(hit, hi, lo)

    alphas = np.concatenate([lo[:, None], hi[:, None], ax, ay], axis=1)
    alphas = np.where(np.isfinite(alphas), alphas, hi[:, None])
    alphas = np.clip(alphas, lo[:, None], hi[:, None])
    alphas.sort(axis=1)

    seg = np.diff(alphas, axis=1)
    mid = 0.5 * (alphas[:, 1:] + alphas[:, :-1])
    px = src[0] + mid * d[:, 0:1]
    py = src[1] + mid * d[:, 1:2]
    cols = np.clip(np.floor((px + half) / spacing).astype(np.int64), 0, size - 1)
    rows = np.clip(np.floor((half - py) / spacing).astype(np.int64), 0, size - 1)
    return rows, cols, seg * length[:, None]


def siddon_ray(src, dst, geom: FanGeometry):
    """Pixel indices and path lengths for a single ray; zero-length entries dropped."""
    rows, cols, lens = siddon_segments(src, np.asarray(dst, dtype=float)[None, :], geom.image_size, geom.spacing)
    keep = lens[0] > 0
    return rows[0, keep], cols[0, keep], lens[0, keep]


def radon_forward(img: np.ndarray, geom: FanGeometry) -> np.ndarray:
    """Fan-beam line integrals of ``img`` by Siddon ray tracing, ``(views, detectors)``."""
    img = _check_image(img, geom)
    sino = np.empty((geom.num_views, geom.num_detectors))
    for v, beta in enumerate(geom.angles):
        src, dst = view_rays(geom, beta)
        rows, cols, lens = siddon_segments(src, dst, geom.image_size, geom.spacing)
        sino[v] = np.sum(img[rows, cols] * lens, axis=1)
    return sino


# ---------------------------------------------------------------------------
# filtered back-projection

FILTERS = ("ram-lak", "hann")


def ramp_filter_response(n: int, spacing: float, filter: str = "ram-lak") -> tuple[np.ndarray, int]:
    """Frequency response of the band-limited ramp on an ``n_fft``-point grid.

    Built from the spatial-domain ramp kernel so the DC term is correct.
    """
    if filter not in FILTERS:
        raise ValueError(f"unknown filter {filter!r}; choose from {FILTERS}")
    n_fft = int(2 ** math.ceil(math.log2(2 * n)))
    k = np.arange(n_fft)
    k = np.where(k > n_fft // 2, k - n_fft, k)
    h = np.zeros(n_fft)
    h[k == 0] = 1.0 / (4.0 * spacing ** 2)
    odd = (k % 2) == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    resp = np.real(np.fft.fft(h))
    if filter == "hann":
        f = np.fft.fftfreq(n_fft)
        resp = resp * 0.5 * (1.0 + np.cos(2.0 * np.pi * f))
    return resp, n_fft


def fbp_reconstruct(sino: np.ndarray, geom: FanGeometry, filter: str = "ram-lak") -> np.ndarray:
    """Weighted filtered back-projection for the flat fan-beam detector.

    The detector is rescaled to a virtual detector through the rotation
    centre; projections get the cosine pre-weight, are ramp-filtered and
    back-projected with the ``1/U^2`` distance weight (linear interpolation
    along the detector).
    """
    sino = np.asarray(sino, dtype=float)
    if sino.shape != (geom.num_views, geom.num_detectors):
        raise ValueError(f"sinogram shape {sino.shape} does not match geometry "
                         f"({geom.num_views}, {geom.num_detectors})")
    if filter not in FILTERS:
        raise ValueError(f"unknown filter {filter!r}; choose from {FILTERS}")
    R = geom.source_to_center
    mag = R / geom.source_to_detector
    s = geom.detector_positions * mag
    ds = geom.detector_spacing * mag
    nd = geom.num_detectors

    q = sino * (R / np.sqrt(R ** 2 + s ** 2))[None, :]
    resp, n_fft = ramp_filter_response(nd, ds, filter)
    padded = np.zeros((geom.num_views, n_fft))
    padded[:, :nd] = q
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * resp[None, :], axis=1))[:, :nd] * ds

    n = geom.image_size
    x, y = pixel_centers(n)
    x = x * (n / 2.0) * geom.spacing
    y = y * (n / 2.0) * geom.spacing
    img = np.zeros((n, n))
    for v, beta in enumerate(geom.angles):
        cb, sb = math.cos(beta), math.sin(beta)
        dist = R - (x * cb + y * sb)
        sp = R * (-x * sb + y * cb) / dist
        idx = (sp - s[0]) / ds
        img += np.interp(idx, np.arange(nd), filtered[v], left=0.0, right=0.0) * (R / dist) ** 2
    dbeta = 2.0 * np.pi / geom.num_views
    return 0.5 * dbeta * img

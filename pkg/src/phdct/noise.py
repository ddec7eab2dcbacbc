"""Poisson transmission noise and PWLS statistical weights."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from phdct.geometry import FanGeometry, radon_forward

# clamp applied to background-corrected counts before the log
COUNT_FLOOR = 0.5
DEFAULT_ETA = 22000.0


@dataclass(frozen=True)
class DoseSpec:
    source_intensity: float = 1e5
    background: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.source_intensity > 0:
            raise ValueError("source_intensity must be > 0")
        if not self.background >= 0:
            raise ValueError("background must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def scale_attenuation(img: np.ndarray, geom: FanGeometry, max_line_integral: float = 4.0):
    """Rescale ``img`` so its largest fan-beam line integral equals ``max_line_integral``.

    Returns ``(scaled_image, factor)``. An all-zero image is returned unchanged
    with factor 1.
    """
    peak = float(radon_forward(img, geom).max())
    if peak <= 0:
        return np.asarray(img, dtype=float).copy(), 1.0
    factor = max_line_integral / peak
    return np.asarray(img, dtype=float) * factor, factor


def simulate_low_dose(x: np.ndarray, dose: DoseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw a low-dose sinogram from clean line integrals ``x``.

    Counts follow ``Poisson(a exp(-x) + r)``; the background is subtracted,
    clamped at ``COUNT_FLOOR`` and log-transformed back to line integrals.
    ``rng`` overrides the generator seeded from ``dose.seed``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("sinogram contains non-finite values")
    rng = np.random.default_rng(dose.seed) if rng is None else rng
    a, r = float(dose.source_intensity), float(dose.background)
    counts = rng.poisson(a * np.exp(-x) + r).astype(float)
    net = counts - r
    if x.size and np.all(net <= 0):
        raise ValueError("all background-corrected counts are zero; dose too low for the log transform")
    return -np.log(np.maximum(net, COUNT_FLOOR) / a)


def pwls_weights(y: np.ndarray, dose: DoseSpec, eta: float = DEFAULT_ETA) -> np.ndarray:
    """Inverse-variance weights ``a exp(-y / eta)``, normalised to unit mean."""
    if not eta > 0:
        raise ValueError("eta must be > 0")
    w = dose.source_intensity * np.exp(-np.asarray(y, dtype=float) / eta)
    return w / w.mean()


def raw_pwls_weights(y: np.ndarray, dose: DoseSpec, eta: float = DEFAULT_ETA) -> np.ndarray:
    """Same as :func:`pwls_weights` without the unit-mean normalisation."""
    if not eta > 0:
        raise ValueError("eta must be > 0")
    return dose.source_intensity * np.exp(-np.asarray(y, dtype=float) / eta)

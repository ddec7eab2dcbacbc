"""Smoothed isotropic total variation and the normalised-gradient TV step."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TvSpec:
    alpha: float = 0.2
    iters: int = 2
    # relative to the dynamic range of the iterate inside tv_step
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


def forward_diffs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with replicate boundary (zero at the last column / row)."""
    dh = np.zeros_like(x)
    dv = np.zeros_like(x)
    dh[:, :-1] = x[:, 1:] - x[:, :-1]
    dv[:-1, :] = x[1:, :] - x[:-1, :]
    return dh, dv


def tv_norm(x: np.ndarray, epsilon: float = 1e-12) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or min(x.shape) < 2:
        raise ValueError("tv_norm needs a 2-D array of at least 2x2")
    dh, dv = forward_diffs(x)
    return float(np.sum(np.sqrt(dh ** 2 + dv ** 2 + epsilon ** 2) - epsilon))


def tv_grad(x: np.ndarray, epsilon: float = 1e-12) -> np.ndarray:
    """Gradient of :func:`tv_norm`, i.e. ``-div(grad x / |grad x|_eps)``."""
    x = np.asarray(x, dtype=float)
    dh, dv = forward_diffs(x)
    mag = np.sqrt(dh ** 2 + dv ** 2 + epsilon ** 2)
    ph, pv = dh / mag, dv / mag
    g = -ph - pv
    g[:, 1:] += ph[:, :-1]
    g[1:, :] += pv[:-1, :]
    return g


def tv_step(x_prev: np.ndarray, x_cur: np.ndarray, spec: TvSpec) -> np.ndarray:
    """``spec.iters`` normalised TV descent steps of length ``alpha * ||x_cur - x_prev||``."""
    x_prev = np.asarray(x_prev, dtype=float)
    x = np.array(x_cur, dtype=float)
    if x_prev.shape != x.shape:
        raise ValueError(f"shape mismatch: {x_prev.shape} vs {x.shape}")
    step = spec.alpha * float(np.linalg.norm(x - x_prev))
    if step == 0.0:
        return x
    span = float(np.ptp(x))
    eps = spec.epsilon * (span if span > 0 else 1.0)
    for _ in range(spec.iters):
        g = tv_grad(x, eps)
        gn = float(np.linalg.norm(g))
        if gn <= 1e-14:
            break
        x = x - step * g / gn
    return x

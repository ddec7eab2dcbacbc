"""Partitioned-Hankel predictor-corrector reconstruction in the sinogram domain.

One outer iteration runs

    predictor -> low-rank -> TV -> PWLS data consistency -> (corrector -> PWLS) x M

starting from the measured low-dose sinogram, and the final sinogram is
reconstructed by FBP. Score models act on normalised sinograms
(``x / model.scale``); the noise levels are in those normalised units.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from phdct.geometry import FanGeometry, fbp_reconstruct
from phdct.hankel import (PatchTensor, hankel_pinv, hankel_transform, partition_triple_star,
                          recombine, tile_for_inference, untile)
from phdct.lowrank import RankSpec, lr_step
from phdct.score import SigmaSchedule, make_schedule
from phdct.tv import TvSpec, tv_step


class ReconstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReconConfig:
    N: int = 10
    M: int = 2
    rank: RankSpec = field(default_factory=RankSpec)
    tv: TvSpec = field(default_factory=TvSpec)
    lambda_dc: float = 1.0
    corrector_snr: float = 0.16
    # normalised units; a = 1e5 leaves noise of a few 1e-3 on a unit-peak sinogram
    sigma_min: float = 0.0005
    sigma_max: float = 0.005
    window: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.N < 0 or self.M < 0:
            raise ValueError("N and M must be >= 0")
        if self.lambda_dc < 0:
            raise ValueError("lambda_dc must be >= 0")
        if not self.corrector_snr > 0:
            raise ValueError("corrector_snr must be > 0")

    def schedule(self) -> SigmaSchedule:
        """``N + 1`` levels so the first predictor step can use ``(sigma_N, sigma_{N-1})``."""
        return make_schedule(self.N + 1, self.sigma_min, self.sigma_max)


# long schedule for full-size sinograms
FULL_RECON = dict(N=300, M=2)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _check_models(models) -> None:
    if len(models) != 3:
        raise ValueError(f"expected 3 partition models, got {len(models)}")
    shapes = {tuple(m.patch_shape) for m in models}
    scales = {m.scale for m in models}
    if len(shapes) != 1 or len(scales) != 1:
        raise ValueError("partition models disagree on patch shape or normalisation scale")


def _window(models) -> int:
    cols = models[0].patch_shape[1]
    l = math.isqrt(cols)
    if l * l != cols:
        raise ValueError(f"patch width {cols} is not a square window size")
    return l


def partition_scores(parts, models, sigma: float, order=(0, 1, 2)) -> list[np.ndarray]:
    """Per-partition score matrices, evaluated tile by tile in the given order."""
    out = [None, None, None]
    for k in order:
        part = parts.parts()[k]
        tiles = tile_for_inference(part, models[k].patch_shape)
        s = models[k](tiles.patches, sigma)
        out[k] = untile(PatchTensor(s, tiles.offsets, part.shape[0]))
    return out


def score_field(x: np.ndarray, models, sigma: float, order=(0, 1, 2)) -> np.ndarray:
    """Sinogram-shaped score: Hankel lift, triple* split, tile-wise scores, mean recombination, H+."""
    _check_models(models)
    H = hankel_transform(x, _window(models))
    parts = partition_triple_star(H)
    scores = partition_scores(parts, models, sigma, order)
    return hankel_pinv(recombine(parts.with_parts(scores)))


def predictor_step(x: np.ndarray, models, sigma_next: float, sigma_cur: float,
                   rng=None, add_noise: bool = True) -> np.ndarray:
    """Reverse variance-exploding step from ``sigma_next`` down to ``sigma_cur``."""
    if not sigma_next >= sigma_cur >= 0:
        raise ValueError("need sigma_next >= sigma_cur >= 0")
    _check_models(models)
    scale = models[0].scale
    xn = np.asarray(x, dtype=float) / scale
    dvar = sigma_next ** 2 - sigma_cur ** 2
    if dvar == 0:
        return xn * scale
    xn = xn + dvar * score_field(xn, models, sigma_next)
    if add_noise:
        xn = xn + math.sqrt(dvar) * _rng(rng).standard_normal(xn.shape)
    return xn * scale


def corrector_step(x: np.ndarray, models, sigma: float, snr: float,
                   rng=None, add_noise: bool = True) -> np.ndarray:
    """One Langevin step with step size ``2 (snr * sigma)^2``."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    _check_models(models)
    scale = models[0].scale
    eps = 2.0 * (snr * sigma) ** 2
    xn = np.asarray(x, dtype=float) / scale
    if eps == 0:
        return xn * scale
    xn = xn + eps * score_field(xn, models, sigma)
    if add_noise:
        xn = xn + math.sqrt(2.0 * eps) * _rng(rng).standard_normal(xn.shape)
    return xn * scale


def dc_pwls_step(x: np.ndarray, y: np.ndarray, weights: np.ndarray, lambda_dc: float) -> np.ndarray:
    """Closed-form weighted blend ``(w y + lambda x) / (w + lambda)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not x.shape == y.shape == w.shape:
        raise ValueError(f"shape mismatch: x {x.shape}, y {y.shape}, weights {w.shape}")
    if lambda_dc < 0:
        raise ValueError("lambda_dc must be >= 0")
    if lambda_dc == 0:
        return y.copy()
    return (w * y + lambda_dc * x) / (w + lambda_dc)


def low_rank_step(x: np.ndarray, spec: RankSpec, window: int = 8) -> np.ndarray:
    parts = partition_triple_star(hankel_transform(x, window))
    return hankel_pinv(lr_step(parts, spec))


def reconstruct(y: np.ndarray, models, weights: np.ndarray, geom: FanGeometry | None,
                cfg: ReconConfig, callback=None, filter: str = "ram-lak"):
    """Run the outer loop from the low-dose sinogram ``y``.

    Returns ``(sinogram, image)``; ``image`` is ``None`` when ``geom`` is
    ``None``. ``callback(i, x)`` is invoked after every outer iteration.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("low-dose sinogram contains non-finite values")
    _check_models(models)
    schedules = {tuple(m.schedule.levels) if m.schedule is not None else None for m in models}
    if len(schedules) != 1:
        raise ValueError("partition models carry different noise schedules")
    rng = np.random.default_rng(cfg.seed)
    sched = cfg.schedule()
    x = y.copy()

    for i in range(cfg.N - 1, -1, -1):
        x_prev = x
        s_next, s_cur = sched.sigma(i + 1), sched.sigma(i)
        steps = [
            ("predictor", lambda v: predictor_step(v, models, s_next, s_cur, rng)),
            ("low-rank", lambda v: low_rank_step(v, cfg.rank, cfg.window)),
            ("tv", lambda v: tv_step(x_prev, v, cfg.tv)),
            ("data-consistency", lambda v: dc_pwls_step(v, y, weights, cfg.lambda_dc)),
        ]
        for _ in range(cfg.M):
            steps.append(("corrector", lambda v: corrector_step(v, models, s_cur, cfg.corrector_snr, rng)))
            steps.append(("data-consistency", lambda v: dc_pwls_step(v, y, weights, cfg.lambda_dc)))
        for name, fn in steps:
            try:
                x = fn(x)
            except Exception as exc:
                raise ReconstructionError(f"outer iteration i={i}, step {name!r}: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise ReconstructionError(f"outer iteration i={i}: non-finite values in the iterate")
        if callback is not None:
            callback(i, x)

    image = None if geom is None else fbp_reconstruct(x, geom, filter)
    return x, image


def config_from_dict(d: dict) -> ReconConfig:
    known = {f.name for f in dataclasses.fields(ReconConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown reconstruction keys: {sorted(unknown)}")
    d = dict(d)
    if isinstance(d.get("rank"), dict):
        d["rank"] = RankSpec(**d["rank"])
    if isinstance(d.get("tv"), dict):
        d["tv"] = TvSpec(**d["tv"])
    return ReconConfig(**d)

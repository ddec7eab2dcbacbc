"""Noise-conditional score models over Hankel patches and their DSM training.

Two model kinds share one calling convention, ``model(patches, sigma)`` with
``patches`` of shape ``(C, rows, cols)``:

* :class:`ScoreNet` -- a skip-preconditioned denoiser ``D`` around a
  three-layer SiLU perceptron, ``s = (D(p) - p) / sigma^2`` (trainable).
* :class:`GaussianScore` -- the exact score of ``N(mean, variance I)``
  perturbed by ``N(0, sigma^2 I)``; used as an oracle in tests.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import expit

from phdct.hankel import PATCH_SHAPE, extract_patches, hankel_transform, partition_triple_star

WINDOW = 8


@dataclass(frozen=True)
class SigmaSchedule:
    """Noise levels, stored largest first: ``levels[0] = sigma_{N-1}``."""

    levels: tuple[float, ...]

    def __post_init__(self):
        lv = tuple(float(s) for s in self.levels)
        object.__setattr__(self, "levels", lv)
        if not lv:
            raise ValueError("empty schedule")
        if lv[-1] <= 0:
            raise ValueError("noise levels must be positive")
        if any(b >= a for a, b in zip(lv, lv[1:])):
            raise ValueError("noise levels must be strictly decreasing")

    @property
    def N(self) -> int:
        return len(self.levels)

    @property
    def sigma_max(self) -> float:
        return self.levels[0]

    @property
    def sigma_min(self) -> float:
        return self.levels[-1]

    def sigma(self, i: int) -> float:
        """``sigma_i`` with ``sigma_0`` the smallest level."""
        if not 0 <= i < self.N:
            raise IndexError(f"schedule index {i} out of range for N={self.N}")
        return self.levels[self.N - 1 - i]


def make_schedule(N: int, sigma_min: float, sigma_max: float) -> SigmaSchedule:
    """Geometric schedule from ``sigma_max`` down to ``sigma_min``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not 0 < sigma_min < sigma_max:
        raise ValueError("need 0 < sigma_min < sigma_max")
    if N == 1:
        return SigmaSchedule((float(sigma_max),))
    ratio = sigma_min / sigma_max
    # index i = N-1 ... 0, largest first
    levels = [sigma_max * ratio ** ((N - 1 - i) / (N - 1)) for i in range(N - 1, -1, -1)]
    levels[0], levels[-1] = float(sigma_max), float(sigma_min)
    return SigmaSchedule(tuple(levels))


# ---------------------------------------------------------------------------
# models

def _silu(a):
    return a * expit(a)


def _silu_grad(a):
    s = expit(a)
    return s + a * s * (1.0 - s)


class ScoreModel:
    kind: str = ""
    patch_shape: tuple[int, int] = PATCH_SHAPE

    def __init__(self, scale: float = 1.0, schedule: SigmaSchedule | None = None,
                 partition: int | None = None, seed: int | None = None):
        self.scale = float(scale)
        self.schedule = schedule
        self.partition = partition
        self.seed = seed

    def __call__(self, patches: np.ndarray, sigma: float) -> np.ndarray:
        raise NotImplementedError

    @property
    def parameters(self) -> np.ndarray:
        raise NotImplementedError

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "patch_shape": list(self.patch_shape),
            "schedule": None if self.schedule is None else list(self.schedule.levels),
            "scale": self.scale,
            "partition": self.partition,
            "seed": self.seed,
        }


class GaussianScore(ScoreModel):
    """Score of ``N(mean, variance)`` convolved with ``N(0, sigma^2)``.

    ``mean`` is either one patch, broadcast over the batch, or a stack with
    one mean per tile.
    """

    kind = "analytic-gaussian"

    def __init__(self, mean, variance: float, patch_shape=None, **kw):
        super().__init__(**kw)
        self.mean = np.asarray(mean, dtype=float)
        self.variance = float(variance)
        if self.variance < 0:
            raise ValueError("variance must be >= 0")
        self.patch_shape = tuple(patch_shape or self.mean.shape[-2:])

    def __call__(self, patches, sigma):
        return -(np.asarray(patches, dtype=float) - self.mean) / (self.variance + sigma ** 2)

    @property
    def parameters(self) -> np.ndarray:
        return np.concatenate([self.mean.ravel(), [self.variance]])

    def manifest(self) -> dict:
        return {**super().manifest(), "mean_shape": list(self.mean.shape)}


class ScoreNet(ScoreModel):
    """Trainable score built from a skip-preconditioned denoiser.

    ``D(p) = c_skip p + c_out F(c_in p, sigma)`` with
    ``c_skip = sd^2 / (sigma^2 + sd^2)``, ``c_out = sigma sd / sqrt(sigma^2 + sd^2)``,
    ``c_in = 1 / sqrt(sigma^2 + sd^2)`` and ``sd`` the data scale; the score is
    ``(D(p) - p) / sigma^2``. ``F`` is a d -> h -> h -> d SiLU perceptron whose
    first layer also receives ``log(sigma) / 4`` through a learned vector. With
    ``F = 0`` the model is already a shrinkage denoiser, so the low-rank
    perceptron output only has to learn the correction.
    """

    kind = "trainable-net"

    def __init__(self, hidden: int = 512, patch_shape=PATCH_SHAPE, params=None,
                 dtype=np.float32, rng=None, sigma_data: float = 0.5, **kw):
        super().__init__(**kw)
        self.patch_shape = tuple(int(v) for v in patch_shape)
        self.sigma_data = float(sigma_data)
        if not self.sigma_data > 0:
            raise ValueError("sigma_data must be > 0")
        d = self.patch_shape[0] * self.patch_shape[1]
        self.sizes = (d, int(hidden), int(hidden), d)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(self.seed)
            params = self.init_params(self.sizes, rng)
        params = np.asarray(params, dtype=dtype)
        if params.size != self.n_params:
            raise ValueError(f"parameter vector has {params.size} entries, expected {self.n_params}")
        self.params = params.copy()

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:])) + self.sizes[1]

    @staticmethod
    def init_params(sizes, rng) -> np.ndarray:
        """Kaiming-normal weights (fan-in, gain sqrt 2), zero biases and noise embedding."""
        chunks = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            chunks.append(rng.standard_normal((fan_in, fan_out)).ravel() * np.sqrt(2.0 / fan_in))
            chunks.append(np.zeros(fan_out))
            if i == 0:
                chunks.append(np.zeros(fan_out))
        return np.concatenate(chunks)

    @property
    def parameters(self) -> np.ndarray:
        return self.params

    def layers(self, params=None):
        """``[(W1, b1, e1), (W2, b2), (W3, b3)]`` as views into the flat vector."""
        params = self.params if params is None else params
        out, pos = [], 0
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            W = params[pos:pos + a * b].reshape(a, b)
            pos += a * b
            layer = [W, params[pos:pos + b]]
            pos += b
            if i == 0:
                layer.append(params[pos:pos + b])
                pos += b
            out.append(tuple(layer))
        return out

    def coefficients(self, sigma):
        """``(c_skip, c_out, c_in, c_noise)``; elementwise for an array of levels."""
        sd2 = self.sigma_data ** 2
        tot = sigma ** 2 + sd2
        return sd2 / tot, sigma * self.sigma_data / np.sqrt(tot), 1.0 / np.sqrt(tot), np.log(sigma) / 4

    def forward(self, X: np.ndarray, sigma: float, params=None) -> np.ndarray:
        """Perceptron output ``F`` for flattened, already ``c_in``-scaled inputs ``(B, d)``."""
        (W1, b1, e1), (W2, b2), (W3, b3) = self.layers(params)
        c_noise = X.dtype.type(np.log(sigma) / 4)
        h1 = _silu(X @ W1 + b1 + c_noise * e1)
        h2 = _silu(h1 @ W2 + b2)
        return h2 @ W3 + b3

    def denoise(self, patches: np.ndarray, sigma: float, chunk: int = 256) -> np.ndarray:
        patches = np.asarray(patches)
        X = patches.reshape(-1, self.sizes[0]).astype(np.float64, copy=False)
        c_skip, c_out, c_in, _ = self.coefficients(sigma)
        Xc = (c_in * X).astype(self.params.dtype)
        out = np.empty(X.shape, dtype=np.float64)
        for i in range(0, X.shape[0], chunk):
            out[i:i + chunk] = self.forward(Xc[i:i + chunk], sigma)
        return (c_skip * X + c_out * out).reshape(patches.shape)

    def __call__(self, patches, sigma, chunk: int = 256):
        patches = np.asarray(patches, dtype=np.float64)
        return (self.denoise(patches, sigma, chunk) - patches) / sigma ** 2

    def loss_and_grad(self, clean: np.ndarray, z: np.ndarray, sigma, params=None):
        """DSM loss ``mean_b ||sigma s(p0 + sigma z) + z||^2 = mean_b ||D(p) - p0||^2 / sigma^2``
        and its gradient with respect to the flat parameter vector.

        ``sigma`` is a scalar or one level per patch.
        """
        params = self.params if params is None else params
        dt = params.dtype
        B = clean.shape[0]
        sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (B,))[:, None]
        P0 = clean.reshape(B, -1).astype(np.float64)
        P = P0 + sig * z.reshape(B, -1)
        c_skip, c_out, c_in, c_noise = self.coefficients(sig)
        X = (c_in * P).astype(dt)
        (W1, b1, e1), (W2, b2), (W3, b3) = self.layers(params)
        c_noise = c_noise.astype(dt)
        a1 = X @ W1 + b1 + c_noise * e1
        h1 = _silu(a1)
        a2 = h1 @ W2 + b2
        h2 = _silu(a2)
        F = h2 @ W3 + b3
        # residual of D - p0 in units of sigma
        resid = ((c_skip * P - P0) / sig).astype(dt) + (c_out / sig).astype(dt) * F
        loss = float(np.sum(resid.astype(np.float64) ** 2) / B)

        g_out = (2.0 * c_out / (B * sig)).astype(dt) * resid
        gW3 = h2.T @ g_out
        gb3 = g_out.sum(0)
        g_a2 = (g_out @ W3.T) * _silu_grad(a2)
        gW2 = h1.T @ g_a2
        gb2 = g_a2.sum(0)
        g_a1 = (g_a2 @ W2.T) * _silu_grad(a1)
        gW1 = X.T @ g_a1
        gb1 = g_a1.sum(0)
        ge1 = (g_a1 * c_noise).sum(0)
        grad = np.concatenate([gW1.ravel(), gb1, ge1, gW2.ravel(), gb2, gW3.ravel(), gb3])
        return loss, grad.astype(dt, copy=False)

    def manifest(self) -> dict:
        return {**super().manifest(), "layer_sizes": list(self.sizes),
                "sigma_data": self.sigma_data, "dtype": np.dtype(self.params.dtype).name}


def score_eval(model: ScoreModel, patch: np.ndarray, sigma: float) -> np.ndarray:
    """Score estimate for one patch or a ``(C, rows, cols)`` stack."""
    patch = np.asarray(patch)
    if not np.all(np.isfinite(patch)):
        raise ValueError("non-finite patch values")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if model.schedule is not None and sigma > model.schedule.sigma_max * (1 + 1e-12):
        raise ValueError(f"sigma {sigma} exceeds the model's sigma_max {model.schedule.sigma_max}")
    single = patch.ndim == 2
    out = model(patch[None] if single else patch, sigma)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# denoising score matching

def dsm_loss(model: ScoreModel, clean: np.ndarray, sigma: float, seed=None) -> float:
    """``sigma^2 * mean_b || s(p0 + sigma z, sigma) + z / sigma ||^2``."""
    clean = np.asarray(clean, dtype=float)
    if clean.ndim == 2:
        clean = clean[None]
    if clean.shape[0] == 0:
        raise ValueError("empty batch")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal(clean.shape)
    s = model(clean + sigma * z, sigma)
    r = s + z / sigma
    return float(sigma ** 2 * np.mean(np.sum(r.reshape(r.shape[0], -1) ** 2, axis=1)))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    total_steps: int = 2000
    seed: int = 0
    patches_per_epoch: int = 1024
    hidden: int = 512

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "patches_per_epoch", "hidden"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        # zero steps is allowed: it yields the initialised models
        if self.total_steps < 0 or self.seed < 0:
            raise ValueError("total_steps and seed must be non-negative")


class Adam:
    def __init__(self, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, dtype=np.float32):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n, dtype=dtype)
        self.v = np.zeros(n, dtype=dtype)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(params.dtype, copy=False)


@dataclass
class TrainResult:
    models: list[ScoreNet]
    scale: float
    losses: list[np.ndarray] = field(default_factory=list)


def training_partitions(shots, scale: float, window: int = WINDOW):
    """Triple*-partitioned Hankel matrices of each normalised shot, grouped by partition index."""
    groups = [[], [], []]
    for x in shots:
        x = np.asarray(x, dtype=float)
        if min(x.shape) < window:
            raise ValueError(f"shot of shape {x.shape} is smaller than the {window}x{window} Hankel window")
        parts = partition_triple_star(hankel_transform(x / scale, window))
        for k, p in enumerate(parts.parts()):
            groups[k].append(p)
    return groups


def ema(values, window: int = 100) -> np.ndarray:
    """Exponential moving average with smoothing ``2 / (window + 1)``."""
    a = 2.0 / (window + 1)
    out = np.empty(len(values))
    acc = values[0] if len(values) else 0.0
    for i, v in enumerate(values):
        acc = a * v + (1 - a) * acc
        out[i] = acc
    return out


def default_schedule(shots, N: int = 10, sigma_min: float = 0.002, window: int = WINDOW,
                     n_patches: int = 256, seed: int = 0, patch_shape=PATCH_SHAPE) -> SigmaSchedule:
    """Geometric training schedule whose top level is the largest pairwise
    distance between normalised training patches, so that the coarsest level
    mixes all of them."""
    shots = [np.asarray(s, dtype=float) for s in shots]
    scale = max(float(np.max(s)) for s in shots) or 1.0
    rng = np.random.default_rng(seed)
    sample = []
    for group in training_partitions(shots, scale, window):
        for part in group:
            sample.append(extract_patches(part, n_patches, rng, patch_shape).patches.reshape(n_patches, -1))
    sample = np.concatenate(sample)
    sigma_max = float(pdist(sample).max())
    if not sigma_max > sigma_min:
        raise ValueError("training patches are too similar to set a noise schedule")
    return make_schedule(N, sigma_min, sigma_max)


def train_partition_model(parts: list[np.ndarray], cfg: TrainConfig, schedule: SigmaSchedule,
                          rng: np.random.Generator, scale: float = 1.0, partition: int | None = None,
                          patch_shape=PATCH_SHAPE):
    """Fit one :class:`ScoreNet` to patches drawn from ``parts`` (one per shot)."""
    model = ScoreNet(hidden=cfg.hidden, patch_shape=patch_shape, rng=rng, scale=scale,
                     schedule=schedule, partition=partition, seed=cfg.seed)
    opt = Adam(model.params.size, lr=cfg.learning_rate, dtype=model.params.dtype)
    levels = np.asarray(schedule.levels)
    losses = np.empty(cfg.total_steps)
    pool = np.empty((0,) + tuple(patch_shape))
    cursor = 0
    for step in range(cfg.total_steps):
        if cursor + cfg.batch_size > len(pool):
            shot_idx = rng.integers(0, len(parts), size=cfg.patches_per_epoch)
            chunks = []
            for k in range(len(parts)):
                n = int(np.sum(shot_idx == k))
                if n:
                    chunks.append(extract_patches(parts[k], n, rng, patch_shape).patches)
            pool = np.concatenate(chunks)[rng.permutation(cfg.patches_per_epoch)]
            cursor = 0
            if len(pool) < cfg.batch_size:
                raise ValueError("patches_per_epoch must be at least batch_size")
        batch = pool[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        # one level per patch, so every batch mixes noise scales
        sigma = levels[rng.integers(0, len(levels), size=len(batch))]
        z = rng.standard_normal(batch.shape)
        loss, grad = model.loss_and_grad(batch, z, sigma)
        opt.step(model.params, grad)
        losses[step] = loss
    return model, losses


def train(shots, cfg: TrainConfig, schedule: SigmaSchedule, patch_shape=PATCH_SHAPE) -> TrainResult:
    """One score model per triple* partition, trained on the Hankel patches of ``shots``."""
    shots = [np.asarray(s, dtype=float) for s in shots]
    if not shots:
        raise ValueError("need at least one training shot")
    scale = max(float(np.max(s)) for s in shots)
    if not scale > 0:
        scale = 1.0
    groups = training_partitions(shots, scale)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3)]
    models, losses = [], []
    for k in range(3):
        m, l = train_partition_model(groups[k], cfg, schedule, rngs[k], scale, k, patch_shape)
        models.append(m)
        losses.append(l)
    return TrainResult(models, scale, losses)


def init_models(cfg: TrainConfig, schedule: SigmaSchedule, scale: float = 1.0,
                patch_shape=PATCH_SHAPE) -> list[ScoreNet]:
    """Untrained partition models, seeded the same way :func:`train` seeds them."""
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3)]
    return [ScoreNet(hidden=cfg.hidden, patch_shape=patch_shape, rng=rngs[k], scale=scale,
                     schedule=schedule, partition=k, seed=cfg.seed) for k in range(3)]


# ---------------------------------------------------------------------------
# checkpoints

def save_model(model: ScoreModel, base: str | Path) -> tuple[Path, Path]:
    """Write ``<base>.bin`` (little-endian float32 parameters) and ``<base>.json``."""
    base = Path(base)
    blob = base.with_suffix(".bin")
    meta = base.with_suffix(".json")
    np.asarray(model.parameters, dtype="<f4").tofile(blob)
    meta.write_text(json.dumps(model.manifest(), indent=2, sort_keys=True) + "\n")
    return blob, meta


def load_model(base: str | Path) -> ScoreModel:
    base = Path(base)
    manifest = json.loads(base.with_suffix(".json").read_text())
    params = np.fromfile(base.with_suffix(".bin"), dtype="<f4")
    schedule = SigmaSchedule(tuple(manifest["schedule"])) if manifest.get("schedule") else None
    common = dict(scale=manifest["scale"], schedule=schedule,
                  partition=manifest.get("partition"), seed=manifest.get("seed"))
    kind = manifest["kind"]
    if kind == ScoreNet.kind:
        sizes = manifest["layer_sizes"]
        return ScoreNet(hidden=sizes[1], patch_shape=manifest["patch_shape"], params=params,
                        dtype=np.float32, sigma_data=manifest.get("sigma_data", 0.5), **common)
    if kind == GaussianScore.kind:
        mean = params[:-1].astype(float).reshape(manifest["mean_shape"])
        return GaussianScore(mean, float(params[-1]), patch_shape=manifest["patch_shape"], **common)
    raise ValueError(f"unknown model kind {kind!r}")

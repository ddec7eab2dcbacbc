"""Run configuration: one JSON document covering every stage of the pipeline."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from phdct.geometry import PHANTOM_KINDS, FanGeometry, preset
from phdct.lowrank import RankSpec
from phdct.noise import DEFAULT_ETA, DoseSpec
from phdct.sampler import ReconConfig
from phdct.score import TrainConfig
from phdct.tv import TvSpec


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    kind: str = "shepp-logan"
    value: float = 1.0
    # 0 keeps raw phantom values
    max_line_integral: float = 4.0

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.max_line_integral < 0:
            raise ValueError("max_line_integral must be >= 0")


@dataclass(frozen=True)
class ScheduleSpec:
    """Training noise levels; ``sigma_max = None`` picks the largest patch distance."""

    N: int = 10
    sigma_min: float = 0.002
    sigma_max: float | None = None
    patch_rows: int = 64


@dataclass(frozen=True)
class RunConfig:
    geometry: FanGeometry = field(default_factory=lambda: preset("toy", 64))
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    dose: DoseSpec = field(default_factory=DoseSpec)
    eta: float = DEFAULT_ETA
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    recon: ReconConfig = field(default_factory=ReconConfig)
    filter: str = "ram-lak"
    paths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["geometry"] = self.geometry.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_NESTED = {
    PhantomSpec: {}, DoseSpec: {}, TrainConfig: {}, ScheduleSpec: {},
    ReconConfig: {"rank": RankSpec, "tv": TvSpec},
}


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ValueError(f"{where}: expected an object, got {type(d).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    kw = dict(d)
    for name, sub in _NESTED.get(cls, {}).items():
        if name in kw:
            kw[name] = _build(sub, kw[name], f"{where}.{name}")
    return cls(**kw)


def from_dict(d: dict) -> RunConfig:
    """Strict parse; every unknown key at any level is an error."""
    if not isinstance(d, dict):
        raise ValueError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"config: unknown keys {unknown}")
    kw = {}
    for name, value in d.items():
        if name == "geometry":
            kw[name] = FanGeometry.from_dict(value)
        elif name == "phantom":
            kw[name] = _build(PhantomSpec, value, name)
        elif name == "dose":
            kw[name] = _build(DoseSpec, value, name)
        elif name == "train":
            kw[name] = _build(TrainConfig, value, name)
        elif name == "schedule":
            kw[name] = _build(ScheduleSpec, value, name)
        elif name == "recon":
            kw[name] = _build(ReconConfig, value, name)
        elif name == "paths":
            if not isinstance(value, dict):
                raise ValueError("paths: expected an object")
            kw[name] = dict(value)
        else:
            kw[name] = value
    return RunConfig(**kw)


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))


STREAMS = ("noise", "training", "sampling")


def sub_seeds(seed: int) -> dict[str, int]:
    """Independent integer seeds for the named random streams."""
    if seed < 0:
        raise ValueError("seed must be >= 0")
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: int(c.generate_state(1, dtype=np.uint32)[0]) for name, c in zip(STREAMS, children)}

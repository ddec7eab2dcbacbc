"""Block-Hankel lifting of sinograms, triple* partitioning and patch tiling.

A sinogram ``x`` of shape ``(Lx, Ly)`` lifts to a ``P x l^2`` matrix whose row
``k`` is the row-major vectorisation of the ``k``-th ``l x l`` window, windows
enumerated row-major over the ``(Lx - l + 1) x (Ly - l + 1)`` positions
(stride 1).

The triple* partition splits the ``P`` rows into halves ``part1 = [H1L; H1R]``
and ``part2 = [H2L; H2R]`` and adds the middle block ``part3 = [H1R; H2L]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PATCH_SHAPE = (64, 64)


@dataclass
class HankelMatrix:
    values: np.ndarray
    src_dims: tuple[int, int, int]  # (Lx, Ly, l)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def window_grid(self) -> tuple[int, int]:
        lx, ly, l = self.src_dims
        return lx - l + 1, ly - l + 1

    def check(self) -> None:
        lx, ly, l = (int(v) for v in self.src_dims)
        if l < 1 or lx < l or ly < l:
            raise ValueError(f"corrupted src_dims {self.src_dims}")
        expected = ((lx - l + 1) * (ly - l + 1), l * l)
        if self.values.ndim != 2 or self.values.shape != expected:
            raise ValueError(f"Hankel values shape {self.values.shape} inconsistent with "
                             f"src_dims {self.src_dims} (expected {expected})")


def hankel_transform(x: np.ndarray, l: int = 8) -> HankelMatrix:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("expected a 2-D sinogram")
    if l < 2:
        raise ValueError("window size must be >= 2")
    lx, ly = x.shape
    if lx < l or ly < l:
        raise ValueError(f"window {l}x{l} larger than sinogram {lx}x{ly}")
    win = sliding_window_view(x, (l, l))
    return HankelMatrix(win.reshape(-1, l * l).copy(), (lx, ly, l))


def coverage_counts(src_dims: tuple[int, int, int]) -> np.ndarray:
    """Number of windows covering each sinogram pixel."""
    lx, ly, l = src_dims
    cx = np.convolve(np.ones(lx - l + 1), np.ones(l))
    cy = np.convolve(np.ones(ly - l + 1), np.ones(l))
    return np.outer(cx, cy)


def hankel_pinv(H: HankelMatrix) -> np.ndarray:
    """Back to a sinogram by averaging every Hankel entry that maps to a pixel."""
    H.check()
    lx, ly, l = H.src_dims
    nx, ny = H.window_grid
    out = np.zeros((lx, ly), dtype=np.result_type(H.values.dtype, np.float64))
    for a in range(l):
        for b in range(l):
            out[a:a + nx, b:b + ny] += H.values[:, a * l + b].reshape(nx, ny)
    return out / coverage_counts(H.src_dims)


@dataclass
class PartitionSet:
    """The three triple* sub-matrices with their row ranges in the parent."""

    part1: np.ndarray
    part2: np.ndarray
    part3: np.ndarray
    rows: int
    src_dims: tuple[int, int, int] | None = None

    @property
    def m1(self) -> int:
        return self.rows // 2

    @property
    def m2(self) -> int:
        return self.rows - self.rows // 2

    @property
    def split1(self) -> int:
        """Rows in H1L."""
        return self.m1 // 2

    @property
    def split2(self) -> int:
        """Rows in H2L."""
        return self.m2 // 2

    @property
    def ranges(self) -> dict[str, tuple[int, int]]:
        return {
            "part1": (0, self.m1),
            "part2": (self.m1, self.rows),
            "part3": (self.split1, self.m1 + self.split2),
        }

    def parts(self) -> list[np.ndarray]:
        return [self.part1, self.part2, self.part3]

    def with_parts(self, parts) -> "PartitionSet":
        p1, p2, p3 = parts
        return PartitionSet(p1, p2, p3, self.rows, self.src_dims)

    def check(self) -> None:
        for name, part in zip(("part1", "part2", "part3"), self.parts()):
            lo, hi = self.ranges[name]
            if part.ndim != 2 or part.shape[0] != hi - lo:
                raise ValueError(f"{name} has {part.shape[0] if part.ndim else 0} rows, "
                                 f"expected {hi - lo} for range [{lo}, {hi})")
        cols = {p.shape[1] for p in self.parts()}
        if len(cols) != 1:
            raise ValueError(f"partition column counts disagree: {sorted(cols)}")


def partition_triple_star(H: HankelMatrix | np.ndarray) -> PartitionSet:
    if isinstance(H, HankelMatrix):
        values, src = H.values, H.src_dims
    else:
        values, src = np.asarray(H), None
    P = values.shape[0]
    if P < 8:
        raise ValueError(f"need at least 8 Hankel rows to partition, got {P}")
    out = PartitionSet(values[:P // 2].copy(), values[P // 2:].copy(), None, P, src)
    lo, hi = out.ranges["part3"]
    out.part3 = values[lo:hi].copy()
    return out


def recombine(parts: PartitionSet) -> HankelMatrix | np.ndarray:
    """Stitch ``[H1L; (H1R + H3L)/2; (H2L + H3R)/2; H2R]``.

    Returns a :class:`HankelMatrix` when the partition carries ``src_dims``,
    otherwise the bare array.
    """
    parts.check()
    s1, s2 = parts.split1, parts.split2
    p1, p2, p3 = parts.parts()
    n1r = p1.shape[0] - s1
    values = np.concatenate([
        p1[:s1],
        (p1[s1:] + p3[:n1r]) / 2,
        (p2[:s2] + p3[n1r:]) / 2,
        p2[s2:],
    ])
    if parts.src_dims is None:
        return values
    return HankelMatrix(values, parts.src_dims)


@dataclass
class PatchTensor:
    patches: np.ndarray          # (C, rows, cols)
    offsets: np.ndarray          # (C,) starting row of each patch within its partition
    part_rows: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.patches.shape[0]


def _check_part(part: np.ndarray, patch_shape) -> np.ndarray:
    part = np.asarray(part)
    rows, cols = patch_shape
    if part.ndim != 2 or part.shape[0] < rows:
        raise ValueError(f"partition has {part.shape[0] if part.ndim == 2 else 0} rows, "
                         f"need at least {rows}")
    if part.shape[1] != cols:
        raise ValueError(f"partition has {part.shape[1]} columns, expected {cols}")
    return part


def extract_patches(part: np.ndarray, count: int, seed=None,
                    patch_shape: tuple[int, int] = PATCH_SHAPE) -> PatchTensor:
    """``count`` contiguous row-slices at uniformly random offsets."""
    part = _check_part(part, patch_shape)
    rows = patch_shape[0]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    offsets = rng.integers(0, part.shape[0] - rows + 1, size=count)
    idx = offsets[:, None] + np.arange(rows)[None, :]
    return PatchTensor(part[idx], offsets, part.shape[0])


def tile_offsets(n_rows: int, rows: int = PATCH_SHAPE[0]) -> np.ndarray:
    if n_rows < rows:
        raise ValueError(f"partition has {n_rows} rows, need at least {rows}")
    offsets = list(range(0, n_rows - rows + 1, rows))
    if n_rows % rows:
        offsets.append(n_rows - rows)
    return np.asarray(offsets, dtype=np.int64)


def tile_for_inference(part: np.ndarray, patch_shape: tuple[int, int] = PATCH_SHAPE) -> PatchTensor:
    """Aligned tiles plus one end-aligned tile when the rows do not divide evenly."""
    part = _check_part(part, patch_shape)
    offsets = tile_offsets(part.shape[0], patch_shape[0])
    idx = offsets[:, None] + np.arange(patch_shape[0])[None, :]
    return PatchTensor(part[idx], offsets, part.shape[0])


def untile(tensor: PatchTensor, n_rows: int | None = None) -> np.ndarray:
    """Inverse of :func:`tile_for_inference`; overlapping rows are averaged."""
    n_rows = tensor.part_rows if n_rows is None else n_rows
    c, rows, cols = tensor.patches.shape
    if c != len(tensor.offsets):
        raise ValueError("patch count and offset count differ")
    if c == 0 or tensor.offsets.max() + rows > n_rows or tensor.offsets.min() < 0:
        raise ValueError("tile offsets do not fit the partition")
    acc = np.zeros((n_rows, cols), dtype=np.result_type(tensor.patches.dtype, np.float64))
    cnt = np.zeros(n_rows)
    for off, patch in zip(tensor.offsets, tensor.patches):
        acc[off:off + rows] += patch
        cnt[off:off + rows] += 1
    if np.any(cnt == 0):
        raise ValueError("tiles leave partition rows uncovered")
    return acc / cnt[:, None]

"""Multi-channel dense grids: pyramids, bilinear sampling, spatial gradients.

A :class:`DenseMap` stores an ``(H, W, C)`` float field plus a per-pixel
validity mask; invalid pixels carry no information and every operation
propagates invalidity explicitly.  Maps are immutable after construction, so
concurrent reads are always safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooSmallError
from .geometry import CameraIntrinsics

# Uncertainty maps are clamped to at least this value so the residual
# normalisation can never divide by ~0.
SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class DenseMap:
    """Immutable H x W x C scalar field with a validity mask."""

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"expected (H, W) or (H, W, C) data, got shape {data.shape}")
        valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != data.shape[:2]:
            raise ValueError("validity mask shape must match the grid")
        if not np.isfinite(data[valid]).all():
            raise ValueError("valid pixels must hold finite values")
        data = data.copy()
        data[~valid] = 0.0
        data.setflags(write=False)
        valid = valid.copy()
        valid.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, data: np.ndarray, valid: np.ndarray | None = None) -> "DenseMap":
        data = np.asarray(data, dtype=float)
        if valid is None:
            valid = np.isfinite(data).all(axis=2) if data.ndim == 3 else np.isfinite(data)
        return cls(data, valid)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self, channel: int = 0) -> np.ndarray:
        """2D view of one channel."""
        return self.data[:, :, channel]


@dataclass(frozen=True)
class Pyramid:
    """Coarse-to-fine stack of (DenseMap, CameraIntrinsics); level 0 is finest."""

    levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))

    def __len__(self) -> int:
        return len(self.levels)

    def level(self, i: int) -> DenseMap:
        return self.levels[i][0]

    def intrinsics(self, i: int) -> CameraIntrinsics:
        return self.levels[i][1]


def _downsample_mean(grid: DenseMap) -> DenseMap:
    h2, w2 = grid.height // 2, grid.width // 2
    data = grid.data[: 2 * h2, : 2 * w2]
    valid = grid.valid[: 2 * h2, : 2 * w2]
    blocks = data.reshape(h2, 2, w2, 2, grid.channels)
    vblocks = valid.reshape(h2, 2, w2, 2)
    counts = vblocks.sum(axis=(1, 3))
    sums = (blocks * vblocks[:, :, :, :, None]).sum(axis=(1, 3))
    out_valid = counts > 0
    safe = np.maximum(counts, 1)[:, :, None]
    return DenseMap(sums / safe, out_valid)


def _downsample_median(grid: DenseMap) -> DenseMap:
    # Lower median of the valid block members: always an observed value, so
    # blocks straddling a depth discontinuity never invent in-between depths.
    h2, w2 = grid.height // 2, grid.width // 2
    data = grid.data[: 2 * h2, : 2 * w2, 0]
    valid = grid.valid[: 2 * h2, : 2 * w2]
    blocks = data.reshape(h2, 2, w2, 2).transpose(0, 2, 1, 3).reshape(h2, w2, 4)
    vblocks = valid.reshape(h2, 2, w2, 2).transpose(0, 2, 1, 3).reshape(h2, w2, 4)
    counts = vblocks.sum(axis=2)
    filled = np.where(vblocks, blocks, np.inf)
    filled.sort(axis=2)
    idx = np.maximum(counts - 1, 0) // 2
    out = np.take_along_axis(filled, idx[:, :, None], axis=2)[:, :, 0]
    out_valid = counts > 0
    out = np.where(out_valid, out, 0.0)
    return DenseMap(out[:, :, None], out_valid)


def build_pyramid(
    grid: DenseMap,
    intrinsics: CameraIntrinsics,
    levels: int,
    method: str = "mean",
) -> Pyramid:
    """Halve the grid ``levels - 1`` times, scaling intrinsics alongside.

    ``method`` selects the block reduction: ``"mean"`` averages over valid
    pixels (features, intensity), ``"median"`` takes the lower valid median
    (depth).  A block with no valid pixel is invalid at the coarser level.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if grid.width < 2 ** (levels - 1) or grid.height < 2 ** (levels - 1):
        raise TooSmallError(
            f"{grid.width}x{grid.height} grid cannot support {levels} levels"
        )
    if method not in ("mean", "median"):
        raise ValueError(f"unknown downsampling method {method!r}")
    if method == "median" and grid.channels != 1:
        raise ValueError("median downsampling is defined for single-channel maps")
    out = [(grid, intrinsics)]
    current, k = grid, intrinsics
    for _ in range(levels - 1):
        current = _downsample_mean(current) if method == "mean" else _downsample_median(current)
        k = k.halved()
        out.append((current, k))
    return Pyramid(tuple(out))


def sample_bilinear(grid: DenseMap, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup at continuous pixel coordinates ``(u, v)``.

    Accepts ``(2,)`` or ``(N, 2)`` and returns ``(values, valid)`` where
    values has shape ``(C,)`` / ``(N, C)``.  A sample is invalid when it falls
    outside ``[0, w-1] x [0, h-1]`` or any texel with nonzero weight is
    invalid; no exception is raised.
    """
    uv = np.asarray(uv, dtype=float)
    single = uv.ndim == 1
    pts = uv.reshape(-1, 2)
    n = pts.shape[0]
    h, w, c = grid.data.shape

    u, v = pts[:, 0], pts[:, 1]
    in_bounds = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    x0 = np.clip(np.floor(uc).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(vc).astype(int), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = uc - x0
    fy = vc - y0

    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy

    data, mask = grid.data, grid.valid
    values = (
        data[y0, x0] * w00[:, None]
        + data[y0, x1] * w10[:, None]
        + data[y1, x0] * w01[:, None]
        + data[y1, x1] * w11[:, None]
    )
    # texels with zero weight do not contribute and cannot invalidate
    ok = (
        in_bounds
        & (mask[y0, x0] | (w00 == 0))
        & (mask[y0, x1] | (w10 == 0))
        & (mask[y1, x0] | (w01 == 0))
        & (mask[y1, x1] | (w11 == 0))
    )
    values = np.where(ok[:, None], values, 0.0)
    if single:
        return values[0], bool(ok[0])
    return values, ok


def gradient(grid: DenseMap) -> tuple[DenseMap, DenseMap]:
    """Per-channel spatial derivatives along x and y.

    Central differences in the interior, one-sided at the borders.  A pixel's
    gradient is valid only when the pixel itself and every stencil neighbour
    are valid.
    """
    h, w = grid.height, grid.width
    if h < 3 or w < 3:
        raise TooSmallError(f"gradient needs at least 3x3, got {w}x{h}")
    data, valid = grid.data, grid.valid

    dx = np.zeros_like(data)
    dx[:, 1:-1] = (data[:, 2:] - data[:, :-2]) / 2.0
    dx[:, 0] = data[:, 1] - data[:, 0]
    dx[:, -1] = data[:, -1] - data[:, -2]
    vx = np.zeros_like(valid)
    vx[:, 1:-1] = valid[:, :-2] & valid[:, 1:-1] & valid[:, 2:]
    vx[:, 0] = valid[:, 0] & valid[:, 1]
    vx[:, -1] = valid[:, -1] & valid[:, -2]

    dy = np.zeros_like(data)
    dy[1:-1, :] = (data[2:, :] - data[:-2, :]) / 2.0
    dy[0, :] = data[1, :] - data[0, :]
    dy[-1, :] = data[-1, :] - data[-2, :]
    vy = np.zeros_like(valid)
    vy[1:-1, :] = valid[:-2, :] & valid[1:-1, :] & valid[2:, :]
    vy[0, :] = valid[0, :] & valid[1, :]
    vy[-1, :] = valid[-1, :] & valid[-2, :]

    return DenseMap(dx, vx), DenseMap(dy, vy)

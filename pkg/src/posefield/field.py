"""Dense field grids and bilinear sampling.

Cell ``(i, j)`` of a grid with stride ``s`` sits at image position
``((j + 0.5) * s, (i + 0.5) * s)``. Offsets are always stored in image pixels.
Sampling outside the grid clamps to the border cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class DimensionMismatch(ValueError):
    """Grids in one bundle disagree on shape, stride or channel count."""


class Point2D(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """H x W x C grid of reals at a given output stride.

    The array is copied on construction and marked read-only.
    """

    data: np.ndarray
    stride: int = 1

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"field data must be HxWxC, got shape {data.shape}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValueError(f"stride must be a positive integer, got {self.stride}")
        data = np.array(data, order="C", copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Image-pixel coordinates (xs, ys) of every cell center, each H x W."""
        s = self.stride
        xs = (np.arange(self.width, dtype=np.float64) + 0.5) * s
        ys = (np.arange(self.height, dtype=np.float64) + 0.5) * s
        return np.meshgrid(xs, ys)

    def replace(self, data: np.ndarray) -> "FieldGrid":
        return FieldGrid(data, self.stride)


def zeros(height: int, width: int, channels: int, stride: int = 1,
          dtype=np.float32) -> FieldGrid:
    return FieldGrid(np.zeros((height, width, channels), dtype=dtype), stride)


def _check_channel(grid: FieldGrid, channel: int) -> None:
    if not 0 <= channel < grid.channels:
        raise IndexError(f"channel {channel} out of range for grid with {grid.channels} channels")


def bilinear_weights(grid: FieldGrid, xs, ys):
    """Corner indices and weights for sampling ``grid`` at image points.

    Returns ``(r0, r1, c0, c1, wy, wx)`` arrays broadcast like ``xs``; the
    sample is ``(1-wy)(1-wx) g[r0,c0] + (1-wy) wx g[r0,c1] + wy (1-wx) g[r1,c0]
    + wy wx g[r1,c1]``. Continuous cell coordinates are clamped to the grid, so
    points beyond the outer cell centers read (or receive) the border value.
    """
    s = grid.stride
    u = np.clip(np.asarray(xs, dtype=np.float64) / s - 0.5, 0.0, grid.width - 1)
    v = np.clip(np.asarray(ys, dtype=np.float64) / s - 0.5, 0.0, grid.height - 1)
    c0 = np.floor(u).astype(np.intp)
    r0 = np.floor(v).astype(np.intp)
    c1 = np.minimum(c0 + 1, grid.width - 1)
    r1 = np.minimum(r0 + 1, grid.height - 1)
    return r0, r1, c0, c1, v - r0, u - c0


def sample(grid: FieldGrid, xs, ys, channels=None) -> np.ndarray:
    """Vectorised bilinear sampling.

    ``xs``/``ys`` share a shape ``P``; the result has shape ``P + (C,)`` where
    C is the number of selected channels (all by default).
    """
    data = grid.data
    r0, r1, c0, c1, wy, wx = bilinear_weights(grid, xs, ys)
    if channels is None:
        ch = slice(None)
    else:
        ch = np.asarray(channels, dtype=np.intp)
        r0, r1, c0, c1 = (a[..., None] for a in (r0, r1, c0, c1))
    wy = wy[..., None]
    wx = wx[..., None]
    top = data[r0, c0, ch] * (1.0 - wx) + data[r0, c1, ch] * wx
    bottom = data[r1, c0, ch] * (1.0 - wx) + data[r1, c1, ch] * wx
    return top * (1.0 - wy) + bottom * wy


def bilinear_sample(grid: FieldGrid, channel: int, p) -> float:
    """Bilinearly interpolate one channel at image point ``p = (x, y)``."""
    _check_channel(grid, channel)
    x, y = p
    return float(sample(grid, np.float64(x), np.float64(y), [channel])[0])


def sample_vector(grid: FieldGrid, index: int, xs, ys) -> np.ndarray:
    """Sample the 2-vector stored in channels ``(2*index, 2*index + 1)``."""
    _check_channel(grid, 2 * index + 1)
    return sample(grid, xs, ys, [2 * index, 2 * index + 1])


def sample_indexed(grid: FieldGrid, xs, ys, index, data: np.ndarray | None = None) -> np.ndarray:
    """Sample a per-point 2-vector: channels ``(2*index, 2*index + 1)`` at (xs, ys).

    ``index`` broadcasts against the points. ``data`` replaces ``grid.data``
    when given (same shape), which lets callers sample work arrays.
    """
    data = grid.data if data is None else data
    r0, r1, c0, c1, wy, wx = bilinear_weights(grid, xs, ys)
    n_ch = data.shape[2]
    flat = data.ravel()
    base = 2 * np.asarray(index)
    corners = [((r * grid.width + c) * n_ch + base, w)
               for r, c, w in ((r0, c0, (1 - wy) * (1 - wx)), (r0, c1, (1 - wy) * wx),
                               (r1, c0, wy * (1 - wx)), (r1, c1, wy * wx))]
    out = np.empty(np.shape(xs) + (2,), dtype=np.float64)
    for comp in (0, 1):
        acc = np.zeros(np.shape(xs))
        for pos, w in corners:
            acc += flat[pos + comp] * w
        out[..., comp] = acc
    return out

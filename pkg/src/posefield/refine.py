"""Recurrent refinement of mid- and long-range offsets.

Offsets stay relative to the cell they are stored at. One step moves each
cell's endpoint ``x' = x + F(x)`` to ``x' + G(x')`` where ``G`` is the
short-range field of the target keypoint (or ``F`` itself for long-range
self refinement), sampled bilinearly at ``x'``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import FieldGrid, sample_indexed
from .graph import KinematicGraph


@dataclass(frozen=True)
class RefinementConfig:
    mid_steps_short: int = 2
    long_steps_self: int = 2
    long_steps_short: int = 2

    def __post_init__(self):
        for name in ("mid_steps_short", "long_steps_self", "long_steps_short"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _step(grid: FieldGrid, offsets: np.ndarray, through: np.ndarray, index: np.ndarray) -> np.ndarray:
    xs, ys = grid.cell_centers()
    xs = np.broadcast_to(xs[:, :, None], index.shape)
    ys = np.broadcast_to(ys[:, :, None], index.shape)
    tx = xs + offsets[:, :, 0::2]
    ty = ys + offsets[:, :, 1::2]
    hop = sample_indexed(grid, tx, ty, index, through)
    refined = np.empty_like(offsets)
    refined[:, :, 0::2] = tx + hop[..., 0] - xs
    refined[:, :, 1::2] = ty + hop[..., 1] - ys
    return refined


def _targets(grid: FieldGrid, count: int) -> np.ndarray:
    return np.broadcast_to(np.arange(count), (grid.height, grid.width, count))


def refine_mid_offsets(mid_offsets: FieldGrid, short_offsets: FieldGrid,
                       graph: KinematicGraph,
                       config: RefinementConfig = RefinementConfig()) -> FieldGrid:
    """Pull every mid-range endpoint onto the short-range field of its target keypoint."""
    if config.mid_steps_short == 0:
        return mid_offsets
    num_edges = len(graph.edges)
    if mid_offsets.channels != 2 * num_edges:
        raise ValueError(f"mid offsets have {mid_offsets.channels} channels, graph needs {2 * num_edges}")
    target = np.array([b for _, b in graph.edges], dtype=np.intp)
    index = np.broadcast_to(target, (mid_offsets.height, mid_offsets.width, num_edges))
    short = short_offsets.data.astype(np.float64)
    offsets = mid_offsets.data.astype(np.float64)
    for _ in range(config.mid_steps_short):
        offsets = _step(mid_offsets, offsets, short, index)
    return mid_offsets.replace(offsets)


def refine_long_offsets(long_offsets: FieldGrid, short_offsets: FieldGrid,
                        config: RefinementConfig = RefinementConfig()) -> FieldGrid:
    """Self-refine long-range offsets, then pull them onto the short-range field."""
    if config.long_steps_self == 0 and config.long_steps_short == 0:
        return long_offsets
    index = _targets(long_offsets, long_offsets.channels // 2)
    offsets = long_offsets.data.astype(np.float64)
    for _ in range(config.long_steps_self):
        offsets = _step(long_offsets, offsets, offsets, index)
    short = short_offsets.data.astype(np.float64)
    for _ in range(config.long_steps_short):
        offsets = _step(long_offsets, offsets, short, index)
    return long_offsets.replace(offsets)


def endpoint_error(offsets: np.ndarray, grid: FieldGrid, targets: np.ndarray,
                   valid: np.ndarray) -> np.ndarray:
    """Distances between ``x + offset(x)`` and ``targets`` at cells where ``valid``.

    ``offsets`` is H x W x 2C, ``targets`` H x W x C x 2, ``valid`` H x W x C.
    """
    xs, ys = grid.cell_centers()
    ex = xs[:, :, None] + offsets[:, :, 0::2] - targets[..., 0]
    ey = ys[:, :, None] + offsets[:, :, 1::2] - targets[..., 1]
    return np.hypot(ex, ey)[valid]

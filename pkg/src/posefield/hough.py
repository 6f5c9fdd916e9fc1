"""Hough voting of heatmaps and short-range offsets, and seed extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .field import FieldGrid, Point2D, bilinear_weights


@dataclass(frozen=True, eq=False)
class HoughMaps:
    grids: FieldGrid
    disk_radius: float

    @property
    def num_keypoints(self) -> int:
        return self.grids.channels


@dataclass(frozen=True)
class SeedCandidate:
    position: Point2D
    keypoint_type: int
    score: float
    row: int
    col: int


def vote_weight(stride: int, disk_radius: float) -> float:
    """Weight of one unit of heatmap probability cast from one cell.

    A cell stands for ``stride**2`` image pixels, so a full disk of
    probability 1 casts a total mass of about one.
    """
    return stride * stride / (math.pi * disk_radius * disk_radius)


def accumulate_hough(heatmaps: FieldGrid, short_offsets: FieldGrid,
                     disk_radius: float = 32.0) -> HoughMaps:
    """Splat every cell's heatmap probability at ``x + S_k(x)``.

    Each vote is distributed over the four cells around its target with
    bilinear weights, the adjoint of :func:`posefield.field.sample`; votes
    outside the grid land on the border cells.
    """
    if disk_radius <= 0:
        raise ValueError("disk_radius must be positive")
    h, w, k = heatmaps.shape
    if short_offsets.shape != (h, w, 2 * k) or short_offsets.stride != heatmaps.stride:
        raise ValueError(f"short offsets {short_offsets.shape} do not match heatmaps {heatmaps.shape}")

    xs, ys = heatmaps.cell_centers()
    off = short_offsets.data.astype(np.float64)
    tx = xs[:, :, None] + off[:, :, 0::2]
    ty = ys[:, :, None] + off[:, :, 1::2]
    r0, r1, c0, c1, wy, wx = bilinear_weights(heatmaps, tx, ty)
    votes = heatmaps.data.astype(np.float64) * vote_weight(heatmaps.stride, disk_radius)

    chan = np.broadcast_to(np.arange(k), votes.shape)
    acc = np.zeros(h * w * k, dtype=np.float64)
    for rr, cc, wgt in ((r0, c0, (1 - wy) * (1 - wx)), (r0, c1, (1 - wy) * wx),
                        (r1, c0, wy * (1 - wx)), (r1, c1, wy * wx)):
        flat = (rr * w + cc) * k + chan
        acc += np.bincount(flat.ravel(), weights=(votes * wgt).ravel(), minlength=h * w * k)
    return HoughMaps(FieldGrid(acc.reshape(h, w, k), heatmaps.stride), float(disk_radius))


def _plateau_representatives(is_max: np.ndarray, window_radius: int):
    """First cell in scan order of each group of equal, window-adjacent maxima."""
    cells = list(zip(*np.nonzero(is_max)))
    if window_radius == 1:
        labels, _ = ndimage.label(is_max, structure=np.ones((3, 3), bool))
        firsts = {}
        for r, c in cells:
            firsts.setdefault(labels[r, c], (r, c))
        return list(firsts.values())
    # Maxima within one window of each other are mutually >=, hence equal.
    parent = {cell: cell for cell in cells}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, a in enumerate(cells):
        for b in cells[i + 1:]:
            if b[0] - a[0] > window_radius:
                break
            if abs(b[1] - a[1]) <= window_radius:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    return sorted({find(c) for c in cells})


def extract_seeds(hough: HoughMaps, score_threshold: float = 0.01,
                  window_radius: int = 1) -> list[SeedCandidate]:
    """Local maxima of the Hough maps scoring above ``score_threshold``.

    A cell is a maximum when it is >= every cell in its
    ``(2*window_radius + 1)**2`` window. Flat plateaus yield a single seed at
    their first cell in row-major order. Output is sorted by descending score,
    ties by (row, column, channel).
    """
    if score_threshold < 0:
        raise ValueError("score_threshold must be non-negative")
    grid = hough.grids
    size = 2 * window_radius + 1
    s = grid.stride
    seeds = []
    for k in range(grid.channels):
        values = grid.data[:, :, k]
        peak = ndimage.maximum_filter(values, size=size, mode="nearest")
        is_max = (values >= peak) & (values > score_threshold)
        if not is_max.any():
            continue
        for r, c in _plateau_representatives(is_max, window_radius):
            seeds.append(SeedCandidate(Point2D((c + 0.5) * s, (r + 0.5) * s), k,
                                       float(values[r, c]), int(r), int(c)))
    seeds.sort(key=lambda sd: (-sd.score, sd.row, sd.col, sd.keypoint_type))
    return seeds

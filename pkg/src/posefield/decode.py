"""Greedy grouping of Hough seeds into person instances."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .field import FieldGrid, bilinear_weights, sample_indexed
from .graph import KinematicGraph
from .hough import HoughMaps, SeedCandidate


@dataclass(eq=False)
class PoseInstance:
    keypoints: np.ndarray                  # K x 2, image pixels
    keypoint_scores: np.ndarray            # K
    instance_score: float = 0.0
    seed_type: int = -1
    decode_order: int = -1
    keypoint_present: np.ndarray = field(default=None)

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        k = len(self.keypoints)
        if self.keypoint_scores is None:
            self.keypoint_scores = np.zeros(k)
        self.keypoint_scores = np.asarray(self.keypoint_scores, dtype=np.float64)
        if self.keypoint_present is None:
            self.keypoint_present = np.ones(k, dtype=bool)

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoints)


def _sample_pair(grid: FieldGrid, flat: np.ndarray, index: int, x: float, y: float) -> tuple[float, float]:
    # Scalar twin of field.sample for the decoder's hot loop; ``flat`` is grid.data.ravel().
    s = grid.stride
    h, w, n_ch = grid.data.shape
    u = min(max(x / s - 0.5, 0.0), w - 1)
    v = min(max(y / s - 0.5, 0.0), h - 1)
    c0 = int(u)
    r0 = int(v)
    dc = n_ch if c0 + 1 < w else 0
    dr = w * n_ch if r0 + 1 < h else 0
    wx = u - c0
    wy = v - r0
    base = (r0 * w + c0) * n_ch + 2 * index
    item = flat.item
    out = []
    for p in (base, base + 1):
        top = item(p) * (1 - wx) + item(p + dc) * wx
        bottom = item(p + dr) * (1 - wx) + item(p + dr + dc) * wx
        out.append(top * (1 - wy) + bottom * wy)
    return out[0], out[1]


def _snap(hough: HoughMaps, k: int, x: float, y: float, radius: float) -> tuple[float, float]:
    grid = hough.grids
    s = grid.stride
    r0, r1, c0, c1, _, _ = bilinear_weights(grid, x, y)
    span = int(math.ceil(radius / s))
    rows = slice(max(int(r0) - span, 0), min(int(r1) + span + 1, grid.height))
    cols = slice(max(int(c0) - span, 0), min(int(c1) + span + 1, grid.width))
    patch = grid.data[rows, cols, k]
    cy, cx = np.meshgrid((np.arange(rows.start, rows.stop) + 0.5) * s,
                         (np.arange(cols.start, cols.stop) + 0.5) * s, indexing="ij")
    near = np.hypot(cx - x, cy - y) <= radius
    if not near.any():
        return x, y
    masked = np.where(near, patch, -np.inf)
    best = np.unravel_index(np.argmax(masked), masked.shape)
    if masked[best] <= 0:
        return x, y
    return float(cx[best]), float(cy[best])


def _is_claimed(buckets, x, y, radius, r2) -> bool:
    bx = math.floor(x / radius)
    by = math.floor(y / radius)
    for i in (bx - 1, bx, bx + 1):
        for j in (by - 1, by, by + 1):
            for px, py in buckets.get((i, j), ()):
                if (x - px) ** 2 + (y - py) ** 2 <= r2:
                    return True
    return False


def greedy_decode(seeds: list[SeedCandidate], hough: HoughMaps, mid_offsets: FieldGrid,
                  graph: KinematicGraph, nms_radius: float = 10.0,
                  short_offsets: FieldGrid | None = None,
                  snap_radius: float | None = None) -> list[PoseInstance]:
    """Group seeds into instances by walking ``graph`` along refined mid-range offsets.

    Seeds are popped from one priority queue shared by all keypoint types. A
    seed of type k is rejected when an earlier instance has its type-k
    keypoint within ``nms_radius``. When ``short_offsets`` is given the seed
    position is first moved by its short-range offset, which recovers
    sub-cell accuracy lost by voting at activation resolution. ``snap_radius``
    moves each propagated keypoint onto the strongest Hough cell nearby.
    """
    if nms_radius <= 0:
        raise ValueError("nms_radius must be positive")
    k_total = graph.num_keypoints
    queue = [(-sd.score, n, sd) for n, sd in enumerate(seeds)]
    heapq.heapify(queue)
    r2 = nms_radius * nms_radius
    # Per-type spatial hash of claimed keypoints, bucket side = nms_radius.
    claimed: list[dict[tuple[int, int], list]] = [{} for _ in range(k_total)]
    instances: list[PoseInstance] = []

    # Seed positions, moved by their short-range offsets in one vectorised pass.
    starts = np.array([sd.position for sd in seeds], dtype=np.float64).reshape(-1, 2)
    if short_offsets is not None and len(seeds):
        types = np.array([sd.keypoint_type for sd in seeds])
        starts = starts + sample_indexed(short_offsets, starts[:, 0], starts[:, 1], types)
    starts = starts.tolist()
    mid_flat = mid_offsets.data.ravel()
    walks = [[(src, dst, graph.channel(src, dst)) for src, dst in graph.traversal(root)]
             for root in range(k_total)]

    while queue:
        _, n, seed = heapq.heappop(queue)
        k = seed.keypoint_type
        x, y = starts[n]
        if _is_claimed(claimed[k], x, y, nms_radius, r2):
            continue

        pts = [None] * k_total
        pts[k] = (x, y)
        for src, dst, chan in walks[k]:
            sx, sy = pts[src]
            dx, dy = _sample_pair(mid_offsets, mid_flat, chan, sx, sy)
            tx, ty = sx + dx, sy + dy
            if snap_radius:
                tx, ty = _snap(hough, dst, tx, ty, snap_radius)
            pts[dst] = (tx, ty)
        for kk, (px, py) in enumerate(pts):
            key = (math.floor(px / nms_radius), math.floor(py / nms_radius))
            claimed[kk].setdefault(key, []).append((px, py))
        instances.append(PoseInstance(np.array(pts), np.zeros(k_total), 0.0, seed_type=k,
                                      decode_order=len(instances)))
    return instances

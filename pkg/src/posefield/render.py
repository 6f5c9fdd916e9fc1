"""PNG output: per-instance mask bitmaps and a skeleton overlay."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, ImageDraw

from .container import ModelOutputs
from .graph import KinematicGraph

_PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
    (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
], dtype=np.float64)


def color(j: int) -> tuple[int, int, int]:
    return tuple(int(v) for v in _PALETTE[j % len(_PALETTE)])


def save_mask_png(mask: np.ndarray, path: str | os.PathLike) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path, optimize=False)


def overlay(outputs: ModelOutputs, keypoints: list[np.ndarray], masks: list[np.ndarray],
            graph: KinematicGraph, scores: list[np.ndarray] | None = None,
            min_score: float = 0.0) -> Image.Image:
    """Gray person probability, tinted instance masks and skeletons on one canvas."""
    h, w = outputs.image_height, outputs.image_width
    s = outputs.stride
    seg = outputs.seg_prob.data[:, :, 0]
    rows = np.minimum(np.arange(h) // s, seg.shape[0] - 1)
    cols = np.minimum(np.arange(w) // s, seg.shape[1] - 1)
    gray = np.clip(seg[rows[:, None], cols[None, :]], 0, 1) * 96.0
    canvas = np.repeat(gray[:, :, None], 3, axis=2)
    for j, m in enumerate(masks):
        canvas[m] = 0.45 * canvas[m] + 0.55 * _PALETTE[j % len(_PALETTE)]
    img = Image.fromarray(canvas.astype(np.uint8))
    draw = ImageDraw.Draw(img)
    for j, pts in enumerate(keypoints):
        c = color(j)
        ok = np.ones(len(pts), bool) if scores is None else scores[j] >= min_score
        for a, b in graph.undirected_edges():
            if ok[a] and ok[b]:
                draw.line([tuple(pts[a]), tuple(pts[b])], fill=c, width=2)
        for k, (x, y) in enumerate(pts):
            if ok[k]:
                draw.ellipse([x - 3, y - 3, x + 3, y + 3], outline=(255, 255, 255), fill=c)
    return img

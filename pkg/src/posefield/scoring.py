"""Keypoint and instance scoring, hard OKS-NMS and keypoint soft-NMS."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .decode import PoseInstance
from .field import FieldGrid, sample
from .hough import HoughMaps

SCORING_METHODS = ("hough", "expected_oks")
NMS_METHODS = ("hard", "soft")


@dataclass(frozen=True, eq=False)
class OksParams:
    kappas: np.ndarray

    def __post_init__(self):
        kappas = np.asarray(self.kappas, dtype=np.float64)
        if kappas.ndim != 1 or np.any(kappas <= 0):
            raise ValueError("kappas must be a vector of positive reals")
        object.__setattr__(self, "kappas", kappas)


def load_kappas(path: str | os.PathLike | None = None) -> OksParams:
    """Read ``name value`` lines; the bundled COCO constants when ``path`` is None."""
    if path is None:
        text = resources.files("posefield").joinpath("data/coco_kappas.txt").read_text()
    else:
        with open(path) as f:
            text = f.read()
    values = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"kappa file line {lineno}: expected 'name value'")
        values.append(float(parts[1]))
    return OksParams(np.array(values))


@dataclass(frozen=True)
class ScoringConfig:
    method: str = "expected_oks"
    nms: str = "soft"
    hard_nms_oks_threshold: float = 0.5
    soft_nms_radius: float = 10.0

    def __post_init__(self):
        if self.method not in SCORING_METHODS:
            raise ValueError(f"unknown scoring method {self.method!r}")
        if self.nms not in NMS_METHODS:
            raise ValueError(f"unknown nms method {self.nms!r}")
        if not 0.0 <= self.hard_nms_oks_threshold <= 1.0:
            raise ValueError("hard_nms_oks_threshold must be in [0, 1]")
        if self.soft_nms_radius <= 0:
            raise ValueError("soft_nms_radius must be positive")


def instance_scale(instance: PoseInstance, floor: float = 1.0) -> float:
    """Square root of the area of the tight box around the keypoints, at least ``floor``."""
    pts = instance.keypoints
    w, h = pts.max(axis=0) - pts.min(axis=0)
    return max(math.sqrt(w * h), floor)


def score_keypoints_hough(instance: PoseInstance, hough: HoughMaps) -> np.ndarray:
    pts = instance.keypoints
    k = len(pts)
    vals = sample(hough.grids, pts[:, 0], pts[:, 1])
    return vals[np.arange(k), np.arange(k)]


def _disk_cells(grid: FieldGrid, x: float, y: float, radius: float):
    s = grid.stride
    c_lo = max(int(math.floor((x - radius) / s - 0.5)), 0)
    c_hi = min(int(math.ceil((x + radius) / s - 0.5)), grid.width - 1)
    r_lo = max(int(math.floor((y - radius) / s - 0.5)), 0)
    r_hi = min(int(math.ceil((y + radius) / s - 0.5)), grid.height - 1)
    if c_lo > c_hi or r_lo > r_hi:
        return None
    cx = (np.arange(c_lo, c_hi + 1) + 0.5) * s
    cy = (np.arange(r_lo, r_hi + 1) + 0.5) * s
    d2 = (cx[None, :] - x) ** 2 + (cy[:, None] - y) ** 2
    return slice(r_lo, r_hi + 1), slice(c_lo, c_hi + 1), d2, d2 <= radius * radius


def score_keypoints_expected_oks(instance: PoseInstance, hough: HoughMaps, heatmaps: FieldGrid,
                                 oks: OksParams, disk_radius: float | None = None,
                                 scale_floor: float = 1.0) -> np.ndarray:
    """Presence probability times the expected OKS of each keypoint.

    The expectation runs over the Hough cells whose centers lie in the
    ``disk_radius`` disk around the keypoint, with the Hough mass renormalised
    to one inside the disk. An empty disk scores zero.
    """
    radius = hough.disk_radius if disk_radius is None else disk_radius
    lam = instance_scale(instance, scale_floor)
    pts = instance.keypoints
    k_total = len(pts)
    presence = sample(heatmaps, pts[:, 0], pts[:, 1])[np.arange(k_total), np.arange(k_total)]
    presence = np.clip(presence, 0.0, 1.0)
    scores = np.zeros(k_total)
    grid = hough.grids
    for k in range(k_total):
        if presence[k] == 0:
            continue
        cells = _disk_cells(grid, pts[k, 0], pts[k, 1], radius)
        if cells is None:
            continue
        rows, cols, d2, inside = cells
        mass = np.where(inside, grid.data[rows, cols, k], 0.0)
        total = mass.sum()
        if total <= 0:
            continue
        kernel = np.exp(-d2 / (2.0 * lam * lam * oks.kappas[k] ** 2))
        expected = float((mass * kernel).sum() / total)
        scores[k] = presence[k] * min(expected, 1.0)
    return scores


def score_instances(instances: list[PoseInstance], hough: HoughMaps, heatmaps: FieldGrid,
                    oks: OksParams, method: str = "expected_oks") -> list[PoseInstance]:
    """Attach keypoint scores and the mean-keypoint instance score, in place."""
    for inst in instances:
        if method == "hough":
            scores = score_keypoints_hough(inst, hough)
        elif method == "expected_oks":
            scores = score_keypoints_expected_oks(inst, hough, heatmaps, oks)
        else:
            raise ValueError(f"unknown scoring method {method!r}")
        inst.keypoint_scores = np.clip(scores, 0.0, 1.0)
        inst.instance_score = float(inst.keypoint_scores.mean())
    return instances


def instance_oks(candidate: PoseInstance, reference: PoseInstance, oks: OksParams,
                 scale_floor: float = 1.0) -> float:
    """OKS of ``candidate`` against ``reference`` using the reference's scale."""
    lam = instance_scale(reference, scale_floor)
    d2 = ((candidate.keypoints - reference.keypoints) ** 2).sum(axis=1)
    return float(np.exp(-d2 / (2.0 * lam * lam * oks.kappas ** 2)).mean())


def _by_score(instances):
    return sorted(instances, key=lambda inst: -inst.instance_score)


def hard_nms(instances: list[PoseInstance], oks: OksParams,
             threshold: float = 0.5) -> list[PoseInstance]:
    """Keep instances whose OKS against every higher-scored kept one is below ``threshold``."""
    kept: list[PoseInstance] = []
    for inst in _by_score(instances):
        if all(instance_oks(inst, ref, oks) < threshold for ref in kept):
            kept.append(inst)
    return kept


def soft_nms_rescore(instances: list[PoseInstance], radius: float = 10.0) -> list[PoseInstance]:
    """Rescore each instance by its keypoints not claimed by a higher-ranked one.

    A type-k keypoint is claimed when any earlier instance has its type-k
    keypoint within ``radius``. Instances are ranked by their incoming score,
    rescored in place, and returned re-sorted by the new score.
    """
    ranked = _by_score(instances)
    if not ranked:
        return []
    pts = np.stack([inst.keypoints for inst in ranked])          # J x K x 2
    for j, inst in enumerate(ranked):
        if j == 0:
            free = np.ones(inst.num_keypoints, dtype=bool)
        else:
            dist = np.hypot(*(pts[:j] - pts[j]).transpose(2, 0, 1))   # j x K
            free = np.all(dist > radius, axis=0)
        inst.instance_score = float(np.sum(inst.keypoint_scores * free) / inst.num_keypoints)
    return _by_score(ranked)


def apply_nms(instances: list[PoseInstance], oks: OksParams,
              config: ScoringConfig = ScoringConfig()) -> list[PoseInstance]:
    if config.nms == "hard":
        return hard_nms(instances, oks, config.hard_nms_oks_threshold)
    return soft_nms_rescore(instances, config.soft_nms_radius)

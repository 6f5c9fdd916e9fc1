"""Pixel-to-instance association through the geometric embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decode import PoseInstance
from .field import FieldGrid, sample
from .scoring import instance_scale


@dataclass(eq=False)
class InstanceMasks:
    """Cell-level, non-exclusive assignment of person cells to instances.

    ``members[j]`` is the boolean grid of cells assigned to instance j; a cell
    may belong to several instances or to none.
    """

    person_mask: np.ndarray
    members: np.ndarray                    # M x H x W bool
    stride: int
    distance_evaluations: int = 0

    @property
    def num_instances(self) -> int:
        return len(self.members)

    def assignments(self) -> dict[tuple[int, int], list[int]]:
        out = {}
        for r, c in zip(*np.nonzero(self.person_mask)):
            out[(int(r), int(c))] = [int(j) for j in np.nonzero(self.members[:, r, c])[0]]
        return out

    def orphans(self) -> np.ndarray:
        return self.person_mask & ~self.members.any(axis=0)


@dataclass(eq=False)
class EmbeddingField:
    """Absolute keypoint predictions ``x + L_k(x)`` per cell, H x W x 2K."""

    grid: FieldGrid


def person_mask(seg_prob: FieldGrid, threshold: float = 0.5) -> np.ndarray:
    return seg_prob.data[:, :, 0] >= threshold


def embedding_field(long_offsets: FieldGrid) -> EmbeddingField:
    xs, ys = long_offsets.cell_centers()
    data = long_offsets.data.astype(np.float64).copy()
    data[:, :, 0::2] += xs[:, :, None]
    data[:, :, 1::2] += ys[:, :, None]
    return EmbeddingField(long_offsets.replace(data))


def presence_weights(instance: PoseInstance, heatmaps: FieldGrid) -> np.ndarray:
    pts = instance.keypoints
    k = len(pts)
    return np.clip(sample(heatmaps, pts[:, 0], pts[:, 1])[np.arange(k), np.arange(k)], 0.0, 1.0)


def _distances(embeddings: np.ndarray, keypoints: np.ndarray, weights: np.ndarray,
               scale: float) -> np.ndarray:
    """Embedding distance for an N x K x 2 batch of embeddings against one instance."""
    total = weights.sum()
    if total <= 0:
        return np.full(embeddings.shape[0], np.inf)
    err = np.sqrt(((embeddings - keypoints) ** 2).sum(axis=-1))
    return (err * weights).sum(axis=-1) / (total * scale)


def embedding_distance(embedding, instance: PoseInstance, heatmaps: FieldGrid,
                       weights: np.ndarray | None = None) -> float:
    """Presence-weighted, scale-normalised distance between one embedding and one instance.

    ``embedding`` holds the K predicted keypoint positions of a pixel (K x 2
    or flat 2K). Returns ``inf`` when every presence weight is zero.
    """
    emb = np.asarray(embedding, dtype=np.float64).reshape(1, -1, 2)
    if weights is None:
        weights = presence_weights(instance, heatmaps)
    return float(_distances(emb, instance.keypoints, np.asarray(weights, float),
                            instance_scale(instance))[0])


def distance_matrix(mask: np.ndarray, embedding: EmbeddingField, instances: list[PoseInstance],
                    heatmaps: FieldGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distances of every person cell to every instance.

    Returns ``(rows, cols, D)`` where ``D[i, j]`` is the distance of cell
    ``(rows[i], cols[i])`` to instance ``j``.
    """
    grid = embedding.grid
    rows, cols = np.nonzero(mask)
    emb = grid.data[rows, cols].reshape(len(rows), grid.channels // 2, 2)
    dist = np.empty((len(rows), len(instances)))
    for j, inst in enumerate(instances):
        dist[:, j] = _distances(emb, inst.keypoints, presence_weights(inst, heatmaps),
                                instance_scale(inst))
    return rows, cols, dist


def assign_pixels(mask: np.ndarray, embedding: EmbeddingField, instances: list[PoseInstance],
                  heatmaps: FieldGrid, threshold: float = 0.25) -> InstanceMasks:
    """Associate every person cell with each instance whose distance is <= ``threshold``."""
    rows, cols, dist = distance_matrix(mask, embedding, instances, heatmaps)
    members = np.zeros((len(instances),) + mask.shape, dtype=bool)
    for j in range(len(instances)):
        members[j, rows, cols] = dist[:, j] <= threshold
    return InstanceMasks(mask.copy(), members, embedding.grid.stride, dist.size)


def masks_to_image(masks: InstanceMasks, image_height: int, image_width: int) -> np.ndarray:
    """Nearest-neighbour upsampling of each instance's cells, M x image_height x image_width."""
    s = masks.stride
    rows = np.minimum(np.arange(image_height) // s, masks.person_mask.shape[0] - 1)
    cols = np.minimum(np.arange(image_width) // s, masks.person_mask.shape[1] - 1)
    return masks.members[:, rows[:, None], cols[None, :]]


def label_map(masks: InstanceMasks, embedding: EmbeddingField, instances: list[PoseInstance],
              heatmaps: FieldGrid) -> np.ndarray:
    """Exclusive labels for display: the nearest assigned instance, -1 elsewhere.

    Ties go to the earlier (higher-scored) instance.
    """
    labels = np.full(masks.person_mask.shape, -1, dtype=np.int64)
    best = np.full(masks.person_mask.shape, np.inf)
    rows, cols = np.nonzero(masks.person_mask)
    emb = embedding.grid.data[rows, cols].reshape(len(rows), embedding.grid.channels // 2, 2)
    for j, inst in enumerate(instances):
        d = _distances(emb, inst.keypoints, presence_weights(inst, heatmaps), instance_scale(inst))
        hit = masks.members[j, rows, cols] & (d < best[rows, cols])
        best[rows[hit], cols[hit]] = d[hit]
        labels[rows[hit], cols[hit]] = j
    return labels

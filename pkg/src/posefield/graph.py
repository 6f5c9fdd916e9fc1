"""Kinematic tree over keypoint types.

Directed edge ``d`` owns mid-range offset channels ``(2d, 2d + 1)``. The
forward edges come first in file order, followed by their reverses in the
same order.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass

COCO_KEYPOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

_COCO_TREE = (
    ("nose", "left_eye"), ("nose", "right_eye"),
    ("left_eye", "left_ear"), ("right_eye", "right_ear"),
    ("nose", "left_shoulder"), ("nose", "right_shoulder"),
    ("left_shoulder", "left_elbow"), ("left_elbow", "left_wrist"),
    ("right_shoulder", "right_elbow"), ("right_elbow", "right_wrist"),
    ("left_shoulder", "left_hip"), ("right_shoulder", "right_hip"),
    ("left_hip", "left_knee"), ("left_knee", "left_ankle"),
    ("right_hip", "right_knee"), ("right_knee", "right_ankle"),
)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class KinematicGraph:
    num_keypoints: int
    edges: tuple[tuple[int, int], ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        k = self.num_keypoints
        if len(self.edges) != 2 * (k - 1):
            raise GraphError(f"a tree over {k} nodes has {2 * (k - 1)} directed edges, "
                             f"got {len(self.edges)}")
        index = {}
        for d, (a, b) in enumerate(self.edges):
            if not (0 <= a < k and 0 <= b < k) or a == b:
                raise GraphError(f"invalid edge {(a, b)}")
            if (a, b) in index:
                raise GraphError(f"duplicate edge {(a, b)}")
            index[(a, b)] = d
        for a, b in self.edges:
            if (b, a) not in index:
                raise GraphError(f"edge {(a, b)} has no reverse")
        object.__setattr__(self, "_index", index)
        if len(self.traversal(0)) != k - 1:
            raise GraphError("graph is not connected")

    def channel(self, source: int, target: int) -> int:
        """Directed-edge index for ``source -> target``."""
        return self._index[(source, target)]

    def neighbors(self, node: int) -> list[int]:
        return [b for a, b in self.edges if a == node]

    def undirected_edges(self) -> list[tuple[int, int]]:
        return [(a, b) for a, b in self.edges if a < b]

    def traversal(self, root: int) -> list[tuple[int, int]]:
        """Breadth-first list of directed edges reaching every node from ``root``."""
        cache = self.__dict__.setdefault("_traversals", {})
        if root not in cache:
            seen = {root}
            edges = []
            queue = deque([root])
            while queue:
                node = queue.popleft()
                for nxt in self.neighbors(node):
                    if nxt not in seen:
                        seen.add(nxt)
                        edges.append((node, nxt))
                        queue.append(nxt)
            cache[root] = edges
        return cache[root]


def from_undirected(pairs, num_keypoints: int, names=()) -> KinematicGraph:
    pairs = [tuple(p) for p in pairs]
    edges = tuple(pairs) + tuple((b, a) for a, b in pairs)
    return KinematicGraph(num_keypoints, edges, tuple(names))


def default_coco_graph() -> KinematicGraph:
    index = {name: i for i, name in enumerate(COCO_KEYPOINTS)}
    pairs = [(index[a], index[b]) for a, b in _COCO_TREE]
    return from_undirected(pairs, len(COCO_KEYPOINTS), COCO_KEYPOINTS)


def load_graph(path: str | os.PathLike, names=COCO_KEYPOINTS) -> KinematicGraph:
    """Read a graph file: one undirected edge per line, ``a b``.

    Endpoints are keypoint names from ``names`` or integer indices. Blank
    lines and ``#`` comments are skipped.
    """
    index = {name: i for i, name in enumerate(names)}
    pairs = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 2:
                raise GraphError(f"{path}:{lineno}: expected two endpoints")
            ends = []
            for tok in tokens:
                if tok.isdigit():
                    ends.append(int(tok))
                elif tok in index:
                    ends.append(index[tok])
                else:
                    raise GraphError(f"{path}:{lineno}: unknown keypoint {tok!r}")
            pairs.append(tuple(ends))
    return from_undirected(pairs, len(pairs) + 1, names if len(names) == len(pairs) + 1 else ())

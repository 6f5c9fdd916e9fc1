"""Ideal model outputs rendered from a ground-truth scene.

Every field follows its supervised target exactly: heatmap disks of radius R
around visible keypoints, short-range offsets to the closest instance's
keypoint, mid-range offsets from source disks to the adjacent keypoint of the
same instance, long-range offsets inside exactly one person mask, and a
binary person segmentation. Cells are tested at their centers.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import shapely

from .container import ModelOutputs
from .field import FieldGrid
from .graph import COCO_KEYPOINTS, KinematicGraph, default_coco_graph
from .metrics import rle_encode

NOISE_FIELDS = ("heatmaps", "short_offsets", "mid_offsets", "long_offsets", "seg_prob")
_NOISE_ALIASES = {"short": "short_offsets", "mid": "mid_offsets", "long": "long_offsets",
                  "seg": "seg_prob"}


class SceneError(ValueError):
    """Scene file violates the schema; the message starts with the offending path."""


@dataclass(eq=False)
class Person:
    keypoints: np.ndarray          # K x 2
    visible: np.ndarray            # K bool
    mask_polygon: np.ndarray       # P x 2

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(-1)
        self.mask_polygon = np.asarray(self.mask_polygon, dtype=np.float64).reshape(-1, 2)


@dataclass(eq=False)
class SceneSpec:
    width: int
    height: int
    persons: list[Person] = field(default_factory=list)
    noise_sigma: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    num_keypoints: int = len(COCO_KEYPOINTS)

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise SceneError("width/height: image size must be positive")
        for j, person in enumerate(self.persons):
            where = f"persons[{j}]"
            if person.keypoints.shape != (self.num_keypoints, 2):
                raise SceneError(f"{where}.keypoints: expected {self.num_keypoints} keypoints, "
                                 f"got {len(person.keypoints)}")
            if not np.all(np.isfinite(person.keypoints)):
                raise SceneError(f"{where}.keypoints: non-finite coordinate")
            vis = person.keypoints[person.visible]
            outside = (vis[:, 0] < 0) | (vis[:, 0] > self.width) | (vis[:, 1] < 0) | (vis[:, 1] > self.height)
            if outside.any():
                k = int(np.nonzero(person.visible)[0][np.argmax(outside)])
                raise SceneError(f"{where}.keypoints[{k}]: visible keypoint outside the image")
            poly = person.mask_polygon
            if len(poly) < 3:
                raise SceneError(f"{where}.mask_polygon: needs at least 3 vertices")
            if not shapely.LinearRing(poly).is_simple:
                raise SceneError(f"{where}.mask_polygon: polygon self-intersects")
        for name, sigma in self.noise_sigma.items():
            if name not in NOISE_FIELDS:
                raise SceneError(f"noise_sigma.{name}: unknown field, expected one of {NOISE_FIELDS}")
            if sigma < 0:
                raise SceneError(f"noise_sigma.{name}: sigma must be non-negative")


def polygon_mask(polygon: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test for arrays of points."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    px = polygon[:, 0]
    py = polygon[:, 1]
    # points outside the bounding box cross an even number of edges
    box = (xs >= px.min()) & (xs <= px.max()) & (ys >= py.min()) & (ys <= py.max())
    result = np.zeros(xs.shape, dtype=bool)
    xs = xs[box]
    ys = ys[box]
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(polygon)
    for i in range(n):
        x0, y0 = px[i], py[i]
        x1, y1 = px[(i + 1) % n], py[(i + 1) % n]
        if y0 == y1:
            continue
        straddles = (y0 > ys) != (y1 > ys)
        x_cross = x0 + (ys - y0) * (x1 - x0) / (y1 - y0)
        inside ^= straddles & (xs < x_cross)
    result[box] = inside
    return result


def grid_shape(scene: SceneSpec, stride: int) -> tuple[int, int]:
    return math.ceil(scene.height / stride), math.ceil(scene.width / stride)


def render_outputs(scene: SceneSpec, stride: int = 8, disk_radius: float = 32.0,
                   graph: KinematicGraph | None = None) -> ModelOutputs:
    scene.validate()
    graph = graph or default_coco_graph()
    k_total = scene.num_keypoints
    if graph.num_keypoints != k_total:
        raise SceneError(f"graph has {graph.num_keypoints} keypoints, scene has {k_total}")
    gh, gw = grid_shape(scene, stride)
    xs, ys = FieldGrid(np.zeros((gh, gw, 1)), stride).cell_centers()
    persons = scene.persons
    r2 = disk_radius * disk_radius

    heat = np.zeros((gh, gw, k_total))
    short = np.zeros((gh, gw, 2 * k_total))
    mid = np.zeros((gh, gw, 2 * len(graph.edges)))
    long_ = np.zeros((gh, gw, 2 * k_total))

    def window(x0, y0, x1, y1):
        # Cell index ranges whose centers may fall inside [x0, x1] x [y0, y1].
        return (slice(max(int(math.floor(y0 / stride - 0.5)), 0), max(int(math.ceil(y1 / stride)), 0)),
                slice(max(int(math.floor(x0 / stride - 0.5)), 0), max(int(math.ceil(x1 / stride)), 0)))

    def nearest(k, candidates):
        # Index into `persons` of the closest candidate disk per cell, -1 outside every disk.
        best = np.full((gh, gw), -1)
        best_d2 = np.full((gh, gw), np.inf)
        for j in candidates:
            y = persons[j].keypoints[k]
            win = window(y[0] - disk_radius, y[1] - disk_radius, y[0] + disk_radius, y[1] + disk_radius)
            d2 = (xs[win] - y[0]) ** 2 + (ys[win] - y[1]) ** 2
            closer = (d2 <= r2) & (d2 < best_d2[win])
            best[win][closer] = j
            best_d2[win][closer] = d2[closer]
        return best

    def point_at(owner, k, into, chan):
        sel = owner >= 0
        target = keypoints[owner[sel], k]
        into[:, :, 2 * chan][sel] = target[:, 0] - xs[sel]
        into[:, :, 2 * chan + 1][sel] = target[:, 1] - ys[sel]

    keypoints = np.array([p.keypoints for p in persons]).reshape(len(persons), k_total, 2)
    for k in range(k_total):
        owner = nearest(k, [j for j, p in enumerate(persons) if p.visible[k]])
        heat[:, :, k] = owner >= 0
        point_at(owner, k, short, k)

    for d, (src, dst) in enumerate(graph.edges):
        both = [j for j, p in enumerate(persons) if p.visible[src] and p.visible[dst]]
        owner = nearest(src, both)
        point_at(owner, dst, mid, d)

    coverage = np.zeros((gh, gw), dtype=np.int64)
    inside = []
    for p in persons:
        lo = p.mask_polygon.min(axis=0)
        hi = p.mask_polygon.max(axis=0)
        win = window(lo[0], lo[1], hi[0], hi[1])
        m = np.zeros((gh, gw), dtype=bool)
        m[win] = polygon_mask(p.mask_polygon, xs[win], ys[win])
        inside.append(m)
        coverage += m
    for j, p in enumerate(persons):
        owner = np.where(inside[j] & (coverage == 1), j, -1)
        for k in range(k_total):
            if p.visible[k]:
                point_at(owner, k, long_, k)
    seg = (coverage > 0).astype(np.float64)[:, :, None]

    fields = {"heatmaps": heat, "short_offsets": short, "mid_offsets": mid,
              "long_offsets": long_, "seg_prob": seg}
    if any(scene.noise_sigma.get(name, 0) > 0 for name in NOISE_FIELDS):
        rng = np.random.default_rng(scene.seed)
        for name in NOISE_FIELDS:
            sigma = scene.noise_sigma.get(name, 0.0)
            if sigma > 0:
                fields[name] = fields[name] + rng.normal(0.0, sigma, fields[name].shape)
        for name in ("heatmaps", "seg_prob"):
            fields[name] = np.clip(fields[name], 0.0, 1.0)

    grids = {name: FieldGrid(arr.astype(np.float32), stride) for name, arr in fields.items()}
    return ModelOutputs(image_height=scene.height, image_width=scene.width, **grids)


def person_masks(scene: SceneSpec) -> np.ndarray:
    """Full-resolution boolean masks, one per person (pixel centers tested)."""
    xs, ys = np.meshgrid(np.arange(scene.width) + 0.5, np.arange(scene.height) + 0.5)
    return np.array([polygon_mask(p.mask_polygon, xs, ys) for p in scene.persons],
                    dtype=bool).reshape(len(scene.persons), scene.height, scene.width)


# -- JSON ----------------------------------------------------------------------

def scene_to_dict(scene: SceneSpec) -> dict:
    out = {
        "width": int(scene.width),
        "height": int(scene.height),
        "persons": [
            {
                "keypoints": [[float(x), float(y), int(v)]
                              for (x, y), v in zip(p.keypoints, p.visible)],
                "mask_polygon": [[float(x), float(y)] for x, y in p.mask_polygon],
            }
            for p in scene.persons
        ],
        "noise_sigma": {name: float(scene.noise_sigma[name])
                        for name in NOISE_FIELDS if name in scene.noise_sigma},
        "seed": int(scene.seed),
    }
    if scene.num_keypoints != len(COCO_KEYPOINTS):
        out["num_keypoints"] = scene.num_keypoints
    return out


def _require(obj, key, where):
    if not isinstance(obj, dict):
        raise SceneError(f"{where or '<root>'}: expected an object")
    if key not in obj:
        raise SceneError(f"{where + '.' if where else ''}{key}: missing required key")
    return obj[key]


def scene_from_dict(obj) -> SceneSpec:
    width = _require(obj, "width", "")
    height = _require(obj, "height", "")
    raw_persons = _require(obj, "persons", "")
    if not isinstance(raw_persons, list):
        raise SceneError("persons: expected a list")
    persons = []
    num_keypoints = obj.get("num_keypoints")
    for j, raw in enumerate(raw_persons):
        where = f"persons[{j}]"
        kps = _require(raw, "keypoints", where)
        poly = _require(raw, "mask_polygon", where)
        try:
            kps = np.asarray(kps, dtype=np.float64)
            if kps.ndim != 2 or kps.shape[1] != 3:
                raise ValueError
        except (TypeError, ValueError):
            raise SceneError(f"{where}.keypoints: expected a list of [x, y, visible] triples") from None
        try:
            poly = np.asarray(poly, dtype=np.float64)
            if poly.ndim != 2 or poly.shape[1] != 2:
                raise ValueError
        except (TypeError, ValueError):
            raise SceneError(f"{where}.mask_polygon: expected a list of [x, y] pairs") from None
        if num_keypoints is None:
            num_keypoints = len(kps)
        persons.append(Person(kps[:, :2], kps[:, 2] > 0, poly))
    noise = obj.get("noise_sigma", {}) or {}
    if not isinstance(noise, dict):
        raise SceneError("noise_sigma: expected an object")
    scene = SceneSpec(int(width), int(height), persons,
                      {_NOISE_ALIASES.get(str(k), str(k)): float(v) for k, v in noise.items()},
                      int(obj.get("seed", 0)),
                      int(num_keypoints or len(COCO_KEYPOINTS)))
    scene.validate()
    return scene


def save_scene(scene: SceneSpec, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, indent=1)
        f.write("\n")


def load_scene(path: str | os.PathLike) -> SceneSpec:
    with open(path) as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as exc:
            raise SceneError(f"<root>: invalid JSON ({exc})") from None
    return scene_from_dict(obj)


# -- random scenes -------------------------------------------------------------

# Upright person template in units of body height, facing the camera.
_TEMPLATE = np.array([
    (0.00, 0.08), (0.03, 0.06), (-0.03, 0.06), (0.06, 0.07), (-0.06, 0.07),
    (0.14, 0.22), (-0.14, 0.22), (0.18, 0.38), (-0.18, 0.38), (0.20, 0.52), (-0.20, 0.52),
    (0.09, 0.55), (-0.09, 0.55), (0.10, 0.75), (-0.10, 0.75), (0.10, 0.95), (-0.10, 0.95),
])


def random_person(rng: np.random.Generator, box: tuple[float, float, float, float],
                  margin: float) -> Person:
    """A jittered upright skeleton whose buffered hull fits inside ``box`` (x0, y0, x1, y1)."""
    x0, y0, x1, y1 = box
    avail_w = x1 - x0 - 2 * margin
    avail_h = y1 - y0 - 2 * margin
    height = min(avail_h, avail_w / 0.45) * rng.uniform(0.6, 1.0)
    pts = _TEMPLATE + rng.uniform(-0.02, 0.02, _TEMPLATE.shape)
    pts = pts - pts.min(axis=0)
    pts = pts * height
    extent = pts.max(axis=0)
    origin = np.array([x0 + margin + rng.uniform(0, max(avail_w - extent[0], 0)),
                       y0 + margin + rng.uniform(0, max(avail_h - extent[1], 0))])
    pts = pts + origin
    hull = shapely.MultiPoint(pts).convex_hull.buffer(margin, quad_segs=4)
    poly = np.asarray(hull.exterior.coords)[:-1]
    return Person(pts, np.ones(len(pts), bool), poly)


def random_scene(rng: np.random.Generator, num_persons: int, width: int = 640, height: int = 480,
                 margin: float = 16.0, gap: float = 8.0) -> SceneSpec:
    """Persons on disjoint tiles of the image, so masks never overlap."""
    cols = math.ceil(math.sqrt(num_persons * width / height)) if num_persons else 1
    rows = math.ceil(num_persons / cols) if num_persons else 1
    tile_w = width / cols
    tile_h = height / rows
    slots = rng.permutation(rows * cols)[:num_persons]
    persons = []
    for slot in sorted(slots):
        r, c = divmod(int(slot), cols)
        box = (c * tile_w + gap, r * tile_h + gap, (c + 1) * tile_w - gap, (r + 1) * tile_h - gap)
        persons.append(random_person(rng, box, margin))
    return SceneSpec(width, height, persons)


def ground_truth_records(scene: SceneSpec, image_id=0) -> list[dict]:
    """COCO-style annotations for a scene: keypoints, mask area and RLE."""
    records = []
    for p, m in zip(scene.persons, person_masks(scene)):
        kps = np.column_stack([p.keypoints, np.where(p.visible, 2, 0)]).ravel()
        records.append({
            "image_id": image_id,
            "category_id": 1,
            "keypoints": [float(v) for v in kps],
            "num_keypoints": int(p.visible.sum()),
            "area": float(np.count_nonzero(m)),
            "iscrowd": 0,
            "segmentation": rle_encode(m),
        })
    return records

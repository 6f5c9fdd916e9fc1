"""Person keypoint and mask evaluation in the COCO style.

Matching is greedy per image in descending detection score, precision is
interpolated at 101 recall points, and crowd annotations act as ignore
regions.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

OKS_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
_BIG = 1e10
KEYPOINT_AREAS = {"all": (0, _BIG), "M": (32 ** 2, 96 ** 2), "L": (96 ** 2, _BIG)}
MASK_AREAS = {"all": (0, _BIG), "S": (0, 32 ** 2), "M": (32 ** 2, 96 ** 2), "L": (96 ** 2, _BIG)}


class RLEError(ValueError):
    pass


class SchemaError(ValueError):
    pass


# -- run-length encoding ---------------------------------------------------------

def rle_encode(mask: np.ndarray) -> dict:
    """Column-major run lengths, starting with a (possibly empty) run of zeros."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    cols = np.flatnonzero(mask.any(axis=0))
    if cols.size == 0:
        return {"size": [h, w], "counts": [h * w]}
    # Only the column span holding foreground needs scanning.
    lo, hi = cols[0], cols[-1] + 1
    flat = mask[:, lo:hi].ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    counts[0] += lo * h
    tail = (w - hi) * h
    if len(counts) % 2 == 1:
        counts[-1] += tail
    elif tail:
        counts.append(tail)
    return {"size": [h, w], "counts": [int(c) for c in counts]}


def rle_decode(rle: dict) -> np.ndarray:
    try:
        h, w = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError):
        raise RLEError("RLE needs 'size': [h, w] and an integer 'counts' list") from None
    if h < 0 or w < 0 or any(c < 0 for c in counts):
        raise RLEError("RLE sizes and runs must be non-negative")
    if sum(counts) != h * w:
        raise RLEError(f"runs cover {sum(counts)} pixels, mask has {h * w}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((h, w), order="F")


def rle_area(rle: dict) -> int:
    return int(sum(rle["counts"][1::2]))


# -- records -------------------------------------------------------------------

@dataclass(eq=False)
class Detection:
    image_id: int
    keypoints: np.ndarray          # K x 3 (x, y, score)
    score: float
    segmentation: dict | None = None


@dataclass(eq=False)
class GroundTruthAnnotation:
    image_id: int
    keypoints: np.ndarray          # K x 3 (x, y, visibility)
    area: float
    segmentation: dict | None = None
    iscrowd: bool = False

    @property
    def num_labeled(self) -> int:
        return int(np.count_nonzero(self.keypoints[:, 2] > 0))


def _records(obj, where):
    if isinstance(obj, dict) and "annotations" in obj:
        obj = obj["annotations"]
    if not isinstance(obj, list):
        raise SchemaError(f"{where}: expected a JSON array of records")
    return obj


def parse_detections(obj) -> list[Detection]:
    out = []
    for i, rec in enumerate(_records(obj, "detections")):
        try:
            kps = np.asarray(rec.get("keypoints", []), dtype=np.float64).reshape(-1, 3)
            out.append(Detection(rec["image_id"], kps, float(rec["score"]), rec.get("segmentation")))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SchemaError(f"detections[{i}]: {exc!r}") from None
    return out


def parse_ground_truth(obj) -> list[GroundTruthAnnotation]:
    out = []
    for i, rec in enumerate(_records(obj, "ground truth")):
        try:
            kps = np.asarray(rec.get("keypoints", []), dtype=np.float64).reshape(-1, 3)
            out.append(GroundTruthAnnotation(rec["image_id"], kps, float(rec["area"]),
                                             rec.get("segmentation"), bool(rec.get("iscrowd", 0))))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SchemaError(f"ground truth[{i}]: {exc!r}") from None
    return out


def load_json(path: str | os.PathLike):
    with open(path) as f:
        return json.load(f)


# -- similarities ----------------------------------------------------------------

def oks(detection: Detection, annotation: GroundTruthAnnotation, kappas) -> float:
    """Mean over labeled keypoints of ``exp(-d^2 / (2 area kappa^2))``.

    Returns NaN when the annotation has no labeled keypoint.
    """
    kappas = np.asarray(kappas, dtype=np.float64)
    labeled = annotation.keypoints[:, 2] > 0
    if not labeled.any():
        return float("nan")
    d2 = ((detection.keypoints[:, :2] - annotation.keypoints[:, :2]) ** 2).sum(axis=1)
    e = d2 / (2.0 * max(annotation.area, np.finfo(float).eps) * kappas ** 2)
    return float(np.exp(-e[labeled]).mean())


def mask_iou(det_mask: np.ndarray, gt_mask: np.ndarray, crowd: bool = False) -> float:
    inter = np.count_nonzero(det_mask & gt_mask)
    if crowd:
        union = np.count_nonzero(det_mask)
    else:
        union = np.count_nonzero(det_mask | gt_mask)
    return inter / union if union else 0.0


# -- matching and accumulation ---------------------------------------------------

def _match_image(sim, gt_ignore, gt_crowd, det_ignore_area, threshold):
    """Greedy matching of score-sorted detections against ground truth.

    Returns (matched, ignored) boolean arrays over detections.
    """
    n_det, n_gt = sim.shape
    order = np.argsort(gt_ignore, kind="stable")
    gt_taken = np.zeros(n_gt, dtype=bool)
    matched = np.zeros(n_det, dtype=bool)
    ignored = np.zeros(n_det, dtype=bool)
    for d in range(n_det):
        best = min(threshold, 1 - 1e-10)
        m = -1
        for g in order:
            if gt_taken[g] and not gt_crowd[g]:
                continue
            if m > -1 and not gt_ignore[m] and gt_ignore[g]:
                break
            if sim[d, g] < best:
                continue
            best = sim[d, g]
            m = g
        if m == -1:
            ignored[d] = det_ignore_area[d]
            continue
        matched[d] = True
        ignored[d] = gt_ignore[m]
        gt_taken[m] = True
    return matched, ignored


def _average_precision(scores, matched, ignored, num_gt):
    if num_gt == 0:
        return -1.0, -1.0
    order = np.argsort(-scores, kind="mergesort")
    matched = matched[order]
    ignored = ignored[order]
    tp = np.cumsum(matched & ~ignored)
    fp = np.cumsum(~matched & ~ignored)
    if tp.size == 0:
        return 0.0, 0.0
    recall = tp / num_gt
    precision = tp / np.maximum(tp + fp, np.finfo(float).eps)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(q.mean()), float(recall[-1])


def _evaluate(per_image, thresholds, area_ranges, max_dets):
    """per_image: list of (scores, sim, gt_areas, gt_crowd, gt_invalid, det_areas)."""
    summary = {}
    for name, (lo, hi) in area_ranges.items():
        ap = np.zeros(len(thresholds))
        ar = np.zeros(len(thresholds))
        for t, thr in enumerate(thresholds):
            all_scores, all_matched, all_ignored = [], [], []
            num_gt = 0
            for scores, sim, gt_areas, gt_crowd, gt_invalid, det_areas in per_image:
                scores = scores[:max_dets]
                sim_t = sim[:max_dets]
                gt_ignore = gt_crowd | gt_invalid | (gt_areas < lo) | (gt_areas > hi)
                num_gt += int(np.count_nonzero(~gt_ignore))
                det_out = (det_areas[:max_dets] < lo) | (det_areas[:max_dets] > hi)
                matched, ignored = _match_image(sim_t, gt_ignore, gt_crowd, det_out, thr)
                all_scores.append(scores)
                all_matched.append(matched)
                all_ignored.append(ignored)
            ap[t], ar[t] = _average_precision(
                np.concatenate(all_scores) if all_scores else np.zeros(0),
                np.concatenate(all_matched) if all_matched else np.zeros(0, bool),
                np.concatenate(all_ignored) if all_ignored else np.zeros(0, bool),
                num_gt)
        summary[name] = (ap, ar)
    return summary


def _summarize(summary, thresholds, buckets):
    def mean_valid(values):
        valid = values[values > -1]
        return float(valid.mean()) if valid.size else -1.0

    def at(values, thr):
        i = int(np.argmin(np.abs(np.asarray(thresholds) - thr)))
        if abs(thresholds[i] - thr) > 1e-9:
            return -1.0
        return float(values[i])

    ap_all, ar_all = summary["all"]
    out = {"AP": mean_valid(ap_all), "AP50": at(ap_all, 0.5), "AP75": at(ap_all, 0.75)}
    for b in buckets:
        out[f"AP{b}"] = mean_valid(summary[b][0])
    out.update({"AR": mean_valid(ar_all), "AR50": at(ar_all, 0.5), "AR75": at(ar_all, 0.75)})
    for b in buckets:
        out[f"AR{b}"] = mean_valid(summary[b][1])
    return out


def _group(gts, dets):
    images = defaultdict(lambda: ([], []))
    for g in gts:
        images[g.image_id][0].append(g)
    for d in dets:
        images[d.image_id][1].append(d)
    for key in sorted(images, key=str):
        g, d = images[key]
        d = sorted(d, key=lambda det: -det.score)
        yield g, d


def keypoint_ap(gts: list[GroundTruthAnnotation], dets: list[Detection], kappas,
                oks_thresholds=OKS_THRESHOLDS, max_dets: int = 20) -> dict:
    """AP/AR summary over OKS thresholds with medium/large buckets."""
    per_image = []
    for g, d in _group(gts, dets):
        sim = np.zeros((len(d), len(g)))
        for i, det in enumerate(d):
            for j, ann in enumerate(g):
                value = oks(det, ann, kappas)
                sim[i, j] = 0.0 if np.isnan(value) else value
        det_areas = np.array([_keypoint_box_area(det) for det in d])
        per_image.append((np.array([det.score for det in d]), sim,
                          np.array([ann.area for ann in g]),
                          np.array([ann.iscrowd for ann in g], dtype=bool),
                          np.array([ann.num_labeled == 0 for ann in g], dtype=bool),
                          det_areas))
    thresholds = list(oks_thresholds)
    return _summarize(_evaluate(per_image, thresholds, KEYPOINT_AREAS, max_dets), thresholds, ("M", "L"))


def _keypoint_box_area(det: Detection) -> float:
    pts = det.keypoints[:, :2]
    if len(pts) == 0:
        return 0.0
    w, h = pts.max(axis=0) - pts.min(axis=0)
    return float(w * h)


def mask_ap(gts: list[GroundTruthAnnotation], dets: list[Detection],
            iou_thresholds=OKS_THRESHOLDS, max_dets: int = 20) -> dict:
    """AP/AR summary over mask IoU thresholds with small/medium/large buckets."""
    per_image = []
    for g, d in _group(gts, dets):
        gt_masks = []
        for ann in g:
            if ann.segmentation is None:
                raise SchemaError(f"ground truth for image {ann.image_id} has no segmentation")
            gt_masks.append(rle_decode(ann.segmentation))
        det_masks = []
        for det in d[:max_dets]:
            if det.segmentation is None:
                raise SchemaError(f"detection for image {det.image_id} has no segmentation")
            det_masks.append(rle_decode(det.segmentation))
        sim = np.zeros((len(det_masks), len(g)))
        for i, dm in enumerate(det_masks):
            for j, (ann, gm) in enumerate(zip(g, gt_masks)):
                if dm.shape != gm.shape:
                    raise SchemaError(f"mask size mismatch in image {ann.image_id}")
                sim[i, j] = mask_iou(dm, gm, ann.iscrowd)
        per_image.append((np.array([det.score for det in d[:max_dets]]), sim,
                          np.array([ann.area for ann in g]),
                          np.array([ann.iscrowd for ann in g], dtype=bool),
                          np.zeros(len(g), dtype=bool),
                          np.array([float(np.count_nonzero(m)) for m in det_masks])))
    thresholds = list(iou_thresholds)
    return _summarize(_evaluate(per_image, thresholds, MASK_AREAS, max_dets), thresholds, ("S", "M", "L"))

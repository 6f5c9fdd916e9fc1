"""End-to-end decoding of one ModelOutputs bundle."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .container import ModelOutputs
from .decode import PoseInstance, greedy_decode
from .field import FieldGrid
from .graph import KinematicGraph, default_coco_graph, load_graph
from .hough import HoughMaps, accumulate_hough, extract_seeds
from .metrics import rle_encode
from .refine import RefinementConfig, refine_long_offsets, refine_mid_offsets
from .scoring import OksParams, ScoringConfig, apply_nms, load_kappas, score_instances
from .segment import InstanceMasks, assign_pixels, embedding_field, person_mask


@dataclass(frozen=True)
class PipelineConfig:
    disk_radius: float = 32.0
    seed_threshold: float = 0.01
    nms_radius: float = 10.0
    scoring: str = "expected_oks"
    nms: str = "soft"
    hard_nms_oks_threshold: float = 0.5
    seg_threshold: float = 0.5
    dist_threshold: float = 0.25
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    budget: int = 20
    graph_file: str | None = None
    kappa_file: str | None = None
    peak_window: int = 1
    refine_seeds: bool = True
    snap_radius: float | None = None

    def __post_init__(self):
        ScoringConfig(self.scoring, self.nms, self.hard_nms_oks_threshold, self.nms_radius)
        if self.disk_radius <= 0:
            raise ValueError("disk_radius must be positive")
        if self.seed_threshold < 0:
            raise ValueError("seed_threshold must be >= 0")
        if self.snap_radius is not None and self.snap_radius < 0:
            raise ValueError("snap_radius must be >= 0")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.peak_window < 1:
            raise ValueError("peak_window must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def scoring_config(self) -> ScoringConfig:
        return ScoringConfig(self.scoring, self.nms, self.hard_nms_oks_threshold, self.nms_radius)

    def load_graph(self) -> KinematicGraph:
        return load_graph(self.graph_file) if self.graph_file else default_coco_graph()


@dataclass(eq=False)
class PipelineResult:
    instances: list[PoseInstance]
    masks: InstanceMasks
    hough: HoughMaps
    mid_offsets: FieldGrid
    long_offsets: FieldGrid
    image_height: int
    image_width: int

    def instance_mask(self, j: int) -> np.ndarray:
        """Full-resolution boolean mask of instance ``j``."""
        out = np.zeros((self.image_height, self.image_width), dtype=bool)
        cells = self.masks.members[j]
        rows = np.flatnonzero(cells.any(axis=1))
        cols = np.flatnonzero(cells.any(axis=0))
        if rows.size == 0:
            return out
        s = self.masks.stride
        r_lo, r_hi = rows[0], rows[-1] + 1
        c_lo, c_hi = cols[0], cols[-1] + 1
        block = cells[r_lo:r_hi, c_lo:c_hi].repeat(s, axis=0).repeat(s, axis=1)
        y0, x0 = r_lo * s, c_lo * s
        y1 = min(r_hi * s, self.image_height)
        x1 = min(c_hi * s, self.image_width)
        out[y0:y1, x0:x1] = block[:y1 - y0, :x1 - x0]
        return out


def run_pipeline(outputs: ModelOutputs, config: PipelineConfig = PipelineConfig(),
                 graph: KinematicGraph | None = None,
                 oks: OksParams | None = None) -> PipelineResult:
    graph = graph or config.load_graph()
    oks = oks or load_kappas(config.kappa_file)
    if graph.num_keypoints != outputs.num_keypoints:
        raise ValueError(f"graph has {graph.num_keypoints} keypoints, outputs have {outputs.num_keypoints}")
    if len(oks.kappas) != outputs.num_keypoints:
        raise ValueError(f"{len(oks.kappas)} kappas for {outputs.num_keypoints} keypoints")

    mid = refine_mid_offsets(outputs.mid_offsets, outputs.short_offsets, graph, config.refinement)
    long_ = refine_long_offsets(outputs.long_offsets, outputs.short_offsets, config.refinement)

    hough = accumulate_hough(outputs.heatmaps, outputs.short_offsets, config.disk_radius)
    seeds = extract_seeds(hough, config.seed_threshold, config.peak_window)
    instances = greedy_decode(seeds, hough, mid, graph, config.nms_radius,
                              short_offsets=outputs.short_offsets if config.refine_seeds else None,
                              snap_radius=config.snap_radius)
    score_instances(instances, hough, outputs.heatmaps, oks, config.scoring)
    instances = apply_nms(instances, oks, config.scoring_config())[:config.budget]

    mask = person_mask(outputs.seg_prob, config.seg_threshold)
    masks = assign_pixels(mask, embedding_field(long_), instances, outputs.heatmaps,
                          config.dist_threshold)
    return PipelineResult(instances, masks, hough, mid, long_,
                          outputs.image_height, outputs.image_width)


def to_detections(result: PipelineResult, image_id=0) -> list[dict]:
    """COCO-style result records, one per instance in score order."""
    records = []
    for j, inst in enumerate(result.instances):
        flat = np.column_stack([inst.keypoints, inst.keypoint_scores]).ravel()
        records.append({
            "image_id": image_id,
            "category_id": 1,
            "keypoints": [round(float(v), 4) for v in flat],
            "score": round(float(inst.instance_score), 6),
            "segmentation": rle_encode(result.instance_mask(j)),
        })
    return records

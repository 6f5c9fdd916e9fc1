"""Bottom-up person pose and instance segmentation decoding from dense fields."""

from .container import ModelOutputs, load_container, save_container
from .decode import PoseInstance, greedy_decode
from .field import FieldGrid, Point2D, bilinear_sample
from .graph import KinematicGraph, default_coco_graph
from .hough import HoughMaps, SeedCandidate, accumulate_hough, extract_seeds
from .pipeline import PipelineConfig, run_pipeline, to_detections
from .refine import RefinementConfig, refine_long_offsets, refine_mid_offsets
from .scoring import OksParams, ScoringConfig, hard_nms, load_kappas, soft_nms_rescore
from .segment import assign_pixels, distance_matrix, embedding_distance, masks_to_image, person_mask
from .synth import SceneSpec, render_outputs

__version__ = "0.1.0"

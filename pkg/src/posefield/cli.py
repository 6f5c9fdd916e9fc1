"""Command line entry point: ``posefield {decode,synth,eval,render,config}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .container import ContainerError, load_container, save_container
from .graph import GraphError
from .metrics import (RLEError, SchemaError, keypoint_ap, load_json, mask_ap,
                      parse_detections, parse_ground_truth, rle_decode)
from .pipeline import PipelineConfig, run_pipeline, to_detections
from .refine import RefinementConfig
from .render import overlay, save_mask_png
from .scoring import load_kappas
from .synth import SceneError, ground_truth_records, load_scene, random_scene, render_outputs, save_scene

log = logging.getLogger("posefield")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PARSE = 0, 1, 2, 3
_PARSE_ERRORS = (ContainerError, SceneError, SchemaError, RLEError, GraphError,
                 json.JSONDecodeError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    d = PipelineConfig()
    p.add_argument("--radius", type=float, default=d.disk_radius, help="keypoint disk radius R (px)")
    p.add_argument("--seed-threshold", type=float, default=d.seed_threshold)
    p.add_argument("--peak-window", type=int, default=d.peak_window,
                   help="local-maximum window radius in cells")
    p.add_argument("--nms-radius", type=float, default=d.nms_radius)
    p.add_argument("--scoring", choices=("hough", "expected-oks"), default=d.scoring.replace("_", "-"))
    p.add_argument("--nms", choices=("hard", "soft"), default=d.nms)
    p.add_argument("--hard-nms-threshold", type=float, default=d.hard_nms_oks_threshold)
    p.add_argument("--seg-threshold", type=float, default=d.seg_threshold)
    p.add_argument("--dist-threshold", type=float, default=d.dist_threshold)
    p.add_argument("--mid-steps", type=int, default=d.refinement.mid_steps_short)
    p.add_argument("--long-self-steps", type=int, default=d.refinement.long_steps_self)
    p.add_argument("--long-short-steps", type=int, default=d.refinement.long_steps_short)
    p.add_argument("--no-refine", action="store_true", help="disable all offset refinement")
    p.add_argument("--budget", type=int, default=d.budget, help="max person proposals per image")
    p.add_argument("--graph", metavar="FILE", help="kinematic graph, one edge per line")
    p.add_argument("--kappas", metavar="FILE", help="per-keypoint OKS constants, 'name value' lines")
    p.add_argument("--no-seed-refine", action="store_true",
                   help="start instances at the Hough cell center instead of x + S_k(x)")
    p.add_argument("--snap-radius", type=float, default=None)


def _config_from_args(args) -> PipelineConfig:
    try:
        if args.no_refine:
            refinement = RefinementConfig(0, 0, 0)
        else:
            refinement = RefinementConfig(args.mid_steps, args.long_self_steps, args.long_short_steps)
        return _build_config(args, refinement)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _build_config(args, refinement) -> PipelineConfig:
    return PipelineConfig(
        disk_radius=args.radius, seed_threshold=args.seed_threshold, nms_radius=args.nms_radius,
        scoring=args.scoring.replace("-", "_"), nms=args.nms,
        hard_nms_oks_threshold=args.hard_nms_threshold, seg_threshold=args.seg_threshold,
        dist_threshold=args.dist_threshold, refinement=refinement, budget=args.budget,
        graph_file=args.graph, kappa_file=args.kappas, peak_window=args.peak_window,
        refine_seeds=not args.no_seed_refine,
        snap_radius=args.snap_radius)


def _write_json(obj, path) -> None:
    text = json.dumps(obj, separators=(",", ":"))
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w") as f:
            f.write(text + "\n")


def _decode_one(src: Path, config: PipelineConfig, out_json, masks_dir, render_path, image_id):
    outputs = load_container(src)
    graph = config.load_graph()
    result = run_pipeline(outputs, config, graph=graph)
    records = to_detections(result, image_id)
    _write_json(records, out_json)
    if masks_dir is not None:
        os.makedirs(masks_dir, exist_ok=True)
        for j in range(len(result.instances)):
            save_mask_png(result.instance_mask(j), Path(masks_dir) / f"instance_{j:03d}.png")
    if render_path is not None:
        img = overlay(outputs, [inst.keypoints for inst in result.instances],
                      [result.instance_mask(j) for j in range(len(result.instances))], graph)
        img.save(render_path)
    log.info("%s: %d detections", src, len(records))
    return len(records)


def cmd_decode(args) -> int:
    config = _config_from_args(args)
    src = Path(args.input)
    if src.is_dir():
        out_dir = Path(args.output or src)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = sorted(src.glob("*.plfd"))

        def job(path):
            masks = Path(args.masks_dir) / path.stem if args.masks_dir else None
            return _decode_one(path, config, out_dir / f"{path.stem}.json", masks, None, path.stem)

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            list(pool.map(job, files))
        return EXIT_OK
    _decode_one(src, config, args.output, args.masks_dir, args.render, args.image_id)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.random is not None:
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        scene = random_scene(rng, args.random, args.width, args.height)
    elif args.scene:
        scene = load_scene(args.scene)
    else:
        raise SceneError("<args>: give a scene file or --random N")
    if args.seed is not None:
        scene.seed = args.seed
    outputs = render_outputs(scene, args.stride, args.radius)
    save_container(outputs, args.output)
    if args.save_scene:
        save_scene(scene, args.save_scene)
    if args.gt:
        _write_json(ground_truth_records(scene, args.image_id), args.gt)
    return EXIT_OK


def cmd_eval(args) -> int:
    gts = parse_ground_truth(load_json(args.gt))
    dets = parse_detections(load_json(args.pred))
    if args.task == "keypoints":
        kappas = load_kappas(args.kappas).kappas
        summary = keypoint_ap(gts, dets, kappas, max_dets=args.budget)
    else:
        summary = mask_ap(gts, dets, max_dets=args.budget)
    if args.json:
        _write_json(summary, None)
    else:
        keys = list(summary)
        print(" ".join(f"{k:>7}" for k in keys))
        print(" ".join(f"{summary[k]:7.3f}" for k in keys))
    return EXIT_OK


def cmd_render(args) -> int:
    outputs = load_container(args.input)
    graph = PipelineConfig(graph_file=args.graph).load_graph()
    records = parse_detections(load_json(args.detections)) if args.detections else []
    keypoints = [d.keypoints[:, :2] for d in records]
    scores = [d.keypoints[:, 2] for d in records]
    masks = [rle_decode(d.segmentation) for d in records if d.segmentation is not None]
    overlay(outputs, keypoints, masks, graph, scores, args.min_score).save(args.output)
    return EXIT_OK


def cmd_config(args) -> int:
    _write_json(_config_from_args(args).to_dict(), None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posefield", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decode", help="decode a PLFD container into detections and masks")
    p.add_argument("input", help="container file, or a directory of *.plfd files")
    p.add_argument("-o", "--output", help="detection JSON (default stdout); output dir in batch mode")
    p.add_argument("--masks-dir", help="write one PNG mask per instance here")
    p.add_argument("--render", metavar="FILE", help="write a PNG overlay")
    p.add_argument("--image-id", type=int, default=0)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("synth", help="render oracle fields for a scene")
    p.add_argument("scene", nargs="?", help="scene JSON")
    p.add_argument("-o", "--output", required=True, help="PLFD container to write")
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--radius", type=float, default=32.0)
    p.add_argument("--seed", type=int, default=None, help="noise seed (overrides the scene's)")
    p.add_argument("--random", type=int, metavar="N", help="generate N random persons instead")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--save-scene", metavar="FILE")
    p.add_argument("--gt", metavar="FILE", help="also write COCO-style ground truth")
    p.add_argument("--image-id", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--task", choices=("keypoints", "masks"), default="keypoints")
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--kappas", metavar="FILE")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="draw detections over a container's segmentation")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--detections", metavar="FILE")
    p.add_argument("--graph", metavar="FILE")
    p.add_argument("--min-score", type=float, default=0.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("config", help="print the effective pipeline configuration")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"posefield: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"posefield: {exc}", file=sys.stderr)
        return EXIT_IO
    except _PARSE_ERRORS as exc:
        print(f"posefield: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"posefield: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

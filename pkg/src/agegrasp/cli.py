"""Command-line interface.

Exit codes: 0 success, 2 parse or validation failure, 3 empty affordance,
4 no feasible grasp.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import affordance, grasp, metrics, pipeline, projection, superquadric, synth
from .errors import AgeError
from .pipeline import EXIT_INFEASIBLE, EXIT_OK, PipelineConfig

DEFAULT_INTRINSICS = projection.CameraIntrinsics(525.0, 525.0, 319.5, 239.5)


def _floats(n):
    def parse(text):
        parts = [p for p in text.replace(",", " ").split() if p]
        if len(parts) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return tuple(float(p) for p in parts)
    return parse


def _add_config(parser, *groups):
    parser.add_argument("--config", help="configuration file of 'key = value' lines (flags override it)")
    if "project" in groups:
        parser.add_argument("--w-min", type=float, help="pre-projection weight gate")
        parser.add_argument("--voxel", type=float, help="voxel edge length in metres")
    if "cluster" in groups:
        parser.add_argument("--eps", type=float, help="DBSCAN neighbourhood radius in metres")
        parser.add_argument("--min-pts", type=int, help="DBSCAN core-point neighbour count")
        parser.add_argument("--tau", type=float, help="cluster keep ratio relative to the best cluster mean")
    if "fit" in groups or "grasp" in groups:
        parser.add_argument("--beta", type=float, help="volume penalty coefficient")
        parser.add_argument("--max-iterations", type=int)
        parser.add_argument("--tolerance", type=float, help="relative cost-decrease stopping threshold")
    if "grasp" in groups:
        parser.add_argument("--gripper-axes", type=_floats(3), help="gripper ellipsoid semi-axes g1,g2,g3 (m)")
        parser.add_argument("--samples", type=int, help="gripper surface sample count L")
        parser.add_argument("--table-height", type=float, help="table plane z (m)")
        parser.add_argument("--clearance", type=float, help="required clearance above the table (m)")


def _config(args) -> PipelineConfig:
    base = pipeline.read_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    fields = ("w_min", "voxel", "eps", "min_pts", "tau", "beta", "max_iterations", "tolerance",
              "gripper_axes", "samples", "table_height", "clearance", "sigma_px", "seed")
    return base.replace(**{f: getattr(args, f, None) for f in fields})


def _emit(text: str, path) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands

def cmd_bump(args) -> int:
    pts = [affordance.InteractionPoint(x, y) for x, y in args.point]
    aff = affordance.gaussian_bump(pts, args.sigma, args.width, args.height)
    affordance.write_afm(aff, args.output)
    return EXIT_OK


def cmd_project(args) -> int:
    config = _config(args)
    depth, aff, k = pipeline.load_inputs(args.depth, args.affordance, args.intrinsics)
    _, down = pipeline.preprocess(depth, aff, k, config)
    projection.write_ply(down, args.output)
    return EXIT_OK


def cmd_cluster(args) -> int:
    config = _config(args)
    cloud = projection.read_ply(args.cloud)
    _, filtered = pipeline.cluster(cloud, config)
    projection.write_ply(filtered, args.output)
    return EXIT_OK


def cmd_fit_sq(args) -> int:
    config = _config(args)
    cloud = projection.read_ply(args.cloud)
    result = superquadric.fit(cloud, config.recovery())
    _emit(superquadric.format_params(result.params), args.output)
    return EXIT_OK


def cmd_plan_grasp(args) -> int:
    config = _config(args)
    sq = superquadric.read_params(args.superquadric)
    result = grasp.plan_grasp(sq, config.gripper(), config.constraints(), config.recovery())
    _emit(pipeline.format_grasp_result(result), args.output)
    if not result.feasible:
        print("no feasible grasp: every start violates a constraint", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_metrics(args) -> int:
    pred = affordance.read_afm(args.pred)
    gt = affordance.read_afm(args.gt)
    report = metrics.evaluate(pred, gt, args.grasp_pixel)
    print("\n".join(report.lines()))
    return EXIT_OK


def cmd_synth(args) -> int:
    k = projection.read_intrinsics(args.intrinsics) if args.intrinsics else DEFAULT_INTRINSICS
    sq = superquadric.SuperquadricParams(args.axes, args.exponents[0], args.exponents[1], args.center, args.euler)
    scene = synth.render_scene(sq, args.anchor, k, args.width, args.height, args.sigma_px, args.noise, args.seed)
    os.makedirs(args.output, exist_ok=True)
    affordance.write_depth(scene.depth, os.path.join(args.output, "depth.dpt"))
    affordance.write_afm(scene.aff, os.path.join(args.output, "affordance.afm"))
    projection.write_intrinsics(k, os.path.join(args.output, "intrinsics.txt"))
    synth.write_truth(scene, os.path.join(args.output, "truth.txt"))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    config = _config(args)
    start = time.perf_counter()
    result = pipeline.run_pipeline(args.depth, args.affordance, args.intrinsics, config, args.output)
    elapsed = time.perf_counter() - start
    sys.stdout.write(pipeline.format_grasp_result(result.grasp))
    print(f"# {len(result.filtered)} affordance points, {elapsed:.3f} s", file=sys.stderr)
    if not result.grasp.feasible:
        print("no feasible grasp: every start violates a constraint", file=sys.stderr)
    return result.exit_code


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agegrasp", description="Affordance-aware grasp planning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bump", help="rasterise interaction points into an affordance map")
    p.add_argument("--point", type=_floats(2), action="append", required=True, metavar="X,Y",
                   help="interaction pixel (column,row); repeatable")
    p.add_argument("--sigma", type=float, default=affordance.DEFAULT_SIGMA_PX)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_bump)

    p = sub.add_parser("project", help="back-project and voxel-downsample the affordance region")
    p.add_argument("depth")
    p.add_argument("affordance")
    p.add_argument("intrinsics")
    p.add_argument("-o", "--output", required=True, help="PLY output")
    _add_config(p, "project")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("cluster", help="DBSCAN and low-weight cluster rejection on a PLY cloud")
    p.add_argument("cloud")
    p.add_argument("-o", "--output", required=True, help="PLY output")
    _add_config(p, "cluster")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("fit-sq", help="recover a superquadric from a PLY cloud")
    p.add_argument("cloud")
    p.add_argument("-o", "--output")
    _add_config(p, "fit")
    p.set_defaults(func=cmd_fit_sq)

    p = sub.add_parser("plan-grasp", help="plan a gripper pose for a superquadric record")
    p.add_argument("superquadric")
    p.add_argument("-o", "--output")
    _add_config(p, "grasp")
    p.set_defaults(func=cmd_plan_grasp)

    p = sub.add_parser("metrics", help="compare a predicted affordance map with ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--grasp-pixel", type=_floats(2), metavar="COL,ROW")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="render a synthetic superquadric scene")
    p.add_argument("output", help="directory for depth.dpt, affordance.afm, intrinsics.txt, truth.txt")
    p.add_argument("--axes", type=_floats(3), default=(0.05, 0.05, 0.05))
    p.add_argument("--exponents", type=_floats(2), default=(1.0, 1.0))
    p.add_argument("--center", type=_floats(3), default=(0.0, 0.0, 0.7))
    p.add_argument("--euler", type=_floats(3), default=(0.0, 0.0, 0.0), help="rz,ry,rx in radians")
    p.add_argument("--anchor", type=_floats(2), default=(-np.pi / 4, -np.pi / 2), metavar="ETA,OMEGA")
    p.add_argument("--intrinsics", help="intrinsics file (default fx=fy=525, cx=319.5, cy=239.5)")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--sigma-px", type=float, default=affordance.DEFAULT_SIGMA_PX)
    p.add_argument("--noise", type=float, default=0.0, help="depth noise std (m)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run every stage from depth + affordance to a grasp")
    p.add_argument("depth")
    p.add_argument("affordance")
    p.add_argument("intrinsics")
    p.add_argument("-o", "--output", help="directory for cloud.ply, superquadric.txt, grasp.txt")
    _add_config(p, "project", "cluster", "fit", "grasp")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AgeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())

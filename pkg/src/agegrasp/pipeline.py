"""End-to-end driver: depth + affordance map -> filtered cloud -> superquadric -> grasp."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import affordance, grasp, projection, superquadric
from .errors import AgeError, EmptyAffordanceError, ParseError, ValidationError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_EMPTY_AFFORDANCE = 3
EXIT_INFEASIBLE = 4

CLOUD_FILE = "cloud.ply"
SQ_FILE = "superquadric.txt"
GRASP_FILE = "grasp.txt"


@dataclass(frozen=True)
class PipelineConfig:
    w_min: float = projection.DEFAULT_W_MIN
    voxel: float = projection.DEFAULT_VOXEL
    eps: float = projection.DEFAULT_EPS
    min_pts: int = projection.DEFAULT_MIN_PTS
    tau: float = projection.DEFAULT_TAU
    beta: float = 0.1
    max_iterations: int = 200
    tolerance: float = 1e-8
    sigma_px: float = affordance.DEFAULT_SIGMA_PX
    gripper_axes: tuple[float, float, float] = grasp.DEFAULT_GRIPPER_AXES
    samples: int = grasp.DEFAULT_SAMPLES
    # the pipeline works in the camera frame, where "below the table" is not
    # meaningful by default; a far plane keeps the table constraint inactive
    table_height: float = -10.0
    clearance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.w_min < 1.0:
            raise ValidationError(f"w_min must lie in [0, 1), got {self.w_min}")
        for name in ("voxel", "eps", "sigma_px", "tolerance"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.min_pts < 1:
            raise ValidationError("min_pts must be at least 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValidationError("tau must lie in (0, 1]")
        object.__setattr__(self, "gripper_axes", tuple(float(v) for v in self.gripper_axes))
        # constructing these validates the remaining fields
        self.recovery()
        self.gripper()
        self.constraints()

    def recovery(self) -> superquadric.RecoveryConfig:
        return superquadric.RecoveryConfig(self.beta, self.max_iterations, self.tolerance)

    def gripper(self) -> grasp.GripperModel:
        return grasp.GripperModel(self.gripper_axes, self.samples)

    def constraints(self) -> grasp.SceneConstraints:
        return grasp.SceneConstraints(self.table_height, self.clearance)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


_INT_FIELDS = {"min_pts", "max_iterations", "samples", "seed"}


def parse_config(text: str, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    """Parse ``key = value`` lines; ``gripper_axes`` takes three comma- or space-separated lengths."""
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ParseError(f"config line {lineno}: expected 'key = value'")
        if key not in names:
            raise ParseError(f"config line {lineno}: unknown setting {key!r}")
        try:
            if key == "gripper_axes":
                changes[key] = tuple(float(v) for v in value.replace(",", " ").split())
            elif key in _INT_FIELDS:
                changes[key] = int(value)
            else:
                changes[key] = float(value)
        except ValueError:
            raise ParseError(f"config line {lineno}: bad value for {key}: {value!r}") from None
    return base.replace(**changes)


def read_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# grasp result document

def format_grasp_result(result: grasp.GraspResult) -> str:
    """Key-value text document; vectors are space-separated on one line.

    Keys: position (m), quaternion (x y z w), final_cost, mean_residual,
    margins (table first, then obstacles), target_margin (gripper centre
    against the target), feasible, converged, start_index.
    """
    def vec(values):
        return " ".join(repr(float(v)) for v in values)

    lines = [
        f"position = {vec(result.pose.position)}",
        f"quaternion = {vec(result.pose.quaternion)}",
        f"final_cost = {result.final_cost!r}",
        f"mean_residual = {result.mean_residual!r}",
        f"margins = {vec(result.margins)}",
        f"target_margin = {result.target_margin!r}",
        f"feasible = {'true' if result.feasible else 'false'}",
        f"converged = {'true' if result.converged else 'false'}",
        f"start_index = {result.start_index}",
    ]
    return "\n".join(lines) + "\n"


def parse_grasp_result(text: str) -> dict:
    raw = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    try:
        return {
            "position": np.array([float(v) for v in raw["position"].split()]),
            "quaternion": np.array([float(v) for v in raw["quaternion"].split()]),
            "final_cost": float(raw["final_cost"]),
            "mean_residual": float(raw["mean_residual"]),
            "margins": [float(v) for v in raw["margins"].split()],
            "target_margin": float(raw["target_margin"]),
            "feasible": raw["feasible"] == "true",
            "converged": raw["converged"] == "true",
            "start_index": int(raw["start_index"]),
        }
    except (KeyError, ValueError) as exc:
        raise ParseError(f"malformed grasp result document: {exc}") from None


# ---------------------------------------------------------------------------
# pipeline

class StageError(AgeError):
    """Failure inside a named pipeline stage; ``exit_code`` follows the error class."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = exit_code_for(cause)


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, StageError):
        return exc.exit_code
    if isinstance(exc, EmptyAffordanceError):
        return EXIT_EMPTY_AFFORDANCE
    return EXIT_INVALID


@dataclass
class PipelineResult:
    cloud: projection.WeightedCloud
    downsampled: projection.WeightedCloud
    labels: np.ndarray
    filtered: projection.WeightedCloud
    fit: superquadric.FitResult
    grasp: grasp.GraspResult

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.grasp.feasible else EXIT_INFEASIBLE


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (AgeError, ValueError, OSError)) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def preprocess(depth, aff, k, config: PipelineConfig):
    """Back-projection and voxel downsampling."""
    with _stage("project"):
        cloud = projection.back_project(depth, aff, k, config.w_min)
        down = projection.voxel_downsample(cloud, config.voxel)
    return cloud, down


def cluster(down, config: PipelineConfig):
    """DBSCAN and low-weight cluster rejection."""
    with _stage("cluster"):
        labels = projection.dbscan(down, config.eps, config.min_pts)
        filtered = projection.filter_clusters(down, labels, config.tau)
    return labels, filtered


def run(depth, aff, k, config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    cloud, down = preprocess(depth, aff, k, config)
    labels, filtered = cluster(down, config)
    with _stage("fit-sq"):
        fitted = superquadric.fit(filtered, config.recovery())
    with _stage("plan-grasp"):
        planned = grasp.plan_grasp(fitted.params, config.gripper(), config.constraints(), config.recovery())
    return PipelineResult(cloud, down, labels, filtered, fitted, planned)


def load_inputs(depth_path, aff_path, intrinsics_path):
    with _stage("load"):
        depth = affordance.read_depth(depth_path)
        aff = affordance.read_afm(aff_path)
        k = projection.read_intrinsics(intrinsics_path)
    return depth, aff, k


def write_artifacts(result: PipelineResult, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    projection.write_ply(result.filtered, os.path.join(out_dir, CLOUD_FILE))
    superquadric.write_params(result.fit.params, os.path.join(out_dir, SQ_FILE))
    with open(os.path.join(out_dir, GRASP_FILE), "w", encoding="utf-8") as fh:
        fh.write(format_grasp_result(result.grasp))


def run_pipeline(depth_path, aff_path, intrinsics_path, config: PipelineConfig = PipelineConfig(),
                 out_dir: Optional[str] = None) -> PipelineResult:
    """File-based pipeline; writes cloud.ply, superquadric.txt and grasp.txt when ``out_dir`` is set."""
    depth, aff, k = load_inputs(depth_path, aff_path, intrinsics_path)
    result = run(depth, aff, k, config)
    if out_dir is not None:
        write_artifacts(result, out_dir)
    return result

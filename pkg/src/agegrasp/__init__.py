"""Affordance-aware grasp planning from depth and affordance maps."""

from .affordance import AffordanceMap, DepthImage, InteractionPoint, gaussian_bump, read_afm, read_depth, write_afm
from .errors import AgeError, EmptyAffordanceError, ParseError, ValidationError
from .grasp import GraspPose, GraspResult, GripperModel, SceneConstraints, plan_grasp
from .metrics import MetricReport, focal_loss, kld, nss, pws_distance, sim
from .pipeline import PipelineConfig, run, run_pipeline
from .projection import CameraIntrinsics, WeightedCloud, back_project, dbscan, filter_clusters, voxel_downsample
from .superquadric import RecoveryConfig, SuperquadricParams, fit, inside_outside, volume

__version__ = "0.1.0"

"""Alternating inference-time refinement of human optical flow and pose.

Flow fields are refined toward targets built by overlaying rasterized
skeleton motion on the current estimate; poses are refined against the
current flow, detections and temporal consistency.  A synthetic benchmark
with exact ground truth drives the quantitative checks.
"""

from .errors import FormatError, InvalidInputError, NumericalError, SchemaError
from .geometry import (EVAL_JOINTS_14, MODE_2D, MODE_3D, CameraTrack,
                       DetectionTrack, FlowField, PoseTrack, SceneBundle,
                       SkeletonTopology, average_flows, average_tracks,
                       bone_lengths, default_topology, project, project_track)
from .optim import (AdamState, SmoothL1Config, adam_init, adam_step,
                    finite_diff_check, smooth_l1)
from .raster import BoneRaster, TargetFlow, bone_flow, compose_target_flow, rasterize_skeleton
from .flow_refine import CorrectionGrid, init_refiner, refine_flow, refiner_apply
from .pose_refine import (PoseHyperParams, loss_2d, loss_3d, loss_opt,
                          loss_temp, refine_pose, refine_pose_2d)
from .pipeline import (CycleSchedule, FlowRefineParams, FlowStage, PoseStage,
                       StageRecord, bootstrap)
from .synth import (GroundTruthBundle, NoiseConfig, epe, generate_scene,
                    mpjpe, perturb, sequence_joint_epe, standard_benchmark)

__version__ = "0.1.0"

__all__ = [
    "FormatError", "InvalidInputError", "NumericalError", "SchemaError",
    "EVAL_JOINTS_14", "MODE_2D", "MODE_3D", "CameraTrack", "DetectionTrack",
    "FlowField", "PoseTrack", "SceneBundle", "SkeletonTopology",
    "average_flows", "average_tracks", "bone_lengths", "default_topology",
    "project", "project_track",
    "AdamState", "SmoothL1Config", "adam_init", "adam_step",
    "finite_diff_check", "smooth_l1",
    "BoneRaster", "TargetFlow", "bone_flow", "compose_target_flow",
    "rasterize_skeleton",
    "CorrectionGrid", "init_refiner", "refine_flow", "refiner_apply",
    "PoseHyperParams", "loss_2d", "loss_3d", "loss_opt", "loss_temp",
    "refine_pose", "refine_pose_2d",
    "CycleSchedule", "FlowRefineParams", "FlowStage", "PoseStage",
    "StageRecord", "bootstrap",
    "GroundTruthBundle", "NoiseConfig", "epe", "generate_scene", "mpjpe",
    "perturb", "sequence_joint_epe", "standard_benchmark",
    "__version__",
]

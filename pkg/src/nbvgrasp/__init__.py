"""Next-best-view grasp planning over analytic scenes."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .geometry import Aabb, Camera, Intrinsics, Pose, look_at
from .grasping import Grasp, GripperConfig, grasp_feasible
from .scene import Scene, SdfPrimitive, generate_packed_scene, render_depth, scene_sdf, select_target
from .tsdf import TsdfVolume

__all__ = [
    "BACKEND", "Aabb", "Camera", "Intrinsics", "Pose", "look_at", "Grasp", "GripperConfig",
    "grasp_feasible", "Scene", "SdfPrimitive", "generate_packed_scene", "render_depth", "scene_sdf",
    "select_target", "TsdfVolume",
]

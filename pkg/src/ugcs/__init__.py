"""Unified gripper coordinate space: spherical charts shared across grippers,
coordinate-map grasp synthesis and cross-gripper grasp transfer."""

__version__ = "0.1.0"

from ._validation import InvalidArgumentError, UGCSError
from .coordspace import (
    CoordinateMap,
    GripperPrint,
    ObjectCloud,
    SphereFit,
    build_print,
    max_graspable_sphere,
    object_map_from_grasp,
)
from .kinematics import GraspConfig, GripperModel, load_gripper
from .mesh import TriMesh, load_mesh
from .metrics import diversity, quality_proxy
from .optimize import OptimizationConfig, correspond, init_pose, synthesize, transfer

__all__ = [
    "CoordinateMap",
    "GraspConfig",
    "GripperModel",
    "GripperPrint",
    "InvalidArgumentError",
    "ObjectCloud",
    "OptimizationConfig",
    "SphereFit",
    "TriMesh",
    "UGCSError",
    "build_print",
    "correspond",
    "diversity",
    "init_pose",
    "load_gripper",
    "load_mesh",
    "max_graspable_sphere",
    "object_map_from_grasp",
    "quality_proxy",
    "synthesize",
    "transfer",
]

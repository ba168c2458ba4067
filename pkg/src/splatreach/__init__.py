"""Reactive mobile-manipulation control with Gaussian-splat collision avoidance."""

from .scene import Ellipsoid, Splat, SplatScene, cull_splats, splat_to_ellipsoid
from .ply_io import load_scene, write_scene
from .primitives import Primitive, PrimitiveScene, sdf_batch, sdf_query
from .synth import GeneratorSpec, generate_synthetic_scene, inject_floaters
from .kinematics import (
    Joint,
    RobotModel,
    RobotState,
    SphereSet,
    SphereSpec,
    default_robot,
    forward_kinematics,
    jacobian,
    load_robot,
    manipulability_jacobian,
    save_robot,
    sphere_world_positions,
)

__version__ = "0.1.0"

__all__ = [
    "Ellipsoid",
    "GeneratorSpec",
    "Joint",
    "Primitive",
    "PrimitiveScene",
    "RobotModel",
    "RobotState",
    "Splat",
    "SplatScene",
    "SphereSet",
    "SphereSpec",
    "cull_splats",
    "default_robot",
    "forward_kinematics",
    "generate_synthetic_scene",
    "inject_floaters",
    "jacobian",
    "load_robot",
    "load_scene",
    "manipulability_jacobian",
    "save_robot",
    "sdf_batch",
    "sdf_query",
    "sphere_world_positions",
    "splat_to_ellipsoid",
    "write_scene",
]

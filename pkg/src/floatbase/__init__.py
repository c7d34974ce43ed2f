"""Floating-base rigid-body dynamics, whole-body estimation and interaction-aware control."""

from .dynamics import bias_forces, centroidal_dynamics, forward_dynamics, inverse_dynamics, mass_matrix, rnea
from .kinematics import Configuration, forward_kinematics, frame_jacobian
from .model import FloatingBaseModel, build_human_template
from .modelio import load_model, parse_model, serialize_model
from .spatial import Pose, SpatialInertia

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "FloatingBaseModel",
    "Pose",
    "SpatialInertia",
    "bias_forces",
    "build_human_template",
    "centroidal_dynamics",
    "forward_dynamics",
    "forward_kinematics",
    "frame_jacobian",
    "inverse_dynamics",
    "load_model",
    "mass_matrix",
    "parse_model",
    "rnea",
    "serialize_model",
]

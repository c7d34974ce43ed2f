"""Builders for the small reference models shipped in ``floatbase/data``.

The shipped files are generated from these builders by
``scripts/generate_builtin_models.py``; a test keeps the two in sync.
"""

from __future__ import annotations

import numpy as np

from .model import FloatingBaseModel, LinkSpec, Shape, inertia_from_shape

_Y_TO_Z = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
_Y_TO_X = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def _rod(name, mass, length, direction, radius=0.02):
    """Thin cylinder from the link origin along a unit axis ('x' or '-z' or 'z')."""
    shape = Shape("cylinder", (radius, length))
    axis = {"x": np.array([1.0, 0.0, 0.0]), "z": np.array([0.0, 0.0, 1.0]), "-z": np.array([0.0, 0.0, -1.0])}[direction]
    orient = _Y_TO_X if direction == "x" else _Y_TO_Z
    return LinkSpec(name, inertia_from_shape(shape, mass, 0.5 * length * axis, orient), shape)


def _box(name, mass, dims, center=(0.0, 0.0, 0.0)):
    shape = Shape("box", dims)
    return LinkSpec(name, inertia_from_shape(shape, mass, np.asarray(center, dtype=float)), shape)


def double_pendulum() -> FloatingBaseModel:
    """Planar double pendulum hanging along -z, hinges about y, rods 1 m / 1 kg."""
    links = [_box("Base", 1.0, (0.2, 0.2, 0.2)), _rod("Link1", 1.0, 1.0, "-z"), _rod("Link2", 1.0, 1.0, "-z")]
    joints = [
        ("joint1", "Base", "Link1", dict(kind="revolute", axis=(0.0, 1.0, 0.0))),
        ("joint2", "Link1", "Link2", dict(kind="revolute", origin_xyz=(0.0, 0.0, -1.0), axis=(0.0, 1.0, 0.0))),
    ]
    return FloatingBaseModel.from_named("double_pendulum", links, joints)


def human3() -> FloatingBaseModel:
    """Planar three-link human analogue: a stance leg as base, a swing leg and an upper body.

    Link names mark the end-effectors: ``LeftFoot`` (base, sole at its
    origin), ``RightFoot`` (sole at its far end) and ``RightHand`` (hand at
    the top of the upper body).
    """
    links = [
        _rod("LeftFoot", 10.0, 0.9, "z", radius=0.06),
        _rod("RightFoot", 10.0, 0.9, "-z", radius=0.06),
        _rod("RightHand", 40.0, 0.8, "z", radius=0.15),
    ]
    hip = (0.0, -0.1, 0.9)
    joints = [
        ("jRightHip", "LeftFoot", "RightFoot", dict(kind="revolute", origin_xyz=hip, axis=(0.0, 1.0, 0.0))),
        ("jTorso", "LeftFoot", "RightHand", dict(kind="revolute", origin_xyz=hip, axis=(0.0, 1.0, 0.0))),
    ]
    return FloatingBaseModel.from_named("human3", links, joints)


HUMAN3_SOLES = {"LeftFoot": np.zeros(3), "RightFoot": np.array([0.0, 0.0, -0.9])}
HUMAN3_HAND = np.array([0.0, 0.0, 0.8])


def chain5() -> FloatingBaseModel:
    """Five-link floating chain with mixed joint axes."""
    links = [_box("Base", 2.0, (0.2, 0.15, 0.1))]
    masses = [1.0, 0.8, 0.6, 0.4]
    axes = [(0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 1.0)]
    joints = []
    prev = "Base"
    for k, (m, ax) in enumerate(zip(masses, axes)):
        name = f"Link{k + 1}"
        links.append(_rod(name, m, 0.3, "x", radius=0.03))
        origin = (0.1, 0.0, 0.0) if k == 0 else (0.3, 0.0, 0.0)
        rpy = (0.0, 0.0, 0.0) if k == 0 else (0.1 * k, -0.2, 0.3)
        joints.append(
            (f"joint{k + 1}", prev, name, dict(kind="revolute", origin_xyz=origin, origin_rpy=rpy, axis=ax, lower=-3.0, upper=3.0))
        )
        prev = name
    return FloatingBaseModel.from_named("chain5", links, joints)


def twin_arm() -> FloatingBaseModel:
    """Planar two-link arm on a base box, links 0.5 m along x, hinges about y."""
    links = [_box("Base", 2.0, (0.2, 0.2, 0.2)), _rod("Upper", 1.0, 0.5, "x"), _rod("Fore", 0.8, 0.5, "x")]
    joints = [
        ("shoulder", "Base", "Upper", dict(kind="revolute", axis=(0.0, 1.0, 0.0))),
        ("elbow", "Upper", "Fore", dict(kind="revolute", origin_xyz=(0.5, 0.0, 0.0), axis=(0.0, 1.0, 0.0))),
    ]
    return FloatingBaseModel.from_named("twin_arm", links, joints)


TWIN_ARM_TIP = np.array([0.5, 0.0, 0.0])


def serial_chain(n_links: int = 8, link_length: float = 0.25, total_mass: float = 8.0) -> FloatingBaseModel:
    """Floating serial chain of ``n_links`` rods with joint axes cycling through y, x and z."""
    if n_links < 2:
        raise ValueError("a chain needs at least two links")
    per = total_mass / n_links
    axes = [(0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0)]
    links = [_box("Base", per, (0.2, 0.2, 0.1))]
    joints = []
    prev = "Base"
    for k in range(1, n_links):
        name = f"Link{k}"
        links.append(_rod(name, per, link_length, "z", radius=0.05))
        origin = (0.0, 0.0, 0.05) if k == 1 else (0.0, 0.0, link_length)
        joints.append((f"joint{k}", prev, name, dict(kind="revolute", origin_xyz=origin, axis=axes[(k - 1) % 3])))
        prev = name
    return FloatingBaseModel.from_named(f"chain{n_links}", links, joints)


BUILDERS = {"double_pendulum": double_pendulum, "human3": human3, "chain5": chain5, "twin_arm": twin_arm}

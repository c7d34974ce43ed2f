"""Kinematic-tree models: link and joint records, validation and shape inertia.

A model is a tree of links rooted at a floating base link (index 0). Links
are stored in topological order and joint ``k`` always connects link
``joints[k].parent`` to link ``k + 1``. Only revolute (1 dof) and fixed
joints exist; multi-dof anatomical joints are chains of revolute joints
through massless intermediate links.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .spatial import Pose, SpatialInertia, axis_angle, rpy_to_matrix


class TopologyError(ValueError):
    """The link/joint graph is not a single rooted tree."""


class InvalidDimension(ValueError):
    """A shape dimension or mass is not physically admissible."""


SHAPE_KINDS = ("box", "cylinder", "sphere")


@dataclass(frozen=True)
class Shape:
    """Primitive solid used to synthesize inertia.

    ``box`` dims are (width, height, depth), ``cylinder`` dims are
    (radius, height) and ``sphere`` dims are (radius,).
    """

    kind: str
    dims: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise InvalidDimension(f"unknown shape kind {self.kind!r}")
        expected = {"box": 3, "cylinder": 2, "sphere": 1}[self.kind]
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != expected:
            raise InvalidDimension(f"{self.kind} needs {expected} dimensions, got {len(dims)}")
        if any(not np.isfinite(d) or d <= 0.0 for d in dims):
            raise InvalidDimension(f"{self.kind} dimensions must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)


def principal_moments(shape: Shape, mass: float) -> np.ndarray:
    """Diagonal inertia of a homogeneous solid about its centre.

    The cylinder's symmetry axis is the shape frame's y axis.
    """
    if mass < 0.0:
        raise InvalidDimension(f"mass must be non-negative, got {mass}")
    m = float(mass)
    if shape.kind == "box":
        a, b, c = shape.dims
        return np.array([m * (a * a + b * b) / 12.0, m * (b * b + c * c) / 12.0, m * (c * c + a * a) / 12.0])
    if shape.kind == "cylinder":
        r, h = shape.dims
        side = m * (3.0 * r * r + h * h) / 12.0
        return np.array([side, 0.5 * m * r * r, side])
    (r,) = shape.dims
    return np.full(3, 0.4 * m * r * r)


def inertia_from_shape(shape: Shape, mass: float, center=None, orientation=None) -> SpatialInertia:
    """Spatial inertia of a homogeneous solid.

    Args:
        shape: primitive solid.
        mass: kg, non-negative.
        center: position of the geometric centre in link coordinates (default origin).
        orientation: rotation from shape axes to link axes (default identity).
    """
    moments = np.diag(principal_moments(shape, mass))
    if orientation is not None:
        R = np.asarray(orientation, dtype=float)
        moments = R @ moments @ R.T
    com = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    return SpatialInertia(mass, com, moments)


@dataclass(frozen=True)
class LinkSpec:
    name: str
    inertia: SpatialInertia = field(default_factory=SpatialInertia)
    shape: Shape | None = None

    @property
    def mass(self) -> float:
        return self.inertia.mass


@dataclass(frozen=True)
class JointSpec:
    """Joint placing the child frame at ``origin * Rot(axis, s)`` in the parent frame."""

    name: str
    kind: str
    parent: int
    child: int
    origin_xyz: tuple[float, float, float] = (0.0, 0.0, 0.0)
    origin_rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if self.kind not in ("revolute", "fixed"):
            raise ValueError(f"joint {self.name}: unsupported kind {self.kind!r}")
        object.__setattr__(self, "origin_xyz", tuple(float(x) for x in self.origin_xyz))
        object.__setattr__(self, "origin_rpy", tuple(float(x) for x in self.origin_rpy))
        axis = np.asarray(self.axis, dtype=float)
        if self.kind == "revolute":
            norm = np.linalg.norm(axis)
            if norm < 1e-12:
                raise ValueError(f"joint {self.name}: zero axis")
            axis = axis / norm
        object.__setattr__(self, "axis", tuple(float(x) for x in axis))
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        if self.lower > self.upper:
            raise ValueError(f"joint {self.name}: lower limit exceeds upper limit")

    @property
    def dof(self) -> int:
        return 1 if self.kind == "revolute" else 0

    @cached_property
    def origin(self) -> Pose:
        return Pose(rpy_to_matrix(self.origin_rpy), np.array(self.origin_xyz))

    @cached_property
    def motion_subspace(self) -> np.ndarray:
        S = np.zeros((6, self.dof))
        if self.dof:
            S[3:, 0] = self.axis
        return S

    def transform(self, s: float = 0.0) -> Pose:
        """Pose of the child frame in the parent frame at joint position ``s``."""
        if self.kind == "fixed":
            return self.origin
        o = self.origin
        return Pose(o.rotation @ axis_angle(self.axis, s), o.position)


_COMPOSITE_SUFFIX = re.compile(r"^(?P<base>.+)_rot(?P<axis>[xyz])$")


@dataclass(frozen=True)
class FloatingBaseModel:
    """Floating-base kinematic tree in topological order."""

    name: str
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "joints", tuple(self.joints))
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise TopologyError("duplicate link names")
        jnames = [j.name for j in self.joints]
        if len(set(jnames)) != len(jnames):
            raise TopologyError("duplicate joint names")
        if len(self.joints) != len(self.links) - 1:
            raise TopologyError(
                f"a tree with {len(self.links)} links needs {len(self.links) - 1} joints, got {len(self.joints)}"
            )
        for k, j in enumerate(self.joints):
            if j.child == j.parent:
                raise TopologyError(f"joint {j.name} connects link {j.parent} to itself")
            if j.child != k + 1:
                raise TopologyError(f"joint {j.name} must have child index {k + 1}, got {j.child}")
            if not 0 <= j.parent < j.child:
                raise TopologyError(f"joint {j.name}: parent index {j.parent} must precede child {j.child}")

    @staticmethod
    def from_named(name: str, links: Sequence[LinkSpec], joints: Sequence[tuple[str, str, str, dict]]):
        """Build from ``(joint_name, parent_name, child_name, kwargs)`` records in any order."""
        return _assemble(name, list(links), [(jn, p, c, kw, None) for jn, p, c, kw in joints])

    @property
    def n_links(self) -> int:
        return len(self.links)

    @cached_property
    def n(self) -> int:
        return sum(j.dof for j in self.joints)

    @property
    def nv(self) -> int:
        return self.n + 6

    @cached_property
    def parents(self) -> np.ndarray:
        """Parent link index per link (-1 for the base)."""
        return np.array([-1] + [j.parent for j in self.joints])

    @cached_property
    def dof_index(self) -> tuple[int, ...]:
        """Joint-vector index of each joint (-1 for fixed joints)."""
        out, k = [], 0
        for j in self.joints:
            if j.dof:
                out.append(k)
                k += 1
            else:
                out.append(-1)
        return tuple(out)

    @cached_property
    def link_names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.links)

    @cached_property
    def dof_names(self) -> tuple[str, ...]:
        return tuple(j.name for j in self.joints if j.dof)

    def link_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            if not 0 <= name_or_index < self.n_links:
                raise KeyError(f"link index {name_or_index} out of range")
            return int(name_or_index)
        try:
            return self.link_names.index(name_or_index)
        except ValueError:
            raise KeyError(f"unknown link {name_or_index!r}") from None

    def dof_of(self, joint_name: str) -> int:
        try:
            return self.dof_names.index(joint_name)
        except ValueError:
            raise KeyError(f"unknown joint {joint_name!r}") from None

    @cached_property
    def total_mass(self) -> float:
        return float(sum(l.mass for l in self.links))

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids = [[] for _ in self.links]
        for j in self.joints:
            kids[j.parent].append(j.child)
        return tuple(tuple(k) for k in kids)

    def support(self, link: int) -> list[int]:
        """Joint indices on the path from the base to ``link``."""
        path = []
        i = link
        while i > 0:
            path.append(i - 1)
            i = self.joints[i - 1].parent
        return path[::-1]

    @cached_property
    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.lower for j in self.joints if j.dof])
        hi = np.array([j.upper for j in self.joints if j.dof])
        return lo, hi

    @cached_property
    def composite_joints(self) -> dict[str, list[int]]:
        """Group dof indices of chained ``<name>_rot{x,y,z}`` joints under ``<name>``."""
        groups: dict[str, list[int]] = {}
        for k, jname in enumerate(self.dof_names):
            m = _COMPOSITE_SUFFIX.match(jname)
            key = m.group("base") if m else jname
            groups.setdefault(key, []).append(k)
        return groups


def _assemble(name, links, records):
    """Order links depth-first from the unique root and renumber joints.

    ``records`` holds ``(joint_name, parent_name, child_name, kwargs, line)``.
    """
    by_name = {}
    for l in links:
        if l.name in by_name:
            raise TopologyError(f"duplicate link name {l.name!r}")
        by_name[l.name] = l
    seen_joints = set()
    parent_of: dict[str, tuple] = {}
    kids: dict[str, list[tuple]] = {l.name: [] for l in links}
    for rec in records:
        jn, p, c, _, line = rec
        where = f" (line {line})" if line else ""
        if jn in seen_joints:
            raise TopologyError(f"duplicate joint name {jn!r}{where}")
        seen_joints.add(jn)
        for ln in (p, c):
            if ln not in by_name:
                raise TopologyError(f"joint {jn!r} references unknown link {ln!r}{where}")
        if p == c:
            raise TopologyError(f"joint {jn!r} has child equal to parent{where}")
        if c in parent_of:
            raise TopologyError(f"link {c!r} has two parent joints (non-tree edge at {jn!r}){where}")
        parent_of[c] = rec
        kids[p].append(rec)
    roots = [l.name for l in links if l.name not in parent_of]
    if len(roots) != 1:
        raise TopologyError(f"expected exactly one root link, found {len(roots)}: {roots}")
    order = []
    stack = [roots[0]]
    while stack:
        ln = stack.pop()
        order.append(ln)
        stack.extend(rec[2] for rec in reversed(kids[ln]))
    if len(order) != len(links):
        missing = sorted(set(by_name) - set(order))
        raise TopologyError(f"links unreachable from root (loop): {missing}")
    index = {ln: i for i, ln in enumerate(order)}
    joints = []
    for ln in order[1:]:
        jn, p, c, kw, _ = parent_of[ln]
        joints.append(JointSpec(name=jn, parent=index[p], child=index[c], **kw))
    return FloatingBaseModel(name, tuple(by_name[ln] for ln in order), tuple(joints))


# --- human template ---------------------------------------------------------

# Table of link geometry and mass fractions. Fractions are used verbatim; they
# sum to 1.0135 and the left toe (0.0015) differs from the right toe (0.015).
HUMAN_MASS_FRACTIONS: dict[str, tuple[str, float]] = {
    "Pelvis": ("box", 0.08),
    "L5": ("box", 0.102),
    "L3": ("box", 0.102),
    "T12": ("box", 0.102),
    "T8": ("box", 0.04),
    "Neck": ("cylinder", 0.012),
    "Head": ("sphere", 0.036),
    "RightShoulder": ("cylinder", 0.031),
    "RightUpperArm": ("cylinder", 0.030),
    "RightForeArm": ("cylinder", 0.020),
    "RightHand": ("box", 0.006),
    "LeftShoulder": ("cylinder", 0.031),
    "LeftUpperArm": ("cylinder", 0.030),
    "LeftForeArm": ("cylinder", 0.020),
    "LeftHand": ("box", 0.006),
    "RightUpperLeg": ("cylinder", 0.125),
    "RightLowerLeg": ("cylinder", 0.0365),
    "RightFoot": ("box", 0.013),
    "RightToe": ("box", 0.015),
    "LeftUpperLeg": ("cylinder", 0.125),
    "LeftLowerLeg": ("cylinder", 0.0365),
    "LeftFoot": ("box", 0.013),
    "LeftToe": ("box", 0.0015),
}

# joint name -> (parent, child, full axes, reduced axes)
HUMAN_JOINTS: dict[str, tuple[str, str, str, str]] = {
    "jL5S1": ("Pelvis", "L5", "xyz", "xy"),
    "jL4L3": ("L5", "L3", "xyz", "xy"),
    "jL1T12": ("L3", "T12", "xyz", "xy"),
    "jT9T8": ("T12", "T8", "xyz", "xyz"),
    "jT1C7": ("T8", "Neck", "xyz", "xyz"),
    "jC1Head": ("Neck", "Head", "xyz", "xy"),
    "jRightC7Shoulder": ("T8", "RightShoulder", "xyz", "x"),
    "jRightShoulder": ("RightShoulder", "RightUpperArm", "xyz", "xyz"),
    "jRightElbow": ("RightUpperArm", "RightForeArm", "xyz", "yz"),
    "jRightWrist": ("RightForeArm", "RightHand", "xyz", "xz"),
    "jLeftC7Shoulder": ("T8", "LeftShoulder", "xyz", "x"),
    "jLeftShoulder": ("LeftShoulder", "LeftUpperArm", "xyz", "xyz"),
    "jLeftElbow": ("LeftUpperArm", "LeftForeArm", "xyz", "yz"),
    "jLeftWrist": ("LeftForeArm", "LeftHand", "xyz", "xz"),
    "jRightHip": ("Pelvis", "RightUpperLeg", "xyz", "xyz"),
    "jRightKnee": ("RightUpperLeg", "RightLowerLeg", "xyz", "yz"),
    "jRightAnkle": ("RightLowerLeg", "RightFoot", "xyz", "xyz"),
    "jRightBallFoot": ("RightFoot", "RightToe", "xyz", "y"),
    "jLeftHip": ("Pelvis", "LeftUpperLeg", "xyz", "xyz"),
    "jLeftKnee": ("LeftUpperLeg", "LeftLowerLeg", "xyz", "yz"),
    "jLeftAnkle": ("LeftLowerLeg", "LeftFoot", "xyz", "xyz"),
    "jLeftBallFoot": ("LeftFoot", "LeftToe", "xyz", "y"),
}

# Default segment dimensions (m) for a ~1.75 m adult; box (width, height, depth),
# cylinder (radius, height), sphere (radius,).
DEFAULT_SEGMENT_DIMS: dict[str, tuple[float, ...]] = {
    "Pelvis": (0.30, 0.12, 0.20),
    "L5": (0.26, 0.10, 0.18),
    "L3": (0.26, 0.10, 0.18),
    "T12": (0.28, 0.10, 0.18),
    "T8": (0.34, 0.20, 0.20),
    "Neck": (0.05, 0.10),
    "Head": (0.10,),
    "RightShoulder": (0.04, 0.15),
    "RightUpperArm": (0.045, 0.28),
    "RightForeArm": (0.04, 0.25),
    "RightHand": (0.18, 0.03, 0.09),
    "LeftShoulder": (0.04, 0.15),
    "LeftUpperArm": (0.045, 0.28),
    "LeftForeArm": (0.04, 0.25),
    "LeftHand": (0.18, 0.03, 0.09),
    "RightUpperLeg": (0.07, 0.45),
    "RightLowerLeg": (0.05, 0.43),
    "RightFoot": (0.09, 0.07, 0.20),
    "RightToe": (0.09, 0.03, 0.06),
    "LeftUpperLeg": (0.07, 0.45),
    "LeftLowerLeg": (0.05, 0.43),
    "LeftFoot": (0.09, 0.07, 0.20),
    "LeftToe": (0.09, 0.03, 0.06),
}

_UNIT = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0]), "z": np.array([0.0, 0.0, 1.0])}
# rotation taking the cylinder's y symmetry axis onto the link z axis
_Y_TO_Z = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def _segment_direction(link: str) -> np.ndarray:
    if link in ("Pelvis", "L5", "L3", "T12", "T8", "Neck", "Head"):
        return _UNIT["z"]
    if "Leg" in link:
        return -_UNIT["z"]
    if link.endswith(("Foot", "Toe")):
        return _UNIT["x"]
    side = -1.0 if link.startswith("Right") else 1.0
    return side * _UNIT["y"]


def _segment_length(link: str, shape: Shape) -> float:
    direction = _segment_direction(link)
    if shape.kind == "sphere":
        return 2.0 * shape.dims[0]
    if shape.kind == "cylinder":
        return shape.dims[1]
    width, height, depth = shape.dims
    if direction[2] != 0.0:
        return height
    if direction[1] != 0.0:
        return width
    return depth


def build_human_template(
    total_mass: float,
    segment_dims: dict[str, Sequence[float]] | None = None,
    reduced: bool = False,
) -> FloatingBaseModel:
    """23-link human model with shape-based inertias.

    Link frames sit at the proximal joint of each segment in a T-pose (x
    forward, y left, z up). Each anatomical joint becomes up to three chained
    revolute joints ``<joint>_rot{x,y,z}`` through massless links.
    """
    if not np.isfinite(total_mass) or total_mass <= 0.0:
        raise InvalidDimension(f"total_mass must be positive, got {total_mass}")
    dims = dict(DEFAULT_SEGMENT_DIMS)
    if segment_dims:
        unknown = set(segment_dims) - set(dims)
        if unknown:
            raise InvalidDimension(f"unknown segments {sorted(unknown)}")
        dims.update({k: tuple(v) for k, v in segment_dims.items()})
    shapes = {name: Shape(kind, dims[name]) for name, (kind, _) in HUMAN_MASS_FRACTIONS.items()}
    lengths = {name: _segment_length(name, shapes[name]) for name in shapes}

    def attach(parent: str, child: str) -> np.ndarray:
        if child in ("RightUpperLeg", "LeftUpperLeg"):
            w, h, _ = shapes["Pelvis"].dims
            side = -1.0 if child.startswith("Right") else 1.0
            return np.array([0.0, side * 0.3 * w, -0.5 * h])
        if child in ("RightShoulder", "LeftShoulder"):
            side = -1.0 if child.startswith("Right") else 1.0
            return np.array([0.0, side * 0.02, 0.85 * lengths["T8"]])
        if child in ("RightFoot", "LeftFoot"):
            return -lengths[parent] * _UNIT["z"]
        if child in ("RightToe", "LeftToe"):
            _, h, d = shapes[parent].dims
            return np.array([0.75 * d, 0.0, -h])
        if parent == "Pelvis":
            return 0.5 * lengths["Pelvis"] * _UNIT["z"]
        return lengths[parent] * _segment_direction(parent)

    def link_inertia(name: str) -> SpatialInertia:
        shape = shapes[name]
        mass = HUMAN_MASS_FRACTIONS[name][1] * total_mass
        direction = _segment_direction(name)
        length = lengths[name]
        if name == "Pelvis":
            center = np.zeros(3)
        elif name.endswith("Foot"):
            center = np.array([0.35 * shape.dims[2], 0.0, -0.5 * shape.dims[1]])
        elif name.endswith("Toe"):
            center = np.array([0.5 * shape.dims[2], 0.0, -0.5 * shape.dims[1]])
        else:
            center = 0.5 * length * direction
        orientation = _Y_TO_Z if shape.kind == "cylinder" and direction[2] != 0.0 else None
        return inertia_from_shape(shape, mass, center, orientation)

    links = [LinkSpec(name, link_inertia(name), shapes[name]) for name in HUMAN_MASS_FRACTIONS]
    records = []
    for jname, (parent, child, full_axes, reduced_axes) in HUMAN_JOINTS.items():
        axes = reduced_axes if reduced else full_axes
        chain = [parent] + [f"{child}_f{i + 1}" for i in range(len(axes) - 1)] + [child]
        for i, ax in enumerate(axes):
            if i < len(axes) - 1:
                links.append(LinkSpec(chain[i + 1]))
            xyz = tuple(attach(parent, child)) if i == 0 else (0.0, 0.0, 0.0)
            kw = dict(kind="revolute", origin_xyz=xyz, axis=tuple(_UNIT[ax]), lower=-np.pi, upper=np.pi)
            records.append((f"{jname}_rot{ax}", chain[i], chain[i + 1], kw, None))
    name = "human_reduced" if reduced else "human"
    return _assemble(name, links, records)


def human_mass_residual() -> float:
    """How far the printed mass fractions are from summing to one."""
    return float(sum(f for _, f in HUMAN_MASS_FRACTIONS.values()) - 1.0)

"""Spatial algebra on 3D rotations, poses and 6D motion/force vectors.

Every 6D vector is ordered linear part first, angular part second:
motion vectors are ``(v, w)`` and force vectors are ``(f, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

ORTHONORMAL_TOL = 1e-7


class NotAntisymmetric(ValueError):
    """Raised when ``vee`` receives a matrix with a large symmetric part."""


def skew(v) -> np.ndarray:
    """Return the matrix ``S`` with ``S @ u == cross(v, u)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(A, tol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`skew`.

    Raises:
        NotAntisymmetric: if ``||A + A^T||`` exceeds ``tol``.
    """
    A = np.asarray(A, dtype=float)
    residual = np.linalg.norm(A + A.T)
    if residual > tol:
        raise NotAntisymmetric(f"symmetric residual {residual:.3e} exceeds {tol:.1e}")
    return np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]]) * 0.5


def antisymmetric_part(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return 0.5 * (A - A.T)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""
    k = np.asarray(axis, dtype=float)
    K = skew(k)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def exp_so3(rotvec) -> np.ndarray:
    """Exponential map of a rotation vector."""
    return _ScipyRotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix()


def rpy_to_matrix(rpy) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw, ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
    return _ScipyRotation.from_euler("xyz", np.asarray(rpy, dtype=float)).as_matrix()


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return bool(np.linalg.norm(R.T @ R - np.eye(3)) <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def project_to_so3(R) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def reorthonormalize(R, threshold: float = ORTHONORMAL_TOL) -> np.ndarray:
    """Project ``R`` back onto SO(3) only when it has drifted past ``threshold``."""
    R = np.asarray(R, dtype=float)
    if np.linalg.norm(R.T @ R - np.eye(3)) > threshold:
        return project_to_so3(R)
    return R


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``(R, p)`` of a frame B relative to a frame A.

    ``rotation`` maps B coordinates to A coordinates and ``position`` is the
    origin of B expressed in A.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.position + self.position)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.position)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.position

    def homogeneous(self) -> np.ndarray:
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.position
        return H

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.position, other.position, atol=atol)
        )


def adjoint_motion(pose: Pose) -> np.ndarray:
    """Motion transform taking A coordinates to B coordinates.

    ``pose`` is B relative to A. With ``R = pose.rotation.T`` and ``o`` the
    origin of B in A the matrix is ``[[R, -R skew(o)], [0, R]]``.
    """
    R = pose.rotation.T
    X = np.zeros((6, 6))
    X[:3, :3] = R
    X[:3, 3:] = -R @ skew(pose.position)
    X[3:, 3:] = R
    return X


def adjoint_force(pose: Pose) -> np.ndarray:
    """Force transform taking A coordinates to B coordinates (dual of :func:`adjoint_motion`)."""
    R = pose.rotation.T
    X = np.zeros((6, 6))
    X[:3, :3] = R
    X[3:, :3] = -R @ skew(pose.position)
    X[3:, 3:] = R
    return X


def motion_to_parent(pose: Pose) -> np.ndarray:
    """Motion transform from child coordinates to parent coordinates, ``[[R, skew(p) R], [0, R]]``."""
    R, p = pose.rotation, pose.position
    X = np.zeros((6, 6))
    X[:3, :3] = R
    X[:3, 3:] = skew(p) @ R
    X[3:, 3:] = R
    return X


def force_to_parent(pose: Pose) -> np.ndarray:
    """Force transform from child coordinates to parent coordinates, ``[[R, 0], [skew(p) R, R]]``."""
    R, p = pose.rotation, pose.position
    X = np.zeros((6, 6))
    X[:3, :3] = R
    X[3:, :3] = skew(p) @ R
    X[3:, 3:] = R
    return X


def motion_cross(v) -> np.ndarray:
    """Matrix of ``v x`` acting on motion vectors."""
    v = np.asarray(v, dtype=float)
    Sw = skew(v[3:])
    X = np.zeros((6, 6))
    X[:3, :3] = Sw
    X[:3, 3:] = skew(v[:3])
    X[3:, 3:] = Sw
    return X


def force_cross_dual(v) -> np.ndarray:
    """Matrix of ``v x*`` acting on force vectors, equal to ``-motion_cross(v).T``."""
    v = np.asarray(v, dtype=float)
    Sw = skew(v[3:])
    X = np.zeros((6, 6))
    X[:3, :3] = Sw
    X[3:, :3] = skew(v[:3])
    X[3:, 3:] = Sw
    return X


@dataclass(frozen=True)
class SpatialInertia:
    """Rigid-body inertia about a link frame origin.

    ``com`` is the centre of mass in link coordinates and ``inertia_com`` the
    rotational inertia about the centre of mass, in link-aligned axes.
    """

    mass: float = 0.0
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inertia_com: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        object.__setattr__(self, "inertia_com", np.asarray(self.inertia_com, dtype=float).reshape(3, 3))

    def matrix(self) -> np.ndarray:
        m = self.mass
        C = skew(self.com)
        I = np.zeros((6, 6))
        I[:3, :3] = m * np.eye(3)
        I[:3, 3:] = -m * C
        I[3:, :3] = m * C
        I[3:, 3:] = self.inertia_com - m * C @ C
        return I

    def __add__(self, other: "SpatialInertia") -> "SpatialInertia":
        m = self.mass + other.mass
        if m == 0.0:
            return SpatialInertia()
        c = (self.mass * self.com + other.mass * other.com) / m
        total = np.zeros((3, 3))
        for part in (self, other):
            d = skew(part.com - c)
            total += part.inertia_com - part.mass * d @ d
        return SpatialInertia(m, c, total)


def rigid_body_newton_euler(inertia, v, a) -> np.ndarray:
    """Net wrench ``I a + v x* (I v)`` on a rigid body."""
    I = inertia.matrix() if isinstance(inertia, SpatialInertia) else np.asarray(inertia, dtype=float)
    v = np.asarray(v, dtype=float)
    return I @ np.asarray(a, dtype=float) + force_cross_dual(v) @ (I @ v)


def rotation_distance(R_desired, R_actual) -> np.ndarray:
    """``vee`` of the antisymmetric part of ``R_desired^T R_actual``.

    Equals ``sin(angle) * axis`` of the relative rotation, so it is only a
    faithful log for small relative angles.
    """
    E = np.asarray(R_desired, dtype=float).T @ np.asarray(R_actual, dtype=float)
    return vee(antisymmetric_part(E))


def rotation_distance_world(R_desired, R_actual) -> np.ndarray:
    """Same measure with the relative rotation taken on the world side, ``R_actual R_desired^T``."""
    E = np.asarray(R_actual, dtype=float) @ np.asarray(R_desired, dtype=float).T
    return vee(antisymmetric_part(E))

"""Forward kinematics, frame Jacobians and inverse kinematics.

Velocities use the mixed floating-base representation
``nu = (base linear velocity, base angular velocity, joint velocities)`` with
both base parts expressed in the world frame. Frame velocities returned by
:func:`frame_jacobian` are likewise world-aligned, taken at the frame point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .model import FloatingBaseModel
from .spatial import Pose, antisymmetric_part, exp_so3, reorthonormalize, skew, vee


class SingularJacobian(np.linalg.LinAlgError):
    """The task Jacobian lost rank and no damping was allowed."""


class MaxIterations(RuntimeError):
    """Instantaneous IK stopped before converging (only raised on request)."""


@dataclass(frozen=True)
class Configuration:
    """Floating-base configuration: base pose plus joint positions."""

    base: Pose
    joints: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=float).reshape(-1))

    @staticmethod
    def neutral(model: FloatingBaseModel, base: Pose | None = None) -> "Configuration":
        return Configuration(base or Pose(), np.zeros(model.n))

    def with_joints(self, s) -> "Configuration":
        return replace(self, joints=np.asarray(s, dtype=float))


def random_configuration(model: FloatingBaseModel, rng: np.random.Generator, scale: float = 1.0) -> Configuration:
    """Random base pose and joint positions, handy for property tests and demos."""
    base = Pose(exp_so3(rng.normal(size=3) * scale), rng.normal(size=3) * scale)
    return Configuration(base, rng.uniform(-np.pi, np.pi, model.n) * scale)


def integrate(model: FloatingBaseModel, q: Configuration, nu, dt: float) -> Configuration:
    """Advance ``q`` by ``nu * dt`` using the rotation exponential for the base."""
    nu = np.asarray(nu, dtype=float)
    R = reorthonormalize(exp_so3(nu[3:6] * dt) @ q.base.rotation)
    p = q.base.position + nu[:3] * dt
    return Configuration(Pose(R, p), q.joints + nu[6:] * dt)


def forward_kinematics(model: FloatingBaseModel, q: Configuration) -> list[Pose]:
    """World pose of every link."""
    poses = [q.base]
    for k, joint in enumerate(model.joints):
        idx = model.dof_index[k]
        s = q.joints[idx] if idx >= 0 else 0.0
        poses.append(poses[joint.parent] @ joint.transform(s))
    return poses


def joint_axes_world(model: FloatingBaseModel, poses: Sequence[Pose]) -> np.ndarray:
    """World direction of each joint axis (rows), zero for fixed joints."""
    axes = np.zeros((len(model.joints), 3))
    for k, joint in enumerate(model.joints):
        if joint.dof:
            axes[k] = poses[joint.child].rotation @ np.asarray(joint.axis)
    return axes


def frame_jacobian(
    model: FloatingBaseModel,
    q: Configuration,
    link,
    offset=None,
    poses: Sequence[Pose] | None = None,
) -> np.ndarray:
    """6 x (n+6) Jacobian mapping ``nu`` to the world-aligned velocity of a frame.

    The frame sits on ``link`` at ``offset`` (link coordinates, default the
    link origin). Rows are (linear velocity of the frame point, angular velocity).
    """
    i = model.link_index(link)
    poses = forward_kinematics(model, q) if poses is None else poses
    point = poses[i].apply(np.zeros(3) if offset is None else offset)
    J = np.zeros((6, model.nv))
    J[:3, :3] = np.eye(3)
    J[:3, 3:6] = -skew(point - q.base.position)
    J[3:, 3:6] = np.eye(3)
    for k in model.support(i):
        joint = model.joints[k]
        if not joint.dof:
            continue
        col = 6 + model.dof_index[k]
        axis = poses[joint.child].rotation @ np.asarray(joint.axis)
        J[:3, col] = np.cross(axis, point - poses[joint.child].position)
        J[3:, col] = axis
    return J


def link_velocities(model: FloatingBaseModel, q: Configuration, nu, poses=None):
    """World linear velocity of each link origin and world angular velocity of each link."""
    nu = np.asarray(nu, dtype=float)
    poses = forward_kinematics(model, q) if poses is None else poses
    lin = np.zeros((model.n_links, 3))
    ang = np.zeros((model.n_links, 3))
    lin[0], ang[0] = nu[:3], nu[3:6]
    for k, joint in enumerate(model.joints):
        c, p = joint.child, joint.parent
        lin[c] = lin[p] + np.cross(ang[p], poses[c].position - poses[p].position)
        ang[c] = ang[p]
        if joint.dof:
            ang[c] = ang[c] + poses[c].rotation @ np.asarray(joint.axis) * nu[6 + model.dof_index[k]]
    return lin, ang


def frame_bias_acceleration(model: FloatingBaseModel, q: Configuration, nu, link, offset=None, poses=None) -> np.ndarray:
    """``Jdot @ nu``: frame acceleration produced by ``nu`` when ``nu_dot = 0``.

    Computed by a world-frame recursion, not by differencing the Jacobian.
    """
    nu = np.asarray(nu, dtype=float)
    poses = forward_kinematics(model, q) if poses is None else poses
    target = model.link_index(link)
    lin, ang = link_velocities(model, q, nu, poses)
    acc = np.zeros((model.n_links, 3))
    angacc = np.zeros((model.n_links, 3))
    for k, joint in enumerate(model.joints):
        c, p = joint.child, joint.parent
        r = poses[c].position - poses[p].position
        acc[c] = acc[p] + np.cross(angacc[p], r) + np.cross(ang[p], lin[c] - lin[p])
        angacc[c] = angacc[p]
        if joint.dof:
            axis = poses[c].rotation @ np.asarray(joint.axis)
            angacc[c] = angacc[c] + np.cross(ang[p], axis) * nu[6 + model.dof_index[k]]
    r = poses[target].rotation @ (np.zeros(3) if offset is None else np.asarray(offset, dtype=float))
    w = ang[target]
    out = np.empty(6)
    out[:3] = acc[target] + np.cross(angacc[target], r) + np.cross(w, np.cross(w, r))
    out[3:] = angacc[target]
    return out


# --- targets and residuals --------------------------------------------------


@dataclass(frozen=True)
class LinkTarget:
    """Desired pose and velocity of one link. ``None`` drops that part of the task."""

    link: str
    position: np.ndarray | None = None
    rotation: np.ndarray | None = None
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    weight_position: float = 1.0
    weight_orientation: float = 1.0

    @property
    def rows(self) -> int:
        return 3 * ((self.position is not None) + (self.rotation is not None))


TargetSet = Sequence[LinkTarget]


def targets_from_configuration(model, q, links, position=True, orientation=True) -> list[LinkTarget]:
    """Targets that are exactly met at ``q``."""
    poses = forward_kinematics(model, q)
    out = []
    for name in links:
        P = poses[model.link_index(name)]
        out.append(LinkTarget(name, P.position if position else None, P.rotation if orientation else None))
    return out


def orientation_error(R_desired, R_actual) -> np.ndarray:
    """World-side orientation error ``vee(sk(R_d R^T))``.

    Its norm equals that of :func:`floatbase.spatial.rotation_distance` and it
    is the negative of that vector rotated into world axes.
    """
    return vee(antisymmetric_part(np.asarray(R_desired) @ np.asarray(R_actual).T))


def _orientation_error_rate(R_desired, R_actual) -> np.ndarray:
    """Derivative of :func:`orientation_error` w.r.t. a world-frame rotation increment."""
    E = np.asarray(R_desired) @ np.asarray(R_actual).T
    return -0.5 * (np.trace(E) * np.eye(3) - E.T)


def pose_residuals(model: FloatingBaseModel, targets: TargetSet, q: Configuration, poses=None) -> np.ndarray:
    """Stacked position errors ``p_d - p`` and orientation errors per target."""
    poses = forward_kinematics(model, q) if poses is None else poses
    parts = []
    for t in targets:
        P = poses[model.link_index(t.link)]
        if t.position is not None:
            parts.append(np.asarray(t.position, dtype=float) - P.position)
        if t.rotation is not None:
            parts.append(orientation_error(t.rotation, P.rotation))
    return np.concatenate(parts) if parts else np.zeros(0)


def task_jacobian(model, targets: TargetSet, q, poses=None) -> np.ndarray:
    """Rows of the frame Jacobians selected by the targets (velocity-level)."""
    poses = forward_kinematics(model, q) if poses is None else poses
    rows = []
    for t in targets:
        J = frame_jacobian(model, q, t.link, poses=poses)
        if t.position is not None:
            rows.append(J[:3])
        if t.rotation is not None:
            rows.append(J[3:])
    return np.vstack(rows) if rows else np.zeros((0, model.nv))


def _target_velocity(targets: TargetSet) -> np.ndarray:
    parts = []
    for t in targets:
        if t.position is not None:
            parts.append(np.asarray(t.linear_velocity, dtype=float))
        if t.rotation is not None:
            parts.append(np.asarray(t.angular_velocity, dtype=float))
    return np.concatenate(parts) if parts else np.zeros(0)


# --- dynamical IK -----------------------------------------------------------


@dataclass(frozen=True)
class IKState:
    """State of the velocity-level IK controller."""

    configuration: Configuration
    gains: np.ndarray
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float).reshape(-1)
        if gains.size == 0 or np.any(gains <= 0.0):
            raise ValueError("IK gains must be positive")
        object.__setattr__(self, "gains", gains)


def damped_pseudo_solve(J, b, damping: float = 1e-6, threshold: float = 1e-3, max_damping: float = 1e-2):
    """Minimum-norm damped least-squares solve of ``J x = b``.

    Damping grows smoothly from ``damping`` to ``max_damping`` as the smallest
    singular value falls below ``threshold``. With ``damping == 0`` a rank
    loss raises :class:`SingularJacobian`.
    """
    U, sig, Vt = np.linalg.svd(J, full_matrices=False)
    if damping == 0.0:
        if sig.size and sig[-1] < 1e-12 * max(sig[0], 1.0):
            raise SingularJacobian(f"smallest singular value {sig[-1]:.3e}")
        lam2 = 0.0
    else:
        lam2 = damping**2
        smin = sig[-1] if sig.size else 0.0
        if smin < threshold:
            lam2 += (1.0 - (smin / threshold) ** 2) * max_damping**2
    inv = np.divide(sig, sig * sig + lam2, out=np.zeros_like(sig), where=sig > 0.0)
    return Vt.T @ (inv * (U.T @ b))


def dynamical_ik_step(
    model: FloatingBaseModel,
    state: IKState,
    targets: TargetSet,
    dt: float = 1.0 / 60.0,
    damping: float = 1e-6,
    fixed_base: bool = False,
) -> IKState:
    """One step of ``J nu = v_target + K r`` followed by integration of ``q``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    q = state.configuration
    poses = forward_kinematics(model, q)
    r = pose_residuals(model, targets, q, poses)
    J = task_jacobian(model, targets, q, poses)
    gains = np.broadcast_to(state.gains, r.shape) if state.gains.size == 1 else state.gains
    b = _target_velocity(targets) + gains * r
    nu = np.zeros(model.nv)
    if fixed_base:
        nu[6:] = damped_pseudo_solve(J[:, 6:], b, damping)
    else:
        nu = damped_pseudo_solve(J, b, damping)
    q_next = integrate(model, q, nu, dt)
    return IKState(q_next, state.gains, pose_residuals(model, targets, q_next), nu)


# --- instantaneous IK -------------------------------------------------------


@dataclass(frozen=True)
class IKSolution:
    configuration: Configuration
    converged: bool
    iterations: int
    residual: float


def _weights(targets: TargetSet, k_pos: float, k_ori: float) -> np.ndarray:
    w = []
    for t in targets:
        if t.position is not None:
            w.extend([np.sqrt(k_pos * t.weight_position)] * 3)
        if t.rotation is not None:
            w.extend([np.sqrt(k_ori * t.weight_orientation)] * 3)
    return np.array(w)


def _residual_jacobian(model, targets, q, poses) -> np.ndarray:
    """Jacobian of :func:`pose_residuals` w.r.t. a ``nu``-shaped increment."""
    rows = []
    for t in targets:
        J = frame_jacobian(model, q, t.link, poses=poses)
        R = poses[model.link_index(t.link)].rotation
        if t.position is not None:
            rows.append(-J[:3])
        if t.rotation is not None:
            rows.append(_orientation_error_rate(t.rotation, R) @ J[3:])
    return np.vstack(rows)


def instantaneous_ik(
    model: FloatingBaseModel,
    targets: TargetSet,
    q0: Configuration,
    k_pos: float = 1.0,
    k_ori: float = 1.0,
    enforce_limits: bool = True,
    fixed_base: bool = False,
    max_iterations: int = 200,
    tol: float = 1e-20,
    raise_on_failure: bool = False,
) -> IKSolution:
    """Minimize ``sum K_pos |p_d - p|^2 + K_ori |e_ori|^2`` over the configuration.

    Levenberg-Marquardt steps on the manifold with a backtracking line search;
    joint limits are enforced by projection. The returned iterate never has a
    larger cost than ``q0``.
    """
    w = _weights(targets, k_pos, k_ori)
    lo, hi = model.joint_limits

    def project(q: Configuration) -> Configuration:
        return q.with_joints(np.clip(q.joints, lo, hi)) if enforce_limits else q

    def cost(q):
        r = w * pose_residuals(model, targets, q)
        return 0.5 * float(r @ r)

    q = project(q0)
    if cost(q) > cost(q0):
        q = q0
    f = cost(q)
    mu = 1e-6
    it = 0
    converged = f <= tol
    while not converged and it < max_iterations:
        it += 1
        poses = forward_kinematics(model, q)
        r = w * pose_residuals(model, targets, q, poses)
        A = w[:, None] * _residual_jacobian(model, targets, q, poses)
        if fixed_base:
            A[:, :6] = 0.0
        g = A.T @ r
        H = A.T @ A
        accepted = False
        for _ in range(30):
            step = -np.linalg.solve(H + mu * np.eye(model.nv), g)
            trial = project(integrate(model, q, step, 1.0))
            f_trial = cost(trial)
            if f_trial < f:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            break
        improvement = f - f_trial
        q, f = trial, f_trial
        mu = max(mu / 10.0, 1e-12)
        converged = f <= tol
        if improvement <= 1e-16 * max(f, 1.0) and not converged:
            break
    if not converged and raise_on_failure:
        raise MaxIterations(f"cost {f:.3e} after {it} iterations")
    return IKSolution(q, converged, it, float(np.sqrt(2.0 * f)))


def retarget_orientation(human_rotation, mapping) -> np.ndarray:
    """Robot-link target rotation ``R_human @ R_mapping``."""
    return np.asarray(human_rotation, dtype=float) @ np.asarray(mapping, dtype=float)

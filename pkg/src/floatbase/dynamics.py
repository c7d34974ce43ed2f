"""Floating-base dynamics: recursive Newton-Euler, equations of motion,
centroidal quantities and contact constraints.

Link velocities, accelerations and wrenches inside the recursion are
expressed in link coordinates at the link origin. Generalized forces are
conjugate to the mixed velocity ``nu`` of :mod:`floatbase.kinematics`, so the
base part is a world-aligned (force, moment) pair about the base origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kinematics import (
    Configuration,
    forward_kinematics,
    frame_bias_acceleration,
    frame_jacobian,
    integrate,
    link_velocities,
    orientation_error,
)
from .model import FloatingBaseModel
from .spatial import Pose, adjoint_motion, force_cross_dual, motion_cross, skew

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class NewtonEulerResult:
    """Everything the recursion computes, for one or several acceleration columns.

    Arrays carry a trailing batch axis when ``nu_dot`` had one.
    """

    generalized_force: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    joint_wrench: np.ndarray
    up_transforms: list


def _base_terms(q: Configuration, nu):
    R = q.base.rotation
    v = np.empty(6)
    v[:3] = R.T @ nu[:3]
    v[3:] = R.T @ nu[3:6]
    return R, v


def inverse_dynamics(
    model: FloatingBaseModel,
    q: Configuration,
    nu,
    nu_dot,
    gravity=GRAVITY,
    external=None,
) -> NewtonEulerResult:
    """Recursive Newton-Euler with the full set of intermediate quantities.

    Args:
        nu_dot: ``(nv,)`` or ``(nv, B)`` for a batch of accelerations sharing ``q, nu``.
        gravity: world gravity vector; folded into the base acceleration.
        external: optional ``(n_links, 6)`` external wrenches in link coordinates.

    ``acceleration`` holds the gravity-offset link accelerations, which are
    the proper accelerations an IMU on the link would sense.
    ``joint_wrench[i]`` is the wrench transmitted from the parent to link ``i``.
    """
    nu = np.asarray(nu, dtype=float)
    nu_dot = np.asarray(nu_dot, dtype=float)
    batched = nu_dot.ndim == 2
    A = nu_dot if batched else nu_dot[:, None]
    B = A.shape[1]
    N = model.n_links
    R, v0 = _base_terms(q, nu)

    vel = np.zeros((N, 6))
    acc = np.zeros((N, 6, B))
    vel[0] = v0
    acc[0, :3] = R.T @ A[:3] - np.cross(v0[3:], v0[:3])[:, None] - (R.T @ np.asarray(gravity, dtype=float))[:, None]
    acc[0, 3:] = R.T @ A[3:6]

    ups = []
    for k, joint in enumerate(model.joints):
        c, p = joint.child, joint.parent
        idx = model.dof_index[k]
        s = q.joints[idx] if idx >= 0 else 0.0
        X = adjoint_motion(joint.transform(s))
        ups.append(X)
        vel[c] = X @ vel[p]
        acc[c] = X @ acc[p]
        if idx >= 0:
            S = joint.motion_subspace[:, 0]
            vJ = S * nu[6 + idx]
            vel[c] += vJ
            acc[c] += np.outer(S, A[6 + idx]) + (motion_cross(vel[c]) @ vJ)[:, None]

    wrench = np.zeros((N, 6, B))
    for i, link in enumerate(model.links):
        I = link.inertia.matrix()
        wrench[i] = I @ acc[i] + (force_cross_dual(vel[i]) @ (I @ vel[i]))[:, None]
        if external is not None:
            wrench[i] -= np.asarray(external[i], dtype=float)[:, None]
    for k in range(len(model.joints) - 1, -1, -1):
        joint = model.joints[k]
        wrench[joint.parent] += ups[k].T @ wrench[joint.child]

    tau = np.zeros((model.nv, B))
    tau[:3] = R @ wrench[0, :3]
    tau[3:6] = R @ wrench[0, 3:]
    for k, joint in enumerate(model.joints):
        idx = model.dof_index[k]
        if idx >= 0:
            tau[6 + idx] = joint.motion_subspace[:, 0] @ wrench[joint.child]
    if not batched:
        tau, acc, wrench = tau[:, 0], acc[..., 0], wrench[..., 0]
    return NewtonEulerResult(tau, vel, acc, wrench, ups)


def rnea(model, q, nu, nu_dot, gravity=GRAVITY, external=None) -> np.ndarray:
    """Generalized forces ``(base wrench, joint torques)`` realizing ``nu_dot``."""
    return inverse_dynamics(model, q, nu, nu_dot, gravity, external).generalized_force


def mass_matrix(model: FloatingBaseModel, q: Configuration) -> np.ndarray:
    """Mass matrix from unit-acceleration inverse-dynamics columns."""
    M = rnea(model, q, np.zeros(model.nv), np.eye(model.nv), gravity=np.zeros(3))
    return 0.5 * (M + M.T)


def bias_forces(model, q, nu, gravity=GRAVITY) -> np.ndarray:
    """``h = C nu + G``."""
    return rnea(model, q, nu, np.zeros(model.nv), gravity)


def gravity_forces(model, q, gravity=GRAVITY) -> np.ndarray:
    return rnea(model, q, np.zeros(model.nv), np.zeros(model.nv), gravity)


def actuation_matrix(model: FloatingBaseModel) -> np.ndarray:
    B = np.zeros((model.nv, model.n))
    B[6:] = np.eye(model.n)
    return B


def forward_dynamics(model, q, nu, tau, gravity=GRAVITY, contact_jacobian=None, contact_wrench=None) -> np.ndarray:
    """Unconstrained ``nu_dot = M^-1 (B tau + J^T f - h)``."""
    rhs = actuation_matrix(model) @ np.asarray(tau, dtype=float) - bias_forces(model, q, nu, gravity)
    if contact_jacobian is not None:
        rhs = rhs + np.asarray(contact_jacobian).T @ np.asarray(contact_wrench)
    return np.linalg.solve(mass_matrix(model, q), rhs)


# --- centroidal quantities --------------------------------------------------


def center_of_mass(model: FloatingBaseModel, q: Configuration, poses=None) -> np.ndarray:
    poses = forward_kinematics(model, q) if poses is None else poses
    total = np.zeros(3)
    for link, P in zip(model.links, poses):
        total += link.mass * P.apply(link.inertia.com)
    return total / model.total_mass


def com_transport(offset) -> np.ndarray:
    """Mixed-velocity transport ``[[I, -skew(offset)], [0, I]]`` from a point to another ``offset`` away."""
    X = np.eye(6)
    X[:3, 3:] = -skew(offset)
    return X


def centroidal_transform(model: FloatingBaseModel, q: Configuration, M=None) -> np.ndarray:
    """Change of velocity variables to the centroidal frame (base block average velocity)."""
    M = mass_matrix(model, q) if M is None else M
    X = com_transport(center_of_mass(model, q) - q.base.position)
    T = np.eye(model.nv)
    T[:6, :6] = X
    T[:6, 6:] = X @ np.linalg.solve(M[:6, :6], M[:6, 6:])
    return T


@dataclass
class CentroidalDynamics:
    transform: np.ndarray
    mass_matrix: np.ndarray
    bias: np.ndarray
    velocity: np.ndarray


def centroidal_dynamics(model, q, nu, gravity=GRAVITY, eps: float = 1e-6) -> CentroidalDynamics:
    """Equations of motion in centroidal variables ``nu_bar = T nu``.

    ``M_bar = T^-T M T^-1`` and ``h_bar = T^-T (h - M T^-1 Tdot nu)``, with
    ``Tdot nu`` from a central difference of ``T`` along the flow of ``nu``.
    """
    nu = np.asarray(nu, dtype=float)
    M = mass_matrix(model, q)
    T = centroidal_transform(model, q, M)
    Tinv = np.linalg.inv(T)
    h = bias_forces(model, q, nu, gravity)
    Tp = centroidal_transform(model, integrate(model, q, nu, eps))
    Tm = centroidal_transform(model, integrate(model, q, nu, -eps))
    Tdot_nu = (Tp - Tm) @ nu / (2.0 * eps)
    M_bar = Tinv.T @ M @ Tinv
    h_bar = Tinv.T @ (h - M @ Tinv @ Tdot_nu)
    return CentroidalDynamics(T, 0.5 * (M_bar + M_bar.T), h_bar, T @ nu)


def link_wrench_to_centroidal(model, poses, com, link: int, wrench) -> np.ndarray:
    """Wrench in link coordinates about the link origin, re-expressed in world axes about ``com``."""
    P = poses[link]
    wrench = np.asarray(wrench, dtype=float)
    f = P.rotation @ wrench[:3]
    m = P.rotation @ wrench[3:] + np.cross(P.position - com, f)
    return np.concatenate([f, m])


def world_wrench_to_link(poses, link: int, point, wrench) -> np.ndarray:
    """World-aligned wrench applied at ``point`` expressed in link coordinates about the link origin."""
    P = poses[link]
    wrench = np.asarray(wrench, dtype=float)
    f = wrench[:3]
    m = wrench[3:] + np.cross(np.asarray(point) - P.position, f)
    return np.concatenate([P.rotation.T @ f, P.rotation.T @ m])


def total_momentum(model: FloatingBaseModel, q: Configuration, nu, poses=None) -> np.ndarray:
    """Centroidal momentum: linear and angular momentum about the CoM, world axes."""
    poses = forward_kinematics(model, q) if poses is None else poses
    lin, ang = link_velocities(model, q, nu, poses)
    com = center_of_mass(model, q, poses)
    L = np.zeros(6)
    for i, link in enumerate(model.links):
        if link.mass == 0.0:
            continue
        R = poses[i].rotation
        r = R @ link.inertia.com
        vc = lin[i] + np.cross(ang[i], r)
        p = link.mass * vc
        L[:3] += p
        L[3:] += R @ link.inertia.inertia_com @ R.T @ ang[i] + np.cross(poses[i].position + r - com, p)
    return L


def momentum_rate(model, q, nu, nu_dot) -> np.ndarray:
    """Rate of change of the centroidal momentum for the given motion (no forces involved)."""
    res = inverse_dynamics(model, q, nu, nu_dot, gravity=np.zeros(3))
    poses = forward_kinematics(model, q)
    com = center_of_mass(model, q, poses)
    out = np.zeros(6)
    for i, link in enumerate(model.links):
        I = link.inertia.matrix()
        net = I @ res.acceleration[i] + force_cross_dual(res.velocity[i]) @ (I @ res.velocity[i])
        out += link_wrench_to_centroidal(model, poses, com, i, net)
    return out


def momentum_rate_balance(model, q, nu, nu_dot, wrenches, gravity=GRAVITY) -> np.ndarray:
    """``Ldot - sum(f) - (m g, 0)`` for wrenches given in world axes about the CoM."""
    total = np.zeros(6)
    for w in wrenches:
        total += np.asarray(w, dtype=float)
    weight = np.concatenate([model.total_mass * np.asarray(gravity, dtype=float), np.zeros(3)])
    return momentum_rate(model, q, nu, nu_dot) - total - weight


# --- contacts ---------------------------------------------------------------


@dataclass(frozen=True)
class ContactFrame:
    """A contact frame rigidly attached to ``link`` at ``offset`` (link coordinates)."""

    link: str
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def position(self, model, poses) -> np.ndarray:
        return poses[model.link_index(self.link)].apply(self.offset)

    def rotation(self, model, poses) -> np.ndarray:
        return poses[model.link_index(self.link)].rotation

    def jacobian(self, model, q, poses=None) -> np.ndarray:
        return frame_jacobian(model, q, self.link, self.offset, poses)

    def bias(self, model, q, nu, poses=None) -> np.ndarray:
        return frame_bias_acceleration(model, q, nu, self.link, self.offset, poses)


@dataclass(frozen=True)
class Agent:
    model: FloatingBaseModel
    contacts: tuple[ContactFrame, ...] = ()


@dataclass(frozen=True)
class MutualContact:
    """Rigid contact between a frame on agent 0 and a frame on agent 1."""

    first: ContactFrame
    second: ContactFrame


def contact_constraint_matrices(
    agents: Sequence[Agent],
    configurations: Sequence[Configuration],
    velocities: Sequence[np.ndarray],
    mutual: Sequence[MutualContact] = (),
):
    """Stacked constraint Jacobian ``P`` and bias ``Pdot V``.

    Row blocks are ordered: mutual contacts (``J_0 nu_0 - J_1 nu_1``), then the
    environment contacts of each agent in turn. Contact wrenches stacked in
    the same order act on the agents through ``P^T f``.
    """
    offsets = np.cumsum([0] + [a.model.nv for a in agents])
    poses = [forward_kinematics(a.model, q) for a, q in zip(agents, configurations)]
    rows, bias = [], []
    for mc in mutual:
        Pr = np.zeros((6, offsets[-1]))
        m0, m1 = agents[0].model, agents[1].model
        Pr[:, offsets[0] : offsets[1]] = mc.first.jacobian(m0, configurations[0], poses[0])
        Pr[:, offsets[1] : offsets[2]] = -mc.second.jacobian(m1, configurations[1], poses[1])
        rows.append(Pr)
        bias.append(
            mc.first.bias(m0, configurations[0], velocities[0], poses[0])
            - mc.second.bias(m1, configurations[1], velocities[1], poses[1])
        )
    for a, agent in enumerate(agents):
        for c in agent.contacts:
            Pr = np.zeros((6, offsets[-1]))
            Pr[:, offsets[a] : offsets[a + 1]] = c.jacobian(agent.model, configurations[a], poses[a])
            rows.append(Pr)
            bias.append(c.bias(agent.model, configurations[a], velocities[a], poses[a]))
    if not rows:
        return np.zeros((0, offsets[-1])), np.zeros(0)
    return np.vstack(rows), np.concatenate(bias)


def contact_positions(agents, configurations, mutual=()):
    """Positions and rotations of every constrained frame pair, in row-block order."""
    poses = [forward_kinematics(a.model, q) for a, q in zip(agents, configurations)]
    out = []
    for mc in mutual:
        m0, m1 = agents[0].model, agents[1].model
        out.append(
            (
                mc.first.position(m0, poses[0]),
                mc.first.rotation(m0, poses[0]),
                mc.second.position(m1, poses[1]),
                mc.second.rotation(m1, poses[1]),
            )
        )
    for a, agent in enumerate(agents):
        for c in agent.contacts:
            out.append((c.position(agent.model, poses[a]), c.rotation(agent.model, poses[a]), None, None))
    return out


def constraint_error(reference, current) -> np.ndarray:
    """Position-level drift of each constraint block relative to ``reference``.

    Both arguments come from :func:`contact_positions`. Environment blocks
    measure drift from the reference frame pose; mutual blocks measure drift
    of the relative pose between the two frames.
    """
    parts = []
    for ref, cur in zip(reference, current):
        p, R, p2, R2 = cur
        rp, rR, rp2, rR2 = ref
        if p2 is None:
            parts.append(p - rp)
            parts.append(-orientation_error(rR, R))
        else:
            parts.append((p - p2) - (rp - rp2))
            parts.append(-orientation_error(R2 @ rR2.T @ rR, R))
    return np.concatenate(parts) if parts else np.zeros(0)

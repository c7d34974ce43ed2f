"""Interaction-aware control algebra.

Feedback-linearization task torques, the contact-wrench map of two coupled
agents, projection of assistance on a task direction, the partner-aware
torque law, trajectory advancement through a free parameter, momentum-based
torque synthesis and a unit-mass test system.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .dynamics import (
    GRAVITY,
    ContactFrame,
    actuation_matrix,
    bias_forces,
    centroidal_dynamics,
    com_transport,
    mass_matrix,
)
from .kinematics import Configuration, forward_kinematics
from .simulate import ConstrainedSystem

PINV_RCOND = 1e-8
DIRECTION_EPS = 1e-9
ALPHA_DEADZONE = 1e-3


class RankDeficientTask(np.linalg.LinAlgError):
    """The task matrix lost row rank."""


class RankDeficient(np.linalg.LinAlgError):
    """A matrix needed by the momentum controller lost rank."""


class SingularGamma(np.linalg.LinAlgError):
    """The contact-space inverse inertia of the coupled system is singular."""


class SingularBaseJacobian(np.linalg.LinAlgError):
    """The base block of the contact Jacobian is not invertible."""


class DegenerateDirection(ValueError):
    """A projection direction has (numerically) zero norm."""


class DegenerateTangent(ValueError):
    """The trajectory tangent has (numerically) zero norm."""


def pinv(A) -> np.ndarray:
    return np.linalg.pinv(np.atleast_2d(A), rcond=PINV_RCOND)


def nullspace_projector(A) -> np.ndarray:
    A = np.atleast_2d(A)
    return np.eye(A.shape[1]) - pinv(A) @ A


def _row_rank(A) -> int:
    return int(np.linalg.matrix_rank(A, tol=PINV_RCOND * max(np.linalg.norm(A, 2), 1e-300)))


# --- feedback linearization -------------------------------------------------


@dataclass(frozen=True)
class TaskFrame:
    """Rows of a frame's world-aligned velocity used as a control task."""

    link: str
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rows: tuple[int, ...] = (0, 1, 2, 3, 4, 5)

    def frame(self) -> ContactFrame:
        return ContactFrame(self.link, self.offset)

    def jacobian(self, model, q, poses=None) -> np.ndarray:
        return self.frame().jacobian(model, q, poses)[list(self.rows)]

    def bias(self, model, q, nu, poses=None) -> np.ndarray:
        return self.frame().bias(model, q, nu, poses)[list(self.rows)]


@dataclass
class TaskTorques:
    torque: np.ndarray
    nullspace: np.ndarray
    Delta: np.ndarray
    Omega: np.ndarray
    Lambda: np.ndarray


def feedback_linearization_torques(
    model,
    q: Configuration,
    nu,
    task: TaskFrame,
    desired_acceleration,
    contact_jacobian=None,
    contact_wrench=None,
    tau0=None,
    gravity=GRAVITY,
    fixed_base: bool = False,
) -> TaskTorques:
    """``tau = Delta^+ (xdd* - Omega f + Lambda) + N tau0`` realizing ``xdd = xdd*``.

    With ``fixed_base`` the base is treated as welded to the world and only
    the joint-space blocks of the dynamics are used.
    """
    nu = np.asarray(nu, dtype=float)
    M = mass_matrix(model, q)
    h = bias_forces(model, q, nu, gravity)
    poses = forward_kinematics(model, q)
    J = task.jacobian(model, q, poses)
    bias = task.bias(model, q, nu, poses)
    B = actuation_matrix(model)
    Jc = None if contact_jacobian is None else np.atleast_2d(contact_jacobian)
    if fixed_base:
        M, h, J, B = M[6:, 6:], h[6:], J[:, 6:], B[6:]
        Jc = None if Jc is None else Jc[:, 6:]
    Minv = np.linalg.inv(M)
    Delta = J @ Minv @ B
    if _row_rank(Delta) < Delta.shape[0]:
        raise RankDeficientTask(f"task matrix rank {_row_rank(Delta)} < {Delta.shape[0]}")
    Omega = J @ Minv @ Jc.T if Jc is not None else np.zeros((J.shape[0], 0))
    Lambda = J @ Minv @ h - bias
    rhs = np.asarray(desired_acceleration, dtype=float) + Lambda
    if Jc is not None:
        rhs = rhs - Omega @ np.asarray(contact_wrench, dtype=float)
    N = nullspace_projector(Delta)
    tau = pinv(Delta) @ rhs
    if tau0 is not None:
        tau = tau + N @ np.asarray(tau0, dtype=float)
    return TaskTorques(tau, N, Delta, Omega, Lambda)


# --- coupled agents ---------------------------------------------------------


@dataclass
class WrenchMap:
    """``f = G1 tau_ea + G2 tau_r + G3`` for the stacked contact wrenches."""

    wrenches: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    G3: np.ndarray
    Gamma: np.ndarray


def coupled_wrench_map(system: ConstrainedSystem, tau_ea, tau_r) -> WrenchMap:
    """Contact wrenches of two coupled agents from ``f = -Gamma^+ (P M^-1 (B tau - h) + Pdot V)``.

    Agent 0 is the external agent and agent 1 the robot; wrench rows follow
    :func:`floatbase.dynamics.contact_constraint_matrices`.
    """
    M, h, B = system.dynamics()
    P, Pdot_V = system.constraints()
    Minv = np.linalg.inv(M)
    Gamma = P @ Minv @ P.T
    if _row_rank(Gamma) < Gamma.shape[0]:
        raise SingularGamma(f"Gamma rank {_row_rank(Gamma)} < {Gamma.shape[0]}")
    Gp = pinv(Gamma)
    n_ea = system.agents[0].model.n
    B_ea, B_r = B[:, :n_ea], B[:, n_ea:]
    G1 = -Gp @ P @ Minv @ B_ea
    G2 = -Gp @ P @ Minv @ B_r
    G3 = -Gp @ (Pdot_V - P @ Minv @ h)
    f = G1 @ np.asarray(tau_ea, dtype=float) + G2 @ np.asarray(tau_r, dtype=float) + G3
    return WrenchMap(f, G1, G2, G3, Gamma)


# --- projection of assistance -----------------------------------------------


class HelpConvention(enum.Enum):
    """Which sign of the projection counts as helpful.

    ``ERROR_DIRECTION``: projection on the velocity error, helpful when
    ``alpha <= 0``. ``DESIRED_VELOCITY``: projection on the desired velocity,
    helpful when ``alpha > 0``.
    """

    ERROR_DIRECTION = "error"
    DESIRED_VELOCITY = "desired"

    def helpful(self, alpha: float) -> bool:
        return alpha <= 0.0 if self is HelpConvention.ERROR_DIRECTION else alpha > 0.0


@dataclass(frozen=True)
class WrenchDecomposition:
    alpha: float
    parallel_unit: np.ndarray
    beta: float
    perpendicular_unit: np.ndarray

    @property
    def parallel(self) -> np.ndarray:
        return self.alpha * self.parallel_unit

    @property
    def perpendicular(self) -> np.ndarray:
        return self.beta * self.perpendicular_unit

    def reconstruct(self) -> np.ndarray:
        return self.parallel + self.perpendicular


def alpha_projection(source, direction, operator=None, eps: float = DIRECTION_EPS) -> WrenchDecomposition:
    """Split ``operator @ source`` into parts parallel and orthogonal to ``direction``."""
    direction = np.atleast_1d(np.asarray(direction, dtype=float))
    norm = np.linalg.norm(direction)
    if norm <= eps:
        raise DegenerateDirection(f"direction norm {norm:.3e} <= {eps:.1e}")
    x = np.atleast_1d(np.asarray(source, dtype=float))
    if operator is not None:
        x = np.atleast_2d(operator) @ x
    unit = direction / norm
    alpha = float(unit @ x)
    rest = x - alpha * unit
    beta = float(np.linalg.norm(rest))
    if beta <= 1e-12 * np.linalg.norm(x):
        # round-off remainder of a parallel input
        beta, rest = 0.0, np.zeros_like(unit)
    perp = rest / beta if beta > 0.0 else np.zeros_like(unit)
    return WrenchDecomposition(alpha, unit, beta, perp)


def deadzone(alpha: float, width: float = ALPHA_DEADZONE) -> float:
    return 0.0 if abs(alpha) < width else alpha


# --- partner-aware law ------------------------------------------------------


@dataclass
class PartnerAwareOutput:
    torque: np.ndarray
    alpha: float
    error: np.ndarray
    Delta: np.ndarray
    Omega: np.ndarray
    Lambda: np.ndarray
    lyapunov: float
    lyapunov_rate_law: float
    lyapunov_rate_closed_loop: float


@dataclass
class VelocityTask:
    """Velocity-level robot task ``chi = J_chi nu_r`` with PI-type gains."""

    frame: TaskFrame
    K_d: np.ndarray
    K_D: np.ndarray
    K_p: np.ndarray
    desired: Callable[[float], tuple[np.ndarray, np.ndarray]]

    @staticmethod
    def regulate(frame: TaskFrame, K_d=1.0, K_D=10.0, K_p=1.0) -> "VelocityTask":
        p = len(frame.rows)
        zero = np.zeros(p)
        return VelocityTask(frame, K_d * np.eye(p), K_D * np.eye(p), K_p * np.eye(p), lambda t: (zero, zero))


@dataclass
class PartnerAwareTerms:
    """State-dependent quantities of the partner-aware law (independent of the partner torque)."""

    error: np.ndarray
    error_integral: np.ndarray
    Delta: np.ndarray
    Omega: np.ndarray
    Lambda: np.ndarray


def partner_aware_terms(system: ConstrainedSystem, task: VelocityTask, error_integral) -> PartnerAwareTerms:
    """``Delta``, ``Omega`` and ``Lambda`` for the robot (agent 1) of ``system``."""
    robot = system.agents[1].model
    q_r, nu_r = system.q[1], system.nu[1]
    o = system.offsets
    M_r = mass_matrix(robot, q_r)
    h_r = bias_forces(robot, q_r, nu_r, system.gravity)
    P, _ = system.constraints()
    P_r = P[:, o[1] : o[2]]
    wm = coupled_wrench_map(system, np.zeros(system.agents[0].model.n), np.zeros(robot.n))
    poses = forward_kinematics(robot, q_r)
    J = task.frame.jacobian(robot, q_r, poses)
    Jdot_nu = task.frame.bias(robot, q_r, nu_r, poses)
    Minv = np.linalg.inv(M_r)
    B = actuation_matrix(robot)
    chi_d, chi_d_dot = task.desired(system.time)
    error_integral = np.asarray(error_integral, dtype=float)
    Delta = task.K_d @ J @ Minv @ (B + P_r.T @ wm.G2)
    if _row_rank(Delta) < Delta.shape[0]:
        raise RankDeficientTask(f"task matrix rank {_row_rank(Delta)} < {Delta.shape[0]}")
    Omega = task.K_d @ J @ Minv @ P_r.T @ wm.G1
    Lambda = task.K_d @ (J @ Minv @ P_r.T @ wm.G3 - J @ Minv @ h_r + Jdot_nu - chi_d_dot) + task.K_p @ error_integral
    return PartnerAwareTerms(J @ nu_r - chi_d, error_integral, Delta, Omega, Lambda)


def partner_aware_torques(
    system: ConstrainedSystem,
    task: VelocityTask,
    error_integral,
    tau_ea,
    tau0=None,
    terms: PartnerAwareTerms | None = None,
) -> PartnerAwareOutput:
    """Robot torques that keep helpful partner contributions and cancel the rest.

    ``tau = -Delta^+ (Lambda + K_D e + max(0, alpha) e_par) + N tau0`` with
    ``e = chi - chi_d``. Besides the torque the output carries the Lyapunov
    value, the rate printed with the law (``-e'K_D e - max(0, alpha)|e|``) and
    the rate the closed loop actually has (``-e'K_D e + min(0, alpha)|e|``).
    """
    t = terms or partner_aware_terms(system, task, error_integral)
    e = t.error
    enorm = float(np.linalg.norm(e))
    if enorm > DIRECTION_EPS:
        dec = alpha_projection(np.asarray(tau_ea, dtype=float), e, operator=t.Omega)
        alpha, e_par = dec.alpha, dec.parallel_unit
    else:
        alpha, e_par = 0.0, np.zeros_like(e)
    rhs = t.Lambda + task.K_D @ e + max(0.0, alpha) * e_par
    tau = -pinv(t.Delta) @ rhs
    if tau0 is not None:
        tau = tau + nullspace_projector(t.Delta) @ np.asarray(tau0, dtype=float)
    ei = t.error_integral
    V = 0.5 * e @ task.K_d @ e + 0.5 * ei @ task.K_p @ ei
    damping = float(e @ task.K_D @ e)
    return PartnerAwareOutput(
        tau,
        alpha,
        e,
        t.Delta,
        t.Omega,
        t.Lambda,
        float(V),
        -damping - max(0.0, alpha) * enorm,
        -damping + min(0.0, alpha) * enorm,
    )


# --- parametrized trajectories ----------------------------------------------


class ParametrizedTrajectory:
    """Curve ``x_d(psi)`` with its first two ``psi`` derivatives."""

    dimension: int = 1

    def evaluate(self, psi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def references(self, psi: float, psi_dot: float, psi_ddot: float):
        """Desired position, velocity and acceleration for a time-varying ``psi``."""
        x, dx, ddx = self.evaluate(psi)
        return x, dx * psi_dot, ddx * psi_dot**2 + dx * psi_ddot


@dataclass
class RampTrajectory(ParametrizedTrajectory):
    start: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        self.start = np.atleast_1d(np.asarray(self.start, dtype=float))
        self.velocity = np.atleast_1d(np.asarray(self.velocity, dtype=float))
        self.dimension = self.start.size

    def evaluate(self, psi):
        return self.start + self.velocity * psi, self.velocity.copy(), np.zeros_like(self.velocity)


@dataclass
class SinusoidTrajectory(ParametrizedTrajectory):
    """``center + amplitude * sin(2 pi f psi)`` per axis."""

    center: np.ndarray
    amplitude: np.ndarray
    frequency: float

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        self.amplitude = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        self.dimension = self.center.size

    def evaluate(self, psi):
        w = 2.0 * np.pi * self.frequency
        s, c = np.sin(w * psi), np.cos(w * psi)
        return self.center + self.amplitude * s, self.amplitude * w * c, -self.amplitude * w * w * s


@dataclass
class MinimumJerkTrajectory(ParametrizedTrajectory):
    """Fifth-order rest-to-rest blend from ``start`` to ``end`` over ``duration``, constant afterwards."""

    start: np.ndarray
    end: np.ndarray
    duration: float

    def __post_init__(self):
        self.start = np.atleast_1d(np.asarray(self.start, dtype=float))
        self.end = np.atleast_1d(np.asarray(self.end, dtype=float))
        self.dimension = self.start.size

    def evaluate(self, psi):
        T = self.duration
        u = min(max(psi / T, 0.0), 1.0)
        d = self.end - self.start
        s = 10 * u**3 - 15 * u**4 + 6 * u**5
        ds = (30 * u**2 - 60 * u**3 + 30 * u**4) / T
        dds = (60 * u - 180 * u**2 + 120 * u**3) / T**2
        return self.start + d * s, d * ds, d * dds


# --- trajectory advancement -------------------------------------------------


@dataclass(frozen=True)
class AdvancementState:
    psi: float = 0.0
    psi_dot: float = 1.0
    psi_ddot: float = 0.0
    upper: float = 10.0
    cutoff_hz: float = 5.0
    previous_psi_dot: float = 1.0

    def __post_init__(self):
        if self.upper < 1.0:
            raise ValueError("upper bound on psi_dot must be at least 1")


def advancement_rate(xdot, tangent, upper: float, eps: float = DIRECTION_EPS) -> float:
    """``min(upper, max(1, xdot . tangent / |tangent|^2))``."""
    tangent = np.atleast_1d(np.asarray(tangent, dtype=float))
    nsq = float(tangent @ tangent)
    if np.sqrt(nsq) <= eps:
        raise DegenerateTangent(f"tangent norm {np.sqrt(nsq):.3e} <= {eps:.1e}")
    ratio = float(np.atleast_1d(np.asarray(xdot, dtype=float)) @ tangent) / nsq
    return min(upper, max(1.0, ratio))


def advancement_update(state: AdvancementState, xdot, trajectory: ParametrizedTrajectory, dt: float) -> AdvancementState:
    """Advance the free parameter.

    The new rate follows :func:`advancement_rate`; ``psi_ddot`` is the
    derivative of the two previous rates (one step of delay) passed through a
    first-order low-pass filter.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    _, tangent, _ = trajectory.evaluate(state.psi)
    rate = advancement_rate(xdot, tangent, state.upper)
    raw = (state.psi_dot - state.previous_psi_dot) / dt
    tau = 1.0 / (2.0 * np.pi * state.cutoff_hz)
    psi_ddot = state.psi_ddot + dt / (tau + dt) * (raw - state.psi_ddot)
    return replace(state, psi=state.psi + rate * dt, psi_dot=rate, psi_ddot=psi_ddot, previous_psi_dot=state.psi_dot)


def updated_desired_dynamics(
    xdd_d,
    velocity_error,
    error_integral,
    K_D,
    K_P,
    alpha: float,
    direction_unit,
    convention: HelpConvention,
) -> np.ndarray:
    """PD-plus-feedforward objective with the correction ``alpha * direction_unit``.

    The correction is added only when ``convention`` deems ``alpha`` helpful.
    """
    xdd_d = np.atleast_1d(np.asarray(xdd_d, dtype=float))
    out = xdd_d - np.atleast_2d(K_D) @ np.atleast_1d(velocity_error) - np.atleast_2d(K_P) @ np.atleast_1d(error_integral)
    if convention.helpful(alpha):
        out = out + alpha * np.atleast_1d(np.asarray(direction_unit, dtype=float))
    return out


# --- unit-mass system -------------------------------------------------------


@dataclass(frozen=True)
class PointMassState:
    position: float
    velocity: float


def point_mass_step(state: PointMassState, u: float, f_ext: float, dt: float) -> PointMassState:
    """Semi-implicit Euler for ``xdd = u + f_ext``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v = state.velocity + dt * (u + f_ext)
    return PointMassState(state.position + dt * v, v)


def point_mass_lyapunov(velocity_error: float, error_integral: float, K_P: float) -> float:
    return 0.5 * velocity_error**2 + 0.5 * K_P * error_integral**2


@dataclass
class PointMassTrace:
    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    velocity_error: np.ndarray
    lyapunov: np.ndarray
    alpha: np.ndarray
    psi: np.ndarray
    psi_dot: np.ndarray
    control: np.ndarray


def simulate_point_mass(
    trajectory: ParametrizedTrajectory,
    force: Callable[[float, PointMassState], float],
    convention: HelpConvention,
    steps: int,
    dt: float = 1e-3,
    K_D: float = 10.0,
    K_P: float = 1.0,
    initial: PointMassState | None = None,
    advance: bool = False,
    upper: float = 10.0,
) -> PointMassTrace:
    """Closed loop of the unit mass under feedback linearization with exploited assistance.

    The controller cancels the external force and re-injects its helpful
    part. With ``ERROR_DIRECTION`` the helpfulness gate is evaluated on the
    one-step-ahead velocity error and the correction is capped so that this
    error does not change sign, which keeps the sampled Lyapunov value
    non-increasing. With ``advance`` the reference is re-timed by
    :func:`advancement_update`.
    """
    adv = AdvancementState(upper=upper)
    x0, v0, _ = trajectory.evaluate(0.0)
    state = initial or PointMassState(float(x0[0]), float(v0[0]))
    integral = 0.0
    rec = {k: np.zeros(steps + 1) for k in ("t", "x", "v", "e", "V", "alpha", "psi", "psi_dot", "u")}

    def log(k, t, e, alpha, u):
        rec["t"][k], rec["x"][k], rec["v"][k] = t, state.position, state.velocity
        rec["e"][k], rec["alpha"][k], rec["u"][k] = e, alpha, u
        rec["V"][k] = point_mass_lyapunov(e, integral, K_P)
        rec["psi"][k], rec["psi_dot"][k] = adv.psi, adv.psi_dot

    _, xd_dot, _ = trajectory.references(adv.psi, adv.psi_dot, adv.psi_ddot)
    log(0, 0.0, state.velocity - float(xd_dot[0]), 0.0, 0.0)
    for k in range(steps):
        t = k * dt
        _, xd_dot, xd_ddot = trajectory.references(adv.psi, adv.psi_dot, adv.psi_ddot)
        e = state.velocity - float(xd_dot[0])
        f = float(force(t, state))
        base = float(updated_desired_dynamics(xd_ddot, e, integral, K_D, K_P, 0.0, [0.0], HelpConvention.DESIRED_VELOCITY)[0])
        alpha = 0.0
        correction = 0.0
        if convention is HelpConvention.ERROR_DIRECTION:
            e_ahead = e + dt * (base - float(xd_ddot[0]))
            if abs(e_ahead) > DIRECTION_EPS:
                direction = np.sign(e_ahead)
                alpha = alpha_projection(f, [direction]).alpha
                if convention.helpful(alpha):
                    correction = -min(-alpha, abs(e_ahead) / dt) * direction
        else:
            if np.linalg.norm(xd_dot) > DIRECTION_EPS:
                dec = alpha_projection(f, xd_dot)
                alpha = dec.alpha
                if convention.helpful(alpha):
                    correction = alpha * float(dec.parallel_unit[0])
        xdd_star = base + correction
        u = xdd_star - f
        state = point_mass_step(state, u, f, dt)
        if advance:
            adv = advancement_update(adv, state.velocity, trajectory, dt)
        _, xd_dot_next, _ = trajectory.references(adv.psi, adv.psi_dot, adv.psi_ddot)
        if advance:
            e_next = state.velocity - float(xd_dot_next[0])
        else:
            e_next = state.velocity - float(xd_dot[0]) - dt * float(xd_ddot[0])
        integral += dt * e_next
        log(k + 1, t + dt, e_next, alpha, u)
    return PointMassTrace(rec["t"], rec["x"], rec["v"], rec["e"], rec["V"], rec["alpha"], rec["psi"], rec["psi_dot"], rec["u"])


# --- momentum control -------------------------------------------------------


def momentum_balance_wrench(momentum_rate_desired, mass: float, base_jacobian, gravity: float = 9.81) -> np.ndarray:
    """Contact wrench ``J_b^-T (Hdot* + m g e3)`` (minimum norm for several contacts)."""
    Jb = np.atleast_2d(np.asarray(base_jacobian, dtype=float))
    rhs = np.asarray(momentum_rate_desired, dtype=float).copy()
    rhs[2] += mass * gravity
    if Jb.shape[0] == Jb.shape[1]:
        if _row_rank(Jb) < 6:
            raise SingularBaseJacobian("base block of the contact Jacobian is singular")
        return np.linalg.solve(Jb.T, rhs)
    if _row_rank(Jb.T) < 6:
        raise SingularBaseJacobian("contact base blocks do not span the wrench space")
    return pinv(Jb.T) @ rhs


@dataclass
class MomentumControlTerms:
    torque: np.ndarray
    base_jacobian: np.ndarray
    Lambda: np.ndarray
    nullspace: np.ndarray


def centroidal_contact_jacobian(model, q, contacts: Sequence[ContactFrame], T=None) -> np.ndarray:
    """Stacked contact Jacobians in centroidal velocity variables, ``J T^-1``."""
    J = np.vstack([c.jacobian(model, q) for c in contacts])
    if T is None:
        from .dynamics import centroidal_transform

        T = centroidal_transform(model, q)
    return J @ np.linalg.inv(T)


def momentum_torques(
    model,
    q: Configuration,
    nu,
    contacts: Sequence[ContactFrame],
    wrench,
    tau0=None,
    gravity=GRAVITY,
) -> MomentumControlTerms:
    """Joint torques that realize the contact wrench ``wrench`` under rigid contacts.

    Uses the centroidal form ``tau = Lambda^+ (Jc M^-1 (h - Jc^T f) - Jcdot nu) + N tau0``
    with ``Lambda = J_j M_j^-1`` and every quantity in centroidal variables.
    """
    nu = np.asarray(nu, dtype=float)
    cd = centroidal_dynamics(model, q, nu, gravity)
    Tinv = np.linalg.inv(cd.transform)
    Jc = np.vstack([c.jacobian(model, q) for c in contacts])
    Jc_bar = Jc @ Tinv
    # Jbar_dot nubar = Jdot nu - J T^-1 Tdot nu; the second term is recovered from h_bar
    h = bias_forces(model, q, nu, gravity)
    M = mass_matrix(model, q)
    Tdot_nu = cd.transform @ np.linalg.solve(M, h - cd.transform.T @ cd.bias)
    Jdot_nu = np.concatenate([c.bias(model, q, nu) for c in contacts])
    Jbar_dot_nubar = Jdot_nu - Jc @ Tinv @ Tdot_nu
    M_bar = cd.mass_matrix
    n = model.n
    Mj = M_bar[6:, 6:]
    Lam = Jc_bar[:, 6:] @ np.linalg.inv(Mj) if n else np.zeros((Jc.shape[0], 0))
    if n and _row_rank(Lam) < min(Lam.shape):
        raise RankDeficient(f"Lambda rank {_row_rank(Lam)} < {min(Lam.shape)}")
    rhs = Jc_bar @ np.linalg.solve(M_bar, cd.bias - Jc_bar.T @ np.asarray(wrench, dtype=float)) - Jbar_dot_nubar
    if n == 0:
        return MomentumControlTerms(np.zeros(0), Jc_bar[:, :6], Lam, np.zeros((0, 0)))
    N = nullspace_projector(Lam)
    tau = pinv(Lam) @ rhs
    if tau0 is not None:
        tau = tau + N @ np.asarray(tau0, dtype=float)
    return MomentumControlTerms(tau, Jc_bar[:, :6], Lam, N)


def centroidal_base_jacobian(model, q, contacts: Sequence[ContactFrame]) -> np.ndarray:
    """Base block of the centroidal contact Jacobian, ``J_b X^-1`` (joint coupling removed)."""
    from .dynamics import center_of_mass

    X = com_transport(center_of_mass(model, q) - q.base.position)
    Jb = np.vstack([c.jacobian(model, q)[:, :6] for c in contacts])
    return Jb @ np.linalg.inv(X)


# --- coupled closed loop ----------------------------------------------------


@dataclass
class CoupledTrace:
    time: np.ndarray
    error_norm: np.ndarray
    lyapunov: np.ndarray
    rate_law: np.ndarray
    rate_closed_loop: np.ndarray
    alpha: np.ndarray
    drift: np.ndarray
    partner_torque: np.ndarray
    robot_torque: np.ndarray

    def first_time_below(self, threshold: float) -> float:
        hit = np.flatnonzero(self.error_norm <= threshold)
        return float(self.time[hit[0]]) if hit.size else float("inf")


def assisting_partner(gain: float) -> Callable[[PartnerAwareTerms], np.ndarray]:
    """Partner torque ``-gain * Omega' e`` that always pushes against the error (``alpha <= 0``)."""

    def policy(terms: PartnerAwareTerms) -> np.ndarray:
        return -gain * terms.Omega.T @ terms.error

    return policy


def simulate_partner_aware(
    system: ConstrainedSystem,
    task: VelocityTask,
    partner: Callable[[PartnerAwareTerms], np.ndarray],
    steps: int,
    dt: float = 1e-3,
    stop_below: float | None = None,
) -> CoupledTrace:
    """Run the partner-aware robot against a partner policy; ``system`` is advanced in place."""
    integral = np.zeros(len(task.frame.rows))
    rows, torques = [], []
    for _ in range(steps):
        terms = partner_aware_terms(system, task, integral)
        tau_ea = partner(terms)
        out = partner_aware_torques(system, task, integral, tau_ea, terms=terms)
        enorm = float(np.linalg.norm(out.error))
        rows.append((system.time, enorm, out.lyapunov, out.lyapunov_rate_law, out.lyapunov_rate_closed_loop, out.alpha,
                     float(np.abs(system.drift()).max(initial=0.0))))
        torques.append((np.asarray(tau_ea, dtype=float), out.torque))
        if stop_below is not None and enorm <= stop_below:
            break
        system.step([tau_ea, out.torque], dt)
        integral = integral + dt * out.error
    cols = np.array(rows).T
    return CoupledTrace(*cols, np.array([t[0] for t in torques]), np.array([t[1] for t in torques]))


CoupledSystem = ConstrainedSystem


def mutual_wrench_pairs(wrenches, n_mutual: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """World-aligned wrenches each mutual contact applies on the external agent and on the robot."""
    f = np.asarray(wrenches, dtype=float)
    return [(f[6 * k : 6 * k + 6].copy(), -f[6 * k : 6 * k + 6]) for k in range(n_mutual)]


def postural_torque(model, q: Configuration, nu, contacts: Sequence[ContactFrame], wrench, reference, kp: float, kd: float, gravity=GRAVITY) -> np.ndarray:
    """Secondary torque for :func:`momentum_torques`.

    Inverse dynamics of the smallest joint acceleration compatible with the
    rigid contacts and the wrench ``wrench``, plus a joint PD toward
    ``reference`` restricted to the contact nullspace. It satisfies the
    primary equation already, so the projected result reproduces it; without
    it the minimum-norm torque excites large internal accelerations.
    """
    nu = np.asarray(nu, dtype=float)
    wrench = np.asarray(wrench, dtype=float)
    cd = centroidal_dynamics(model, q, nu, gravity)
    Tinv = np.linalg.inv(cd.transform)
    Jc = np.vstack([c.jacobian(model, q) for c in contacts])
    Jc_bar = Jc @ Tinv
    h = bias_forces(model, q, nu, gravity)
    Tdot_nu = cd.transform @ np.linalg.solve(mass_matrix(model, q), h - cd.transform.T @ cd.bias)
    Jbar_dot_nubar = np.concatenate([c.bias(model, q, nu) for c in contacts]) - Jc @ Tinv @ Tdot_nu
    Mb, Mj = cd.mass_matrix[:6, :6], cd.mass_matrix[6:, 6:]
    Jb, Jj = Jc_bar[:, :6], Jc_bar[:, 6:]
    base_acc = np.linalg.solve(Mb, Jb.T @ wrench - cd.bias[:6])
    Jj_pinv = pinv(Jj)
    pd = -kp * (q.joints - np.asarray(reference, dtype=float)) - kd * nu[6:]
    acc = Jj_pinv @ (-Jbar_dot_nubar - Jb @ base_acc) + (np.eye(model.n) - Jj_pinv @ Jj) @ pd
    return Mj @ acc + cd.bias[6:] - Jj.T @ wrench

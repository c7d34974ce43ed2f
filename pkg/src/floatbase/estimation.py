"""Gaussian MAP estimation of whole-body dynamic variables.

The unknown vector stacks, for every link, its proper acceleration and its
external wrench (both in link coordinates), then the wrench every joint
transmits from parent to child, then the joint accelerations. Linear model
constraints ``D d + b_D = 0`` come from the Newton-Euler recursion and sensor
readings obey ``y = Y d + b_Y`` plus Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .dynamics import GRAVITY, center_of_mass, inverse_dynamics
from .kinematics import Configuration, forward_kinematics
from .model import FloatingBaseModel
from .spatial import Pose, adjoint_motion, force_cross_dual, force_to_parent, motion_cross

DEFAULT_MODEL_VARIANCE = 1e-4
DEFAULT_PRIOR_VARIANCE = 1e4
FEET_VARIANCE = 1e-6
HANDS_VARIANCE = 1e2
MOMENTUM_VARIANCE = 1e-6
RANK_THRESHOLD = 1e-10


class UnknownFrame(KeyError):
    """A sensor names a link or joint the model does not have."""


class SingularNormalEquations(np.linalg.LinAlgError):
    """A covariance or information matrix is not positive definite."""


class VariableLayout:
    """Index bookkeeping for the dynamic-variables vector."""

    def __init__(self, model: FloatingBaseModel):
        self.model = model
        self.n_links = model.n_links
        self.n_joints = len(model.joints)
        self.n = model.n
        self._joint_wrench0 = 12 * self.n_links
        self._joint_acc0 = self._joint_wrench0 + 6 * self.n_joints
        self.size = self._joint_acc0 + self.n

    def acceleration(self, link: int) -> slice:
        return slice(12 * link, 12 * link + 6)

    def external(self, link: int) -> slice:
        return slice(12 * link + 6, 12 * link + 12)

    def joint_wrench(self, joint: int) -> slice:
        s = self._joint_wrench0 + 6 * joint
        return slice(s, s + 6)

    def joint_acceleration(self, dof: int) -> int:
        return self._joint_acc0 + dof

    @property
    def external_columns(self) -> np.ndarray:
        return np.concatenate([np.arange(12 * i + 6, 12 * i + 12) for i in range(self.n_links)])

    def unpack(self, d) -> dict:
        d = np.asarray(d)
        return {
            "acceleration": np.array([d[self.acceleration(i)] for i in range(self.n_links)]),
            "external": np.array([d[self.external(i)] for i in range(self.n_links)]),
            "joint_wrench": np.array([d[self.joint_wrench(k)] for k in range(self.n_joints)]).reshape(-1, 6),
            "joint_acceleration": d[self._joint_acc0 :],
        }


@dataclass
class GaussianTerm:
    """A linear Gaussian relation ``A d + b`` with diagonal variances."""

    matrix: np.ndarray
    offset: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        self.offset = np.asarray(self.offset, dtype=float).reshape(-1)
        self.variance = np.broadcast_to(np.asarray(self.variance, dtype=float), self.offset.shape).copy()
        if self.matrix.shape[0] != self.offset.size:
            raise ValueError("row count mismatch between matrix and offset")
        if np.any(self.variance <= 0.0):
            raise SingularNormalEquations("variances must be positive")

    @property
    def rows(self) -> int:
        return self.offset.size


ConstraintModel = GaussianTerm


def build_constraint_model(
    model: FloatingBaseModel, q: Configuration, nu, variance: float = DEFAULT_MODEL_VARIANCE
) -> ConstraintModel:
    """Newton-Euler recursion written as ``D d + b_D = 0``.

    One 6-row block per joint propagates accelerations from parent to child
    and one 6-row block per link balances its wrenches.
    """
    layout = VariableLayout(model)
    res = inverse_dynamics(model, q, nu, np.zeros(model.nv), gravity=np.zeros(3))
    vel = res.velocity
    nu = np.asarray(nu, dtype=float)
    n_rows = 6 * layout.n_joints + 6 * layout.n_links
    D = np.zeros((n_rows, layout.size))
    b = np.zeros(n_rows)
    row = 0
    for k, joint in enumerate(model.joints):
        c, p = joint.child, joint.parent
        rs = slice(row, row + 6)
        D[rs, layout.acceleration(c)] = np.eye(6)
        D[rs, layout.acceleration(p)] = -res.up_transforms[k]
        idx = model.dof_index[k]
        if idx >= 0:
            S = joint.motion_subspace[:, 0]
            D[rs, layout.joint_acceleration(idx)] = -S
            b[rs] = -motion_cross(vel[c]) @ (S * nu[6 + idx])
        row += 6
    for i, link in enumerate(model.links):
        rs = slice(row, row + 6)
        I = link.inertia.matrix()
        D[rs, layout.acceleration(i)] = -I
        D[rs, layout.external(i)] = np.eye(6)
        if i > 0:
            D[rs, layout.joint_wrench(i - 1)] = np.eye(6)
        for c in model.children[i]:
            D[rs, layout.joint_wrench(c - 1)] = -res.up_transforms[c - 1].T
        b[rs] = -force_cross_dual(vel[i]) @ (I @ vel[i])
        row += 6
    return ConstraintModel(D, b, variance)


# --- sensors ----------------------------------------------------------------


@dataclass(frozen=True)
class Sensor:
    """Base sensor record; ``variance`` applies to every row of the channel."""

    name: str
    variance: float


@dataclass(frozen=True)
class AccelerometerSensor(Sensor):
    link: str = ""


@dataclass(frozen=True)
class WrenchSensor(Sensor):
    link: str = ""


@dataclass(frozen=True)
class JointAccelerationSensor(Sensor):
    joint: str = ""


@dataclass(frozen=True)
class MomentumRateSensor(Sensor):
    """Pseudo-sensor: all external wrenches, moved to the CoM, sum to ``Ldot - m g``."""


def sensor_rows(sensor: Sensor) -> int:
    if isinstance(sensor, AccelerometerSensor):
        return 3
    if isinstance(sensor, JointAccelerationSensor):
        return 1
    return 6


@dataclass
class MeasurementModel:
    sensors: list
    term: GaussianTerm
    row_slices: dict = field(default_factory=dict)

    @property
    def Y(self) -> np.ndarray:
        return self.term.matrix

    @property
    def bias(self) -> np.ndarray:
        return self.term.offset

    def channel(self, values, name: str) -> np.ndarray:
        return np.asarray(values)[self.row_slices[name]]


def _link(model, name) -> int:
    try:
        return model.link_index(name)
    except KeyError:
        raise UnknownFrame(name) from None


def build_measurement_model(
    model: FloatingBaseModel, q: Configuration, nu, sensors: Sequence[Sensor], columns=None
) -> MeasurementModel:
    """Stack ``Y`` and ``b_Y`` for the given sensors.

    ``columns`` restricts the output to a subset of the variable columns (used
    by the first task of the stack-of-tasks estimator).
    """
    layout = VariableLayout(model)
    poses = forward_kinematics(model, q)
    vel = None
    blocks, offsets, variances, slices = [], [], [], {}
    row = 0
    for s in sensors:
        r = sensor_rows(s)
        Y = np.zeros((r, layout.size))
        b = np.zeros(r)
        if isinstance(s, AccelerometerSensor):
            i = _link(model, s.link)
            Y[:, layout.acceleration(i).start + np.arange(3)] = np.eye(3)
            if vel is None:
                vel = inverse_dynamics(model, q, nu, np.zeros(model.nv), gravity=np.zeros(3)).velocity
            b = np.cross(vel[i, 3:], vel[i, :3])
        elif isinstance(s, WrenchSensor):
            i = _link(model, s.link)
            Y[:, layout.external(i)] = np.eye(6)
        elif isinstance(s, JointAccelerationSensor):
            try:
                dof = model.dof_of(s.joint)
            except KeyError:
                raise UnknownFrame(s.joint) from None
            Y[0, layout.joint_acceleration(dof)] = 1.0
        elif isinstance(s, MomentumRateSensor):
            com = center_of_mass(model, q, poses)
            for i, P in enumerate(poses):
                Y[:, layout.external(i)] = force_to_parent(Pose(P.rotation, P.position - com))
        else:
            raise TypeError(f"unsupported sensor {s!r}")
        blocks.append(Y)
        offsets.append(b)
        variances.append(np.full(r, s.variance))
        slices[s.name] = slice(row, row + r)
        row += r
    Y = np.vstack(blocks) if blocks else np.zeros((0, layout.size))
    if columns is not None:
        Y = Y[:, columns]
    term = GaussianTerm(Y, np.concatenate(offsets) if offsets else np.zeros(0), np.concatenate(variances) if variances else np.zeros(0))
    return MeasurementModel(list(sensors), term, slices)


def momentum_measurement(model: FloatingBaseModel, momentum_rate, gravity=GRAVITY) -> np.ndarray:
    """Reading of the momentum pseudo-sensor with the angular rate zeroed."""
    y = np.zeros(6)
    y[:3] = np.asarray(momentum_rate, dtype=float)[:3] - model.total_mass * np.asarray(gravity, dtype=float)
    return y


# --- rank and MAP -----------------------------------------------------------


@dataclass
class RankDiagnostic:
    full_rank: bool
    rank: int
    columns: int
    ratio: float
    deficient_directions: np.ndarray


def check_rank(D, Y, threshold: float = RANK_THRESHOLD) -> RankDiagnostic:
    """Column-rank test of ``[D; Y]`` by singular values relative to the largest."""
    A = np.vstack([np.atleast_2d(D), np.atleast_2d(Y)])
    cols = A.shape[1]
    _, sig, Vt = np.linalg.svd(A, full_matrices=True)
    sig = np.concatenate([sig, np.zeros(cols - sig.size)]) if sig.size < cols else sig
    smax = sig[0] if sig.size and sig[0] > 0 else 1.0
    rel = sig / smax
    good = rel >= threshold
    rank = int(good.sum())
    return RankDiagnostic(rank == cols, rank, cols, float(rel[-1]) if cols else 1.0, Vt[~good])


@dataclass
class Prior:
    mean: np.ndarray
    variance: np.ndarray

    @staticmethod
    def weak(size: int, variance: float = DEFAULT_PRIOR_VARIANCE) -> "Prior":
        return Prior(np.zeros(size), np.full(size, variance))


@dataclass
class MAPResult:
    mean: np.ndarray
    covariance: np.ndarray
    layout: VariableLayout | None = None
    torques: np.ndarray | None = None
    external_wrenches: np.ndarray | None = None
    rank: RankDiagnostic | None = None


def _spd_factor(A):
    try:
        return sla.cho_factor(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise SingularNormalEquations(str(exc)) from None


def map_estimate(
    constraints: GaussianTerm | None,
    measurements: GaussianTerm | MeasurementModel | None,
    prior: Prior,
    y,
    model: FloatingBaseModel | None = None,
) -> MAPResult:
    """Closed-form posterior mean and covariance.

    The model constraints fold into the prior as an information matrix
    (the inverse of ``Sigma_D_bar``) and the measurements add to it. A single
    Cholesky factor of the posterior information gives both outputs.
    """
    if isinstance(measurements, MeasurementModel):
        measurements = measurements.term
    mu_d = np.asarray(prior.mean, dtype=float)
    inv_prior = np.diag(1.0 / np.asarray(prior.variance, dtype=float))
    info = inv_prior.copy()
    vec = inv_prior @ mu_d
    if constraints is not None and constraints.rows:
        D, b, w = constraints.matrix, constraints.offset, 1.0 / constraints.variance
        info += D.T @ (w[:, None] * D)
        vec -= D.T @ (w * b)
    if measurements is not None and measurements.rows:
        Y, bY, wy = measurements.matrix, measurements.offset, 1.0 / measurements.variance
        info = info + Y.T @ (wy[:, None] * Y)
        vec = vec + Y.T @ (wy * (np.asarray(y, dtype=float) - bY))
    # info_bar @ mu_bar equals vec, so the update is solved without forming mu_bar
    factor = _spd_factor(info)
    mean = sla.cho_solve(factor, vec)
    cov = sla.cho_solve(factor, np.eye(info.shape[0]))
    result = MAPResult(mean, cov)
    if model is not None:
        layout = VariableLayout(model)
        if mean.size == layout.size:
            result.layout = layout
            result.torques = joint_torques_from(mean, model)
            result.external_wrenches = layout.unpack(mean)["external"]
    if constraints is not None and measurements is not None:
        result.rank = check_rank(constraints.matrix, measurements.matrix)
    return result


def joint_torques_from(d, model: FloatingBaseModel) -> np.ndarray:
    """Project each joint wrench on its motion subspace."""
    layout = VariableLayout(model)
    tau = np.zeros(model.n)
    for k, joint in enumerate(model.joints):
        idx = model.dof_index[k]
        if idx >= 0:
            tau[idx] = joint.motion_subspace[:, 0] @ np.asarray(d)[layout.joint_wrench(k)]
    return tau


def joint_effort(*torques) -> float:
    """Euclidean norm of the torques of one composite joint."""
    return float(np.linalg.norm(np.asarray(torques, dtype=float)))


def composite_efforts(model: FloatingBaseModel, tau) -> dict[str, float]:
    tau = np.asarray(tau, dtype=float)
    return {name: joint_effort(*tau[idx]) for name, idx in model.composite_joints.items()}


# --- ground truth -----------------------------------------------------------


def ground_truth_variables(model, q, nu, nu_dot, external, gravity=GRAVITY) -> np.ndarray:
    """Dynamic-variables vector implied by a motion and its external wrenches.

    Consistent (zero constraint residual) only when ``external`` balances the
    base, i.e. when the generalized base force of the motion is zero.
    """
    layout = VariableLayout(model)
    res = inverse_dynamics(model, q, nu, nu_dot, gravity, external)
    d = np.zeros(layout.size)
    for i in range(model.n_links):
        d[layout.acceleration(i)] = res.acceleration[i]
        d[layout.external(i)] = external[i]
    for k, joint in enumerate(model.joints):
        d[layout.joint_wrench(k)] = res.joint_wrench[joint.child]
    d[layout._joint_acc0 :] = np.asarray(nu_dot)[6:]
    return d


def base_wrench_map(model, poses, link: int) -> np.ndarray:
    """Generalized base force produced by a unit wrench on ``link`` (link coordinates)."""
    P = poses[link]
    return force_to_parent(Pose(P.rotation, P.position - poses[0].position))


def distribute_support_wrenches(model, q, base_force, links: Sequence[str]) -> np.ndarray:
    """Minimum-norm external wrenches on ``links`` that supply ``base_force``.

    Returns an ``(n_links, 6)`` array in link coordinates, zero for other links.
    """
    poses = forward_kinematics(model, q)
    idx = [model.link_index(l) for l in links]
    G = np.hstack([base_wrench_map(model, poses, i) for i in idx])
    sol = np.linalg.lstsq(G, np.asarray(base_force, dtype=float), rcond=None)[0]
    out = np.zeros((model.n_links, 6))
    for k, i in enumerate(idx):
        out[i] = sol[6 * k : 6 * k + 6]
    return out


# --- stack of tasks ---------------------------------------------------------


@dataclass
class StackOfTasksResult:
    task1_wrenches: np.ndarray
    task1: MAPResult
    task2: MAPResult


def stack_of_tasks_estimate(
    model: FloatingBaseModel,
    q: Configuration,
    nu,
    feet_wrenches: dict,
    momentum_rate,
    hands: Sequence[str],
    extra_sensors: Sequence[Sensor] = (),
    extra_readings=None,
    feet_variance: float = FEET_VARIANCE,
    hands_variance: float = HANDS_VARIANCE,
    momentum_variance: float = MOMENTUM_VARIANCE,
    other_links_variance: float = FEET_VARIANCE,
    model_variance: float = DEFAULT_MODEL_VARIANCE,
    prior_variance: float = DEFAULT_PRIOR_VARIANCE,
    task2_wrench_variance: float = FEET_VARIANCE,
    gravity=GRAVITY,
) -> StackOfTasksResult:
    """Two-task estimation of external wrenches without hand sensors.

    Task 1 estimates only the external wrenches from the feet readings, a
    zero reading on every link that is neither foot nor hand, and the
    momentum pseudo-sensor. Task 2 runs the full MAP with the task-1 wrenches
    as trusted wrench readings plus ``extra_sensors``.
    """
    layout = VariableLayout(model)
    hands = set(hands)
    for name in list(hands) + list(feet_wrenches):
        _link(model, name)
    sensors, readings = [], []
    for i, name in enumerate(model.link_names):
        if name in feet_wrenches:
            sensors.append(WrenchSensor(f"wrench:{name}", feet_variance, name))
            readings.append(np.asarray(feet_wrenches[name], dtype=float))
        elif name in hands:
            sensors.append(WrenchSensor(f"wrench:{name}", hands_variance, name))
            readings.append(np.zeros(6))
        else:
            sensors.append(WrenchSensor(f"wrench:{name}", other_links_variance, name))
            readings.append(np.zeros(6))
    sensors.append(MomentumRateSensor("momentum", momentum_variance))
    readings.append(momentum_measurement(model, momentum_rate, gravity))
    cols = layout.external_columns
    meas1 = build_measurement_model(model, q, nu, sensors, columns=cols)
    task1 = map_estimate(None, meas1, Prior.weak(cols.size, prior_variance), np.concatenate(readings))
    wrenches = task1.mean.reshape(model.n_links, 6)

    sensors2 = [WrenchSensor(f"wrench:{n}", task2_wrench_variance, n) for n in model.link_names] + list(extra_sensors)
    y2 = [wrenches.reshape(-1)]
    if extra_sensors:
        y2.append(np.asarray(extra_readings, dtype=float).reshape(-1))
    meas2 = build_measurement_model(model, q, nu, sensors2)
    constraints = build_constraint_model(model, q, nu, model_variance)
    task2 = map_estimate(constraints, meas2, Prior.weak(layout.size, prior_variance), np.concatenate(y2), model)
    return StackOfTasksResult(wrenches, task1, task2)

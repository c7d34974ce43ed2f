import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from floatbase.dynamics import rnea
from floatbase.estimation import (
    AccelerometerSensor,
    GaussianTerm,
    JointAccelerationSensor,
    MomentumRateSensor,
    Prior,
    UnknownFrame,
    VariableLayout,
    WrenchSensor,
    build_constraint_model,
    build_measurement_model,
    check_rank,
    composite_efforts,
    distribute_support_wrenches,
    ground_truth_variables,
    joint_effort,
    joint_torques_from,
    map_estimate,
)
from floatbase.kinematics import Configuration, random_configuration
from floatbase.library import HUMAN3_SOLES
from floatbase.model import FloatingBaseModel, LinkSpec, build_human_template
from floatbase.spatial import Pose, SpatialInertia, exp_so3

seeds = st.integers(0, 2**31 - 1)
FEET = list(HUMAN3_SOLES)


def consistent_state(model, rng, supports):
    """Random motion whose base force is supplied by minimum-norm support wrenches."""
    q = random_configuration(model, rng, 0.5)
    nu, nu_dot = rng.normal(size=model.nv), rng.normal(size=model.nv)
    external = distribute_support_wrenches(model, q, rnea(model, q, nu, nu_dot)[:6], supports)
    return q, nu, nu_dot, external, ground_truth_variables(model, q, nu, nu_dot, external)


def full_sensors(model, variance=1e-6):
    sensors = [AccelerometerSensor(f"acc:{n}", variance, n) for n in model.link_names]
    sensors += [WrenchSensor(f"wrench:{n}", variance, n) for n in model.link_names]
    sensors += [JointAccelerationSensor(f"ddq:{j}", variance, j) for j in model.dof_names]
    return sensors


def weighted_least_squares(constraints, meas, prior, y):
    """Dense oracle: one stacked whitened least-squares solve."""
    rows = [constraints.matrix / np.sqrt(constraints.variance)[:, None]]
    rhs = [-constraints.offset / np.sqrt(constraints.variance)]
    rows.append(meas.matrix / np.sqrt(meas.variance)[:, None])
    rhs.append((y - meas.offset) / np.sqrt(meas.variance))
    rows.append(np.diag(1.0 / np.sqrt(prior.variance)))
    rhs.append(prior.mean / np.sqrt(prior.variance))
    return np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)[0]


def test_constraint_model_static_single_link():
    body = SpatialInertia(4.0, [0.0, 0.0, 0.3], np.diag([0.1, 0.1, 0.05]))
    model = FloatingBaseModel.from_named("block", [LinkSpec("Block", body)], [])
    q = Configuration(Pose(exp_so3([0.1, 0.2, 0.0]), np.zeros(3)), [])
    zero = np.zeros(6)
    support = distribute_support_wrenches(model, q, rnea(model, q, zero, zero)[:6], ["Block"])
    d = ground_truth_variables(model, q, zero, zero, support)
    cm = build_constraint_model(model, q, zero)
    assert np.linalg.norm(cm.matrix @ d + cm.offset) <= 1e-10
    # the proper acceleration of a resting body is the gravity offset
    assert np.allclose(d[:3], q.base.rotation.T @ [0.0, 0.0, 9.81])


@given(seeds)
def test_constraint_model_holds_on_ground_truth(human, seed):
    q, nu, _, _, d = consistent_state(human, np.random.default_rng(seed), FEET)
    cm = build_constraint_model(human, q, nu)
    assert np.linalg.norm(cm.matrix @ d + cm.offset) <= 1e-9 * (1.0 + np.linalg.norm(d))


def test_constraint_model_shape_and_sparsity(chain, rng):
    q, nu = random_configuration(chain, rng), rng.normal(size=chain.nv)
    cm = build_constraint_model(chain, q, nu)
    layout = VariableLayout(chain)
    assert cm.matrix.shape == (12 * chain.n_links - 6, layout.size)
    for dof in range(chain.n):
        rows = np.flatnonzero(cm.matrix[:, layout.joint_acceleration(dof)])
        # only the propagation block of that joint touches its acceleration
        assert rows.min() >= 6 * dof and rows.max() < 6 * dof + 6


def test_measurement_layouts(human):
    q = Configuration(Pose(), [0.1, 0.2])
    nu = np.zeros(human.nv)
    layout = VariableLayout(human)
    encoder = build_measurement_model(human, q, nu, [JointAccelerationSensor("e", 1.0, "jTorso")])
    assert encoder.Y.shape == (1, layout.size) and encoder.Y[0, layout.joint_acceleration(1)] == 1.0
    imu = build_measurement_model(human, q, nu, [AccelerometerSensor("a", 1.0, "RightFoot")])
    block = layout.acceleration(1)
    assert np.array_equal(imu.Y[:, block.start : block.start + 3], np.eye(3)) and np.count_nonzero(imu.Y) == 3
    task1 = [WrenchSensor(n, 1.0, n) for n in human.link_names] + [MomentumRateSensor("m", 1.0)]
    assert build_measurement_model(human, q, nu, task1).Y.shape[0] == 6 * human.n_links + 6
    with pytest.raises(UnknownFrame):
        build_measurement_model(human, q, nu, [WrenchSensor("w", 1.0, "Tail")])


def test_rank_diagnostic(human, rng):
    q, nu = random_configuration(human, rng), rng.normal(size=human.nv)
    D = build_constraint_model(human, q, nu).matrix
    full = build_measurement_model(human, q, nu, full_sensors(human)).Y
    assert check_rank(D, full).full_rank
    partial = [s for s in full_sensors(human) if not isinstance(s, WrenchSensor)]
    diag = check_rank(D, build_measurement_model(human, q, nu, partial).Y)
    assert not diag.full_rank and diag.rank < diag.columns and diag.ratio < 1e-10


def test_map_limits():
    y = np.array([1.0, -2.0, 0.5])
    meas = GaussianTerm(np.eye(3), np.zeros(3), 1e-12)
    out = map_estimate(None, meas, Prior.weak(3), y)
    assert np.allclose(out.mean, y, atol=1e-9)
    prior = Prior(np.array([0.3, 0.1, -0.4]), np.ones(3))
    assert np.allclose(map_estimate(None, None, prior, np.zeros(0)).mean, prior.mean)


@given(seeds)
def test_map_recovers_noiseless_ground_truth(human, seed):
    q, nu, nu_dot, external, d = consistent_state(human, np.random.default_rng(seed), FEET)
    meas = build_measurement_model(human, q, nu, full_sensors(human))
    y = meas.Y @ d + meas.bias
    out = map_estimate(build_constraint_model(human, q, nu), meas, Prior.weak(d.size), y, human)
    assert np.linalg.norm(out.mean - d) <= 1e-6 * np.linalg.norm(d)
    torques = rnea(human, q, nu, nu_dot, external=external)[6:]
    assert np.allclose(out.torques, torques, atol=1e-6 * np.linalg.norm(d))


def test_map_matches_dense_least_squares(human, rng):
    q, nu, _, _, d = consistent_state(human, rng, FEET)
    meas = build_measurement_model(human, q, nu, full_sensors(human, 1e-2)).term
    y = meas.matrix @ d + meas.offset + rng.normal(scale=0.1, size=meas.rows)
    cm = build_constraint_model(human, q, nu)
    prior = Prior.weak(d.size)
    out = map_estimate(cm, meas, prior, y)
    oracle = weighted_least_squares(cm, meas, prior, y)
    assert np.linalg.norm(out.mean - oracle) <= 1e-9 * np.linalg.norm(oracle)


def test_map_matches_joint_gaussian_conditioning(rng):
    body = SpatialInertia(2.0, [0.1, 0.0, 0.0], np.diag([0.1, 0.2, 0.15]))
    links = [LinkSpec("A", body), LinkSpec("B", body), LinkSpec("C", body)]
    joints = [("j1", "A", "B", dict(kind="revolute", origin_xyz=(0.2, 0, 0), axis=(0, 0, 1))),
              ("j2", "B", "C", dict(kind="revolute", origin_xyz=(0.2, 0, 0), axis=(0, 1, 0)))]
    model = FloatingBaseModel.from_named("tri", links, joints)
    q, nu = random_configuration(model, rng), rng.normal(size=model.nv)
    cm = build_constraint_model(model, q, nu, 1e-2)
    meas = build_measurement_model(model, q, nu, full_sensors(model, 1e-1)).term
    prior = Prior(rng.normal(size=VariableLayout(model).size), np.full(VariableLayout(model).size, 10.0))
    y = rng.normal(size=meas.rows)
    out = map_estimate(cm, meas, prior, y)
    # condition the joint Gaussian of (d, constraint residual, readings) on residual 0 and readings y
    H = np.vstack([cm.matrix, meas.matrix])
    offset = np.concatenate([cm.offset, meas.offset])
    R = np.diag(np.concatenate([cm.variance, meas.variance]))
    S = np.diag(prior.variance)
    z = np.concatenate([np.zeros(cm.rows), y])
    gain = S @ H.T @ np.linalg.inv(H @ S @ H.T + R)
    mean = prior.mean + gain @ (z - H @ prior.mean - offset)
    cov = S - gain @ H @ S
    assert np.linalg.norm(out.mean - mean) <= 1e-9 * np.linalg.norm(mean)
    assert np.linalg.norm(out.covariance - cov) <= 1e-9 * np.linalg.norm(cov)


def test_stiff_constraints_hold_in_posterior(human, rng):
    q, nu, _, _, d = consistent_state(human, rng, FEET)
    meas = build_measurement_model(human, q, nu, full_sensors(human, 1e-2)).term
    y = meas.matrix @ d + meas.offset + rng.normal(scale=0.1, size=meas.rows)
    cm = build_constraint_model(human, q, nu, 1e-9)
    out = map_estimate(cm, meas, Prior.weak(d.size), y)
    assert np.linalg.norm(cm.matrix @ out.mean + cm.offset) <= 1e-6


def test_trusting_a_channel_pulls_its_estimate(human, rng):
    q, nu, _, _, d = consistent_state(human, rng, FEET)
    sensors = full_sensors(human, 1e-2)
    meas = build_measurement_model(human, q, nu, sensors)
    y = meas.Y @ d + meas.bias + rng.normal(scale=0.1, size=meas.Y.shape[0])
    cm = build_constraint_model(human, q, nu)
    gaps = []
    for variance in (1e-1, 1e-2, 1e-3, 1e-4):
        tuned = [WrenchSensor(s.name, variance, s.link) if s.name == "wrench:RightHand" else s for s in sensors]
        model_meas = build_measurement_model(human, q, nu, tuned)
        mean = map_estimate(cm, model_meas, Prior.weak(d.size), y).mean
        gaps.append(np.linalg.norm(model_meas.channel(model_meas.Y @ mean + model_meas.bias - y, "wrench:RightHand")))
    assert np.all(np.diff(gaps) < 0.0)


def test_joint_torque_selection():
    body = SpatialInertia(1.0, np.zeros(3), 0.1 * np.eye(3))
    model = FloatingBaseModel.from_named(
        "hinge", [LinkSpec("A", body), LinkSpec("B", body)], [("j", "A", "B", dict(kind="revolute", axis=(0, 0, 1)))]
    )
    layout = VariableLayout(model)
    d = np.zeros(layout.size)
    assert np.array_equal(joint_torques_from(d, model), [0.0])
    d[layout.joint_wrench(0)] = [0, 0, 0, 0, 0, 5.0]
    assert joint_torques_from(d, model) == pytest.approx([5.0])


def test_joint_effort_examples():
    assert joint_effort(3.0, 4.0, 0.0) == pytest.approx(5.0)
    assert joint_effort(0.0, 0.0, 0.0) == 0.0
    assert joint_effort(-2.5) == pytest.approx(2.5)
    human = build_human_template(70.0, reduced=True)
    efforts = composite_efforts(human, np.ones(human.n))
    assert efforts["jLeftElbow"] == pytest.approx(np.sqrt(2.0))

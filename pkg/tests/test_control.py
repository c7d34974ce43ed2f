import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from floatbase.control import (
    AdvancementState,
    DegenerateDirection,
    DegenerateTangent,
    HelpConvention,
    MinimumJerkTrajectory,
    PointMassState,
    RampTrajectory,
    RankDeficientTask,
    SingularBaseJacobian,
    SingularGamma,
    SinusoidTrajectory,
    TaskFrame,
    advancement_rate,
    advancement_update,
    alpha_projection,
    assisting_partner,
    centroidal_base_jacobian,
    coupled_wrench_map,
    deadzone,
    feedback_linearization_torques,
    momentum_balance_wrench,
    momentum_torques,
    mutual_wrench_pairs,
    partner_aware_terms,
    partner_aware_torques,
    point_mass_step,
    postural_torque,
    simulate_point_mass,
    updated_desired_dynamics,
)
from floatbase.dynamics import (
    Agent,
    ContactFrame,
    bias_forces,
    center_of_mass,
    mass_matrix,
    momentum_rate_balance,
    rnea,
    world_wrench_to_link,
)
from floatbase.harness.scenarios import coupled_twin_arms, robot_tip_task
from floatbase.kinematics import Configuration, forward_kinematics
from floatbase.library import HUMAN3_SOLES, serial_chain
from floatbase.model import FloatingBaseModel, LinkSpec
from floatbase.simulate import ConstrainedSystem
from floatbase.spatial import Pose, SpatialInertia

seeds = st.integers(0, 2**31 - 1)
vec = arrays(np.float64, 4, elements=st.floats(-10.0, 10.0))
TIP = TaskFrame("Link2", np.array([0.0, 0.0, -1.0]), (0, 2))


# --- feedback linearization -------------------------------------------------


def _task_acceleration(model, q, nu, task, tau):
    """Forward dynamics of the welded-base pendulum, mapped to the task."""
    M, h = mass_matrix(model, q)[6:, 6:], bias_forces(model, q, nu)[6:]
    sdd = np.linalg.solve(M, tau - h)
    poses = forward_kinematics(model, q)
    return task.jacobian(model, q, poses)[:, 6:] @ sdd + task.bias(model, q, nu, poses), sdd


def test_feedback_linearization_tracks_pd_target(pendulum):
    q, nu = Configuration(Pose(), [0.4, 0.6]), np.zeros(pendulum.nv)
    goal = forward_kinematics(pendulum, Configuration(Pose(), [0.9, 0.2]))[2].apply(TIP.offset)[[0, 2]]
    dt = 1e-3
    for _ in range(300):
        tip = forward_kinematics(pendulum, q)[2].apply(TIP.offset)[[0, 2]]
        xd = TIP.jacobian(pendulum, q) @ nu
        target = 25.0 * (goal - tip) - 10.0 * xd
        out = feedback_linearization_torques(pendulum, q, nu, TIP, target, fixed_base=True)
        acc, sdd = _task_acceleration(pendulum, q, nu, TIP, out.torque)
        assert np.allclose(acc, target, atol=1e-6)
        nu = nu + dt * np.r_[np.zeros(6), sdd]
        q = q.with_joints(q.joints + dt * nu[6:])


def test_feedback_linearization_free_motion_needs_no_torque(pendulum):
    q, nu = Configuration(Pose(), [0.4, -0.6]), np.r_[np.zeros(6), 0.3, -0.2]
    free, _ = _task_acceleration(pendulum, q, nu, TIP, np.zeros(2))
    out = feedback_linearization_torques(pendulum, q, nu, TIP, free, fixed_base=True)
    assert np.allclose(out.torque, 0.0, atol=1e-10)


def test_feedback_linearization_nullspace(pendulum):
    task = TaskFrame("Link2", np.array([0.0, 0.0, -1.0]), (0,))
    q, nu = Configuration(Pose(), [0.4, -0.6]), np.r_[np.zeros(6), 0.3, -0.2]
    plain = feedback_linearization_torques(pendulum, q, nu, task, [1.5], fixed_base=True)
    extra = feedback_linearization_torques(pendulum, q, nu, task, [1.5], tau0=[4.0, -7.0], fixed_base=True)
    assert not np.allclose(plain.torque, extra.torque)
    a1, _ = _task_acceleration(pendulum, q, nu, task, plain.torque)
    a2, _ = _task_acceleration(pendulum, q, nu, task, extra.torque)
    assert np.allclose(a1, a2, atol=1e-9)


def test_feedback_linearization_rank_deficient(pendulum):
    with pytest.raises(RankDeficientTask):
        feedback_linearization_torques(
            pendulum, Configuration.neutral(pendulum), np.zeros(pendulum.nv), TaskFrame("Base"), np.zeros(6), fixed_base=True
        )


# --- coupled wrench map -----------------------------------------------------


@given(seeds, arrays(np.float64, 2, elements=st.floats(-1.5, 1.5)), vec)
def test_wrench_map_matches_kkt(seed, robot_joints, torques):
    system = coupled_twin_arms(robot_joints=tuple(robot_joints), seed=seed)
    wm = coupled_wrench_map(system, torques[:2], torques[2:])
    kkt = system.solve([torques[:2], torques[2:]], stabilize=False).wrenches
    assert np.allclose(wm.wrenches, kkt, atol=1e-6 * (1.0 + np.abs(kkt).max()))


def test_wrench_map_statics_and_affine_part():
    system = coupled_twin_arms(velocity_scale=0.0)
    zero = np.zeros(2)
    wm = coupled_wrench_map(system, zero, zero)
    assert np.allclose(wm.wrenches, wm.G3)
    static = system.solve([zero, zero], stabilize=False).wrenches
    assert np.allclose(wm.wrenches, static, atol=1e-9)
    on_partner, on_robot = mutual_wrench_pairs(wm.wrenches, 1)[0]
    assert np.allclose(on_partner, -on_robot)


def test_wrench_map_singular_gamma(arm):
    system = coupled_twin_arms()
    twice = [system.agents[0], Agent(arm, (ContactFrame("Base"), ContactFrame("Base")))]
    doubled = ConstrainedSystem(twice, system.q, system.nu, system.mutual)
    with pytest.raises(SingularGamma):
        coupled_wrench_map(doubled, np.zeros(2), np.zeros(2))


# --- alpha projection -------------------------------------------------------


def test_alpha_projection_examples():
    d = np.array([3.0, 4.0])
    par = alpha_projection(2.0 * d / 5.0, d)
    assert par.alpha == pytest.approx(2.0) and par.beta == pytest.approx(0.0, abs=1e-15)
    assert alpha_projection([-4.0, 3.0], d).alpha == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DegenerateDirection):
        alpha_projection([1.0, 0.0], [0.0, 1e-12])
    assert deadzone(5e-4) == 0.0 and deadzone(-2e-3) == -2e-3


@given(vec, vec, st.floats(1e-3, 1e3))
def test_alpha_projection_properties(source, direction, scale):
    assume(np.linalg.norm(direction) > 1e-3)
    dec = alpha_projection(source, direction)
    assert np.allclose(dec.reconstruct(), source, atol=1e-12 * (1 + np.abs(source).max()))
    assert abs(dec.parallel_unit @ dec.perpendicular_unit) <= 1e-12
    assert alpha_projection(source, scale * direction).alpha == pytest.approx(dec.alpha, rel=1e-9, abs=1e-9)
    assert alpha_projection(scale * source, direction).alpha == pytest.approx(scale * dec.alpha, rel=1e-9, abs=1e-9)


def test_help_conventions():
    assert HelpConvention.ERROR_DIRECTION.helpful(-1.0) and HelpConvention.ERROR_DIRECTION.helpful(0.0)
    assert not HelpConvention.ERROR_DIRECTION.helpful(0.5)
    assert HelpConvention.DESIRED_VELOCITY.helpful(0.5) and not HelpConvention.DESIRED_VELOCITY.helpful(0.0)


# --- partner-aware law ------------------------------------------------------


def test_partner_aware_without_partner_is_classical():
    system = coupled_twin_arms(seed=3)
    task = robot_tip_task()
    integral = np.array([0.01, -0.02])
    out = partner_aware_torques(system, task, integral, np.zeros(2))
    assert out.alpha == 0.0
    assert np.allclose(out.torque, -np.linalg.pinv(out.Delta) @ (out.Lambda + task.K_D @ out.error))


@given(seeds, st.floats(0.1, 10.0))
def test_alpha_scales_with_partner_torque(seed, c):
    system = coupled_twin_arms(seed=seed)
    tau_ea = np.random.default_rng(seed).normal(size=2)
    a = partner_aware_torques(system, robot_tip_task(), np.zeros(2), tau_ea).alpha
    b = partner_aware_torques(system, robot_tip_task(), np.zeros(2), c * tau_ea).alpha
    assert b == pytest.approx(c * a, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("assist", [0.0, 5.0, -5.0])
def test_closed_loop_lyapunov_rate(assist):
    """The logged closed-loop rate matches the rate of the simulated motion."""
    system = coupled_twin_arms(seed=1)
    task = robot_tip_task()
    integral = np.array([0.02, -0.01])
    terms = partner_aware_terms(system, task, integral)
    tau_ea = assisting_partner(assist)(terms)
    out = partner_aware_torques(system, task, integral, tau_ea, terms=terms)
    step = system.solve([tau_ea, out.torque], stabilize=False)
    robot, q, nu = system.agents[1].model, system.q[1], system.nu[1]
    J = task.frame.jacobian(robot, q)
    e_dot = J @ step.acceleration[1] + task.frame.bias(robot, q, nu)
    rate = out.error @ task.K_d @ e_dot + integral @ task.K_p @ out.error
    assert rate == pytest.approx(out.lyapunov_rate_closed_loop, abs=1e-6)
    assert out.lyapunov_rate_law <= 0.0


def test_assistance_lowers_closed_loop_rate_at_matched_state():
    system = coupled_twin_arms(seed=2)
    task = robot_tip_task()
    terms = partner_aware_terms(system, task, np.zeros(2))
    alone = partner_aware_torques(system, task, np.zeros(2), np.zeros(2), terms=terms)
    helped = partner_aware_torques(system, task, np.zeros(2), assisting_partner(5.0)(terms), terms=terms)
    assert helped.alpha < 0.0
    assert helped.lyapunov_rate_closed_loop < alone.lyapunov_rate_closed_loop


# --- trajectory advancement -------------------------------------------------


def test_advancement_rate_examples():
    tangent = np.array([0.2, -0.1])
    assert advancement_rate(tangent, tangent, 10.0) == 1.0
    assert advancement_rate(2.0 * tangent, tangent, 10.0) == pytest.approx(2.0)
    assert advancement_rate(15.0 * tangent, tangent, 10.0) == 10.0
    assert advancement_rate(-3.0 * tangent, tangent, 10.0) == 1.0
    with pytest.raises(DegenerateTangent):
        advancement_rate(tangent, np.zeros(2), 10.0)
    with pytest.raises(ValueError):
        AdvancementState(upper=0.5)


@given(st.lists(st.floats(-50.0, 50.0), min_size=1, max_size=30), st.floats(1.0, 20.0))
def test_advancement_stays_in_bounds(velocities, upper):
    trajectory = SinusoidTrajectory(np.zeros(1), np.ones(1), 0.3)
    state = AdvancementState(upper=upper)
    for v in velocities:
        try:
            nxt = advancement_update(state, [v], trajectory, 0.01)
        except DegenerateTangent:
            break
        assert 1.0 <= nxt.psi_dot <= upper
        assert nxt.psi > state.psi
        state = nxt


def test_advancement_filtered_acceleration():
    trajectory = RampTrajectory(np.zeros(1), np.array([0.1]))
    state = AdvancementState()
    state = advancement_update(state, [0.3], trajectory, 0.01)
    assert state.psi_dot == pytest.approx(3.0) and state.psi_ddot == 0.0
    state = advancement_update(state, [0.3], trajectory, 0.01)
    # one step late and low-passed: tau = 1/(2 pi 5), gain dt/(tau+dt)
    gain = 0.01 / (1.0 / (10.0 * np.pi) + 0.01)
    assert state.psi_ddot == pytest.approx(gain * 200.0)


def test_trajectory_references_chain_rule():
    trajectory = MinimumJerkTrajectory(np.zeros(2), np.array([1.0, -2.0]), 2.0)
    x, dx, ddx = trajectory.evaluate(0.7)
    _, xd, xdd = trajectory.references(0.7, 1.5, 0.4)
    assert np.allclose(xd, 1.5 * dx) and np.allclose(xdd, 0.4 * dx + 1.5**2 * ddx)
    assert np.allclose(trajectory.evaluate(5.0)[0], [1.0, -2.0]) and np.allclose(trajectory.evaluate(5.0)[1], 0.0)


def test_updated_desired_dynamics_examples():
    xdd = np.array([0.5, -1.0])
    K = np.eye(2)
    zero = np.zeros(2)
    assert np.allclose(updated_desired_dynamics(xdd, zero, zero, K, K, 0.0, zero, HelpConvention.DESIRED_VELOCITY), xdd)
    e, ei, u = np.array([0.1, 0.2]), np.array([0.3, 0.0]), np.array([1.0, 0.0])
    classical = updated_desired_dynamics(xdd, e, ei, 10 * K, K, 0.0, u, HelpConvention.DESIRED_VELOCITY)
    assert np.allclose(classical, xdd - 10 * e - ei)
    gated = updated_desired_dynamics(xdd, e, ei, 10 * K, K, 0.7, u, HelpConvention.ERROR_DIRECTION)
    assert np.allclose(gated, classical)
    kept = updated_desired_dynamics(xdd, e, ei, 10 * K, K, -0.7, u, HelpConvention.ERROR_DIRECTION)
    assert np.allclose(kept, classical - 0.7 * u)


# --- point mass -------------------------------------------------------------


def test_point_mass_step_examples():
    nxt = point_mass_step(PointMassState(0.0, 1.0), 0.0, 0.0, 0.01)
    assert nxt.position == pytest.approx(0.01) and nxt.velocity == 1.0
    nxt = point_mass_step(PointMassState(2.0, -0.5), 3.0, -3.0, 0.01)
    assert nxt.velocity == -0.5


def test_point_mass_pd_matches_linear_ode():
    K_D, K_P, v_d, dt = 10.0, 1.0, 0.1, 1e-5
    state, integral = PointMassState(0.0, 0.6), 0.0
    r1, r2 = np.roots([1.0, K_D, K_P])
    c = (0.6 - v_d) / (r1 - r2)
    for k in range(1, 20001):
        e = state.velocity - v_d
        state = point_mass_step(state, -K_D * e - K_P * integral, 0.0, dt)
        integral += dt * (state.velocity - v_d)
        if k % 2000 == 0:
            t = k * dt
            exact = c * (r1 * np.exp(r1 * t) - r2 * np.exp(r2 * t))
            assert state.velocity - v_d == pytest.approx(exact, abs=1e-4)


@given(st.floats(-20.0, 20.0), st.floats(0.1, 20.0), st.floats(-1.0, 1.0))
def test_gated_point_mass_lyapunov_never_increases(amplitude, frequency, v0):
    trace = simulate_point_mass(
        RampTrajectory(np.zeros(1), np.array([0.1])),
        lambda t, s: amplitude * np.sin(frequency * t),
        HelpConvention.ERROR_DIRECTION,
        steps=2000,
        initial=PointMassState(0.0, v0),
    )
    assert np.diff(trace.lyapunov).max() <= 1e-12


def test_advanced_point_mass_follows_nominal_rate_without_push():
    trace = simulate_point_mass(
        RampTrajectory(np.zeros(1), np.array([0.1])), lambda t, s: 0.0, HelpConvention.DESIRED_VELOCITY, 500, advance=True
    )
    assert np.array_equal(trace.psi_dot, np.ones_like(trace.psi_dot))


# --- momentum control -------------------------------------------------------


def test_momentum_balance_wrench_examples():
    f = momentum_balance_wrench(np.zeros(6), 70.0, np.eye(6))
    assert np.allclose(f, [0, 0, 70.0 * 9.81, 0, 0, 0])
    g = momentum_balance_wrench(np.zeros(6), 140.0, np.eye(6))
    assert np.allclose(g, 2.0 * f)
    with pytest.raises(SingularBaseJacobian):
        momentum_balance_wrench(np.zeros(6), 1.0, np.zeros((6, 6)))


def _stance(human):
    feet = [ContactFrame(name, offset) for name, offset in HUMAN3_SOLES.items()]
    return Configuration(Pose(), [0.25, -0.35]), feet


def _to_centroidal(model, q, contacts, wrench):
    poses = forward_kinematics(model, q)
    com = center_of_mass(model, q, poses)
    out = []
    for c, f in zip(contacts, np.asarray(wrench).reshape(-1, 6)):
        out.append(np.concatenate([f[:3], f[3:] + np.cross(c.position(model, poses) - com, f[:3])]))
    return out


def test_momentum_balance_wrench_closes_balance(human):
    q, feet = _stance(human)
    f = momentum_balance_wrench(np.zeros(6), human.total_mass, centroidal_base_jacobian(human, q, feet))
    zero = np.zeros(human.nv)
    assert np.linalg.norm(momentum_rate_balance(human, q, zero, zero, _to_centroidal(human, q, feet, f))) <= 1e-9


def test_momentum_torques_statics_equal_gravity_compensation(human):
    q, feet = _stance(human)
    f = momentum_balance_wrench(np.zeros(6), human.total_mass, centroidal_base_jacobian(human, q, feet))
    zero = np.zeros(human.nv)
    out = momentum_torques(human, q, zero, feet, f)
    poses = forward_kinematics(human, q)
    external = np.zeros((human.n_links, 6))
    for c, w in zip(feet, f.reshape(-1, 6)):
        i = human.link_index(c.link)
        external[i] += world_wrench_to_link(poses, i, c.position(human, poses), w)
    assert np.allclose(out.torque, rnea(human, q, zero, zero, external=external)[6:], atol=1e-8)


def test_momentum_torques_single_body():
    body = FloatingBaseModel.from_named("body", [LinkSpec("Body", SpatialInertia(5.0, np.zeros(3), 0.1 * np.eye(3)))], [])
    q = Configuration.neutral(body)
    f = momentum_balance_wrench(np.zeros(6), 5.0, centroidal_base_jacobian(body, q, [ContactFrame("Body")]))
    out = momentum_torques(body, q, np.zeros(6), [ContactFrame("Body")], f)
    assert out.torque.shape == (0,)
    assert np.allclose(f, [0, 0, 5.0 * 9.81, 0, 0, 0])


def test_postural_term_keeps_the_contact_wrench():
    model = serial_chain(10)
    rng = np.random.default_rng(0)
    q = Configuration(Pose(), rng.uniform(-1.5, 1.5, model.n))
    nu = np.r_[np.zeros(6), rng.normal(scale=0.3, size=model.n)]
    contacts = [ContactFrame("Base")]
    wrench = momentum_balance_wrench(np.array([0.5, -0.2, 0.3, 0.1, 0.0, -0.1]), model.total_mass,
                                     centroidal_base_jacobian(model, q, contacts))
    system = ConstrainedSystem([Agent(model, tuple(contacts))], [q], [nu])
    plain = momentum_torques(model, q, nu, contacts, wrench)
    tau0 = postural_torque(model, q, nu, contacts, wrench, np.zeros(model.n), 4.0, 2.0)
    postural = momentum_torques(model, q, nu, contacts, wrench, tau0)
    assert not np.allclose(plain.torque, postural.torque)
    for out in (plain, postural):
        realized = system.solve([out.torque], stabilize=False).wrenches
        assert np.allclose(realized, wrench, atol=1e-8)

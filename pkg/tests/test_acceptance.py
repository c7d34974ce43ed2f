"""The ten acceptance criteria at their stated tolerances."""

import time
from pathlib import Path

import numpy as np

from floatbase.control import (
    AdvancementState,
    HelpConvention,
    PointMassState,
    RampTrajectory,
    coupled_wrench_map,
    mutual_wrench_pairs,
    simulate_point_mass,
)
from floatbase.dynamics import bias_forces, centroidal_dynamics, mass_matrix, rnea, total_momentum
from floatbase.estimation import Prior, build_constraint_model, build_measurement_model, map_estimate
from floatbase.harness.config import load_config
from floatbase.harness.experiments import push_schedule, run_experiment
from floatbase.harness.scenarios import coupled_twin_arms
from floatbase.kinematics import (
    Configuration,
    IKState,
    LinkTarget,
    dynamical_ik_step,
    frame_jacobian,
    pose_residuals,
    random_configuration,
    targets_from_configuration,
)
from floatbase.library import chain5, human3
from floatbase.simulate import simulate_unconstrained
from floatbase.spatial import Pose, rot_z

from conftest import random_state, record_criterion
from test_estimation import FEET, consistent_state, full_sensors, weighted_least_squares
from test_kinematics import _fd_frame_velocity, planar_arm

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_criterion_01_dynamics_consistency():
    model = chain5()
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        q, nu, nu_dot = random_state(model, rng)
        residual = mass_matrix(model, q) @ nu_dot + bias_forces(model, q, nu) - rnea(model, q, nu, nu_dot)
        worst = max(worst, float(np.abs(residual).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 5.0
    record_criterion(1, "dynamics consistency", ok, f"max residual {worst:.2e} (tol 1e-8), {elapsed:.2f} s (limit 5 s)")
    assert ok


def test_criterion_02_jacobian_correctness():
    model = chain5()
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for k in range(100):
        q, nu, _ = random_state(model, rng)
        link = k % model.n_links
        analytic = frame_jacobian(model, q, link) @ nu
        worst = max(worst, float(np.linalg.norm(analytic - _fd_frame_velocity(model, q, nu, link)) / np.linalg.norm(analytic)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 5.0
    record_criterion(2, "jacobian correctness", ok, f"max relative error {worst:.2e} (tol 1e-5), {elapsed:.2f} s (limit 5 s)")
    assert ok


def test_criterion_03_centroidal_decoupling():
    model = chain5()
    rng = np.random.default_rng(3)
    off = 0.0
    for _ in range(20):
        q, nu, _ = random_state(model, rng)
        off = max(off, float(np.linalg.norm(centroidal_dynamics(model, q, nu).mass_matrix[:6, 6:])))
    q, nu, _ = random_state(model, rng, 0.5)
    _, qs, nus = simulate_unconstrained(model, q, nu, 5.0, gravity=np.zeros(3), samples=51)
    L0 = total_momentum(model, qs[0], nus[0])
    drift = max(float(np.linalg.norm(total_momentum(model, a, b) - L0)) for a, b in zip(qs, nus)) / float(np.linalg.norm(L0))
    ok = off <= 1e-8 and drift <= 1e-6
    record_criterion(3, "centroidal decoupling", ok, f"off-diagonal norm {off:.2e} (tol 1e-8), momentum drift {drift:.2e} over 5 s (tol 1e-6)")
    assert ok


def test_criterion_04_map_exactness():
    model = human3()
    rng = np.random.default_rng(4)
    worst_truth, worst_wls = 0.0, 0.0
    for _ in range(10):
        q, nu, _, _, d = consistent_state(model, rng, FEET)
        constraints = build_constraint_model(model, q, nu)
        meas = build_measurement_model(model, q, nu, full_sensors(model))
        out = map_estimate(constraints, meas, Prior.weak(d.size), meas.Y @ d + meas.bias)
        worst_truth = max(worst_truth, float(np.linalg.norm(out.mean - d) / np.linalg.norm(d)))
        noisy = meas.Y @ d + meas.bias + rng.normal(scale=0.05, size=meas.Y.shape[0])
        estimate = map_estimate(constraints, meas, Prior.weak(d.size), noisy).mean
        oracle = weighted_least_squares(constraints, meas.term, Prior.weak(d.size), noisy)
        worst_wls = max(worst_wls, float(np.linalg.norm(estimate - oracle) / np.linalg.norm(oracle)))
    ok = worst_truth <= 1e-6 and worst_wls <= 1e-9
    record_criterion(4, "MAP exactness", ok, f"ground truth error {worst_truth:.2e} (tol 1e-6), closed form vs dense WLS {worst_wls:.2e} (tol 1e-9)")
    assert ok


def test_criterion_05_sensorless_force_estimation(tmp_path):
    start = time.perf_counter()
    report = run_experiment(load_config(CONFIGS / "held_mass.ini"), tmp_path)
    elapsed = time.perf_counter() - start
    hand = report.metrics["hand_force_relative_error"]
    feet = report.metrics["feet_deviation_in_std"]
    ok = hand <= 0.02 and feet <= 10.0 and elapsed < 10.0
    record_criterion(5, "sensorless force estimation", ok,
                     f"hand force error {100 * hand:.2f}% (tol 2%), feet within {feet:.2e} std (tol 10), {elapsed:.2f} s (limit 10 s)")
    assert ok


def test_criterion_06_dynamical_ik_convergence():
    arm = planar_arm(lengths=(1.0,))
    gain, dt = 1.0, 1.0 / 60.0
    target = [LinkTarget("L1", rotation=rot_z(0.0))]
    state = IKState(Configuration(Pose(), [0.01]), gain)
    r0 = abs(pose_residuals(arm, target, state.configuration)[2])
    worst = 0.0
    for k in range(1, 101):
        state = dynamical_ik_step(arm, state, target, dt, fixed_base=True)
        worst = max(worst, abs(abs(state.residual[2]) / r0 / np.exp(-gain * k * dt) - 1.0))

    model = chain5()
    rng = np.random.default_rng(6)
    q = random_configuration(model, rng)
    goal = Configuration(q.base, q.joints + rng.uniform(-0.1, 0.1, model.n))
    targets = targets_from_configuration(model, goal, ["Link4"]) + targets_from_configuration(model, goal, ["Link2"], orientation=False)
    chain_state = IKState(q, 10.0)
    norms = [float(np.linalg.norm(pose_residuals(model, targets, q)))]
    for _ in range(120):
        chain_state = dynamical_ik_step(model, chain_state, targets, dt)
        norms.append(float(np.linalg.norm(chain_state.residual)))
    rise = float(np.diff(norms).max())
    ok = worst <= 0.02 and rise <= 0.0
    record_criterion(6, "dynamical IK convergence", ok, f"scalar decay deviation {100 * worst:.2f}% (tol 2%), largest chain residual step {rise:.2e} (must be <= 0)")
    assert ok


def test_criterion_07_trajectory_advancement():
    ramp = RampTrajectory(np.zeros(1), np.array([0.1]))
    idle = simulate_point_mass(ramp, lambda t, s: 0.0, HelpConvention.DESIRED_VELOCITY, 2000, advance=True)
    pushed = simulate_point_mass(ramp, lambda t, s: 50.0, HelpConvention.DESIRED_VELOCITY, 2000, advance=True)
    push = push_schedule(10.0, 2.0)
    gated = simulate_point_mass(
        ramp, lambda t, s: push(t, s) + 3.0 * np.sin(2.0 * t), HelpConvention.ERROR_DIRECTION, 10_000, initial=PointMassState(0.0, 0.3)
    )
    upper = AdvancementState().upper
    idle_ok = bool(np.all(idle.psi_dot == 1.0))
    clamp_ok = bool(pushed.psi_dot.max() == upper and pushed.psi_dot.min() >= 1.0)
    rise = float(np.diff(gated.lyapunov).max())
    ok = idle_ok and clamp_ok and rise <= 0.0
    record_criterion(7, "trajectory advancement", ok,
                     f"psi_dot identically 1 without push: {idle_ok}, clamped at {pushed.psi_dot.max():g} (bound {upper:g}), largest V step {rise:.2e} over 1e4 steps")
    assert ok


def test_criterion_08_coupled_wrench_map():
    rng = np.random.default_rng(8)
    worst, mismatch = 0.0, 0.0
    for seed in range(20):
        system = coupled_twin_arms(robot_joints=tuple(rng.uniform(-1.5, 1.5, 2)), seed=seed)
        tau_ea, tau_r = rng.normal(size=2), rng.normal(size=2)
        wm = coupled_wrench_map(system, tau_ea, tau_r)
        kkt = system.solve([tau_ea, tau_r], stabilize=False).wrenches
        worst = max(worst, float(np.abs(wm.wrenches - kkt).max()))
        on_partner, on_robot = mutual_wrench_pairs(wm.wrenches, len(system.mutual))[0]
        mismatch = max(mismatch, float(np.abs(on_partner + on_robot).max()))
    ok = worst <= 1e-6 and mismatch == 0.0
    record_criterion(8, "coupled wrench map", ok, f"max deviation from KKT {worst:.2e} (tol 1e-6), mutual pair mismatch {mismatch:g} (must be 0)")
    assert ok


def test_criterion_09_partner_aware_law(tmp_path):
    report = run_experiment(load_config(CONFIGS / "partner_aware.ini"), tmp_path)
    m = report.metrics
    ok = m["vdot_law_max"] <= 1e-9 and m["time_to_threshold_assisted"] < m["time_to_threshold_unassisted"]
    record_criterion(9, "partner-aware law", ok,
                     f"max logged V_dot {m['vdot_law_max']:.2e} (tol 1e-9), time to |error| <= 0.01: "
                     f"assisted {m['time_to_threshold_assisted']:.3f} s vs unassisted {m['time_to_threshold_unassisted']:.3f} s")
    assert ok


def test_criterion_10_determinism(tmp_path):
    identical = True
    files = 0
    for name in ("ik_tracking.ini", "trajectory_advancement.ini", "held_mass.ini"):
        cfg = load_config(CONFIGS / name)
        run_experiment(cfg, tmp_path / "first")
        run_experiment(cfg, tmp_path / "second")
        for path in sorted((tmp_path / "first" / cfg.name).glob("*.csv")):
            files += 1
            identical &= path.read_bytes() == (tmp_path / "second" / cfg.name / path.name).read_bytes()
    ok = identical and files > 0
    record_criterion(10, "determinism", ok, f"{files} CSV files re-generated byte-identical: {identical}")
    assert ok

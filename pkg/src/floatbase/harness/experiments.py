"""Scenario pipelines, metrics and report files."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..control import (
    AdvancementState,
    HelpConvention,
    MinimumJerkTrajectory,
    PointMassState,
    RampTrajectory,
    advancement_update,
    assisting_partner,
    centroidal_base_jacobian,
    momentum_balance_wrench,
    momentum_torques,
    postural_torque,
    simulate_partner_aware,
    simulate_point_mass,
)
from ..dynamics import Agent, ContactFrame, center_of_mass, total_momentum
from ..estimation import (
    DEFAULT_MODEL_VARIANCE,
    DEFAULT_PRIOR_VARIANCE,
    FEET_VARIANCE,
    HANDS_VARIANCE,
    MOMENTUM_VARIANCE,
    Prior,
    VariableLayout,
    build_constraint_model,
    build_measurement_model,
    joint_torques_from,
    map_estimate,
    stack_of_tasks_estimate,
)
from ..kinematics import Configuration, IKState, LinkTarget, dynamical_ik_step, forward_kinematics, frame_jacobian, pose_residuals
from ..library import serial_chain
from ..model import build_human_template
from ..modelio import load_model
from ..simulate import ConstrainedSystem
from ..spatial import Pose, exp_so3
from .config import ScenarioConfig
from .scenarios import FEET, HANDS, coupled_twin_arms, double_support_stance, held_mass, robot_tip_task
from .sensors import AccelerometerSensor, JointAccelerationSensor, default_sensors, minimum_jerk_joint_trajectory, synthesize_sensors

OUTPUT_ENV = "FLOATBASE_OUT"


class PipelineError(RuntimeError):
    """A scenario stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class LengthMismatch(ValueError):
    """Series passed to :func:`compute_rmse` differ in length."""


def compute_rmse(estimate, reference) -> np.ndarray | float:
    """Root mean squared error per channel (columns) over samples (rows)."""
    e = np.asarray(estimate, dtype=float)
    r = np.asarray(reference, dtype=float)
    if e.shape[0] != r.shape[0]:
        raise LengthMismatch(f"{e.shape[0]} samples vs {r.shape[0]}")
    if e.shape != r.shape:
        raise LengthMismatch(f"shape {e.shape} vs {r.shape}")
    out = np.sqrt(np.mean((e - r) ** 2, axis=0))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class Trace:
    """Tabular time series written as CSV."""

    columns: list[str]
    rows: np.ndarray

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join("%.17g" % v for v in row) + "\n")

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]


def read_trace(path) -> Trace:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trace(header, data)


@dataclass
class Report:
    name: str
    task: str
    seed: int
    metrics: dict
    tolerances: dict
    rmse: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    files: list = field(default_factory=list)

    @property
    def checks(self) -> dict:
        return {k: bool(self.metrics[k] <= tol) for k, tol in self.tolerances.items()}

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = self.checks
        d["passed"] = self.passed
        return d

    def summary_lines(self) -> list[str]:
        lines = [f"scenario {self.name} ({self.task}), seed {self.seed}, {self.runtime_s:.2f} s"]
        for k, v in self.metrics.items():
            tol = self.tolerances.get(k)
            mark = "" if tol is None else ("  PASS" if v <= tol else "  FAIL") + f" (tol {tol:g})"
            lines.append(f"  {k} = {v:.6g}{mark}")
        return lines


# --- model resolution -------------------------------------------------------


def resolve_model(source: str):
    """Built-in name, file path, ``template:human:<mass>[:reduced]`` or ``chain:<links>``."""
    if source.startswith("template:human"):
        parts = source.split(":")
        mass = float(parts[2]) if len(parts) > 2 else 75.0
        return build_human_template(mass, reduced=len(parts) > 3 and parts[3] == "reduced")
    if source.startswith("chain:"):
        return serial_chain(int(source.split(":")[1]))
    return load_model(source)


def _stage(name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc


def _cov(cfg: ScenarioConfig, key: str, default: float) -> float:
    return float(cfg.covariance.get(key, default))


# --- ik-tracking ------------------------------------------------------------


def _ik_tracking(cfg: ScenarioConfig):
    model = _stage("model", resolve_model, cfg.model)
    rng = np.random.default_rng(cfg.seed)
    start = rng.uniform(-0.4, 0.4, model.n)
    end = start + rng.uniform(-0.6, 0.6, model.n)
    traj = minimum_jerk_joint_trajectory(start, end, cfg.duration)
    base = Pose(exp_so3(rng.normal(scale=0.1, size=3)), rng.normal(scale=0.1, size=3))
    links = model.link_names
    pos_std, ori_std = cfg.noise_std("position"), cfg.noise_std("orientation")

    def targets_at(t):
        """Poses at ``t`` with velocities at the step midpoint, so feed-forward is second-order accurate."""
        s, _, _ = traj.evaluate(t)
        s_mid, sd_mid, _ = traj.evaluate(t + 0.5 * cfg.dt)
        q = Configuration(base, s)
        q_mid = Configuration(base, s_mid)
        nu = np.concatenate([np.zeros(6), sd_mid])
        poses = forward_kinematics(model, q)
        poses_mid = forward_kinematics(model, q_mid)
        out = []
        for name in links:
            P = poses[model.link_index(name)]
            v = frame_jacobian(model, q_mid, name, poses=poses_mid) @ nu
            p = P.position + pos_std * rng.standard_normal(3) if pos_std else P.position
            R = exp_so3(ori_std * rng.standard_normal(3)) @ P.rotation if ori_std else P.rotation
            out.append(LinkTarget(name, p, R, v[:3], v[3:]))
        return out

    q0 = Configuration(Pose(exp_so3(rng.normal(scale=0.2, size=3)) @ base.rotation, base.position + rng.normal(scale=0.05, size=3)),
                       start + rng.normal(scale=0.2, size=model.n))
    state = IKState(q0, np.array([cfg.gain]))
    rows = []
    targets = targets_at(0.0)
    r = float(np.linalg.norm(pose_residuals(model, targets, q0)))
    rows.append([0.0, r])
    for k in range(cfg.steps):
        state = _stage("ik", dynamical_ik_step, model, state, targets, cfg.dt)
        t = (k + 1) * cfg.dt
        targets = targets_at(t)
        rows.append([t, float(np.linalg.norm(pose_residuals(model, targets, state.configuration)))])
    rows = np.array(rows)
    res = rows[:, 1]
    # ideal decay of the closed loop; the excess is the lag behind moving targets
    envelope = res[0] * np.exp(-cfg.gain * rows[:, 0])
    metrics = {
        "final_residual": float(res[-1]),
        "envelope_violation": float(max(0.0, np.max(res - envelope))),
        "initial_residual": float(res[0]),
    }
    return metrics, {}, {"residual.csv": Trace(["t", "residual_norm"], rows)}


# --- map-estimation ---------------------------------------------------------


def _estimation_model(cfg):
    model = _stage("model", resolve_model, cfg.model)
    supports = [n for n in FEET if n in model.link_names] or [model.link_names[0]]
    return model, supports


def _map_estimation(cfg: ScenarioConfig):
    model, supports = _estimation_model(cfg)
    rng = np.random.default_rng(cfg.seed)
    start = np.zeros(model.n)
    end = rng.uniform(-0.6, 0.6, model.n)
    traj = minimum_jerk_joint_trajectory(start, end, cfg.duration)
    variances = {k: _cov(cfg, k, max(cfg.noise_std(k) ** 2, 1e-8)) for k in ("accelerometer", "wrench", "joint_acceleration")}
    # every link carries a wrench reading (zero where nothing touches it) so d is fully observable
    sensors = default_sensors(model, model.link_names, variances)
    times = np.arange(cfg.steps + 1) * cfg.dt
    streams = _stage(
        "synthesize", synthesize_sensors, model, traj, times, Pose(), supports[:1], sensors, cfg.noise, cfg.seed
    )
    layout = VariableLayout(model)
    prior = Prior.weak(layout.size, _cov(cfg, "prior", DEFAULT_PRIOR_VARIANCE))
    est = []

    def estimate_all():
        for k, q in enumerate(streams.configurations):
            nu = streams.velocities[k]
            cons = build_constraint_model(model, q, nu, _cov(cfg, "model", DEFAULT_MODEL_VARIANCE))
            meas = build_measurement_model(model, q, nu, sensors)
            est.append(map_estimate(cons, meas, prior, streams.reading(k), model).mean)

    _stage("estimate", estimate_all)
    est = np.array(est)
    truth = streams.truth
    acc0 = layout.acceleration(0)
    base_est, base_true = est[:, acc0][:, :3], truth[:, acc0][:, :3]
    tau_est = np.array([joint_torques_from(d, model) for d in est])
    tau_true = np.array([joint_torques_from(d, model) for d in truth])
    foot = layout.external(model.link_index(supports[0]))
    rmse_base = compute_rmse(base_est, base_true)
    rmse_tau = compute_rmse(tau_est, tau_true)
    rmse_foot = compute_rmse(est[:, foot], truth[:, foot])
    metrics = {
        "rmse_base_acceleration": float(np.linalg.norm(rmse_base)),
        "rmse_torque": float(np.linalg.norm(rmse_tau)),
        "rmse_feet_wrench": float(np.linalg.norm(rmse_foot)),
    }
    rmse = {
        "base_acceleration": [float(x) for x in rmse_base],
        "torque": [float(x) for x in rmse_tau],
        "feet_wrench": [float(x) for x in rmse_foot],
    }
    cols = ["t"] + [f"base_acc_{a}_est" for a in "xyz"] + [f"base_acc_{a}_true" for a in "xyz"]
    cols += [f"tau_{n}_est" for n in model.dof_names] + [f"tau_{n}_true" for n in model.dof_names]
    rows = np.column_stack([times, base_est, base_true, tau_est, tau_true])
    return metrics, rmse, {"estimates.csv": Trace(cols, rows)}


# --- stack-of-tasks ---------------------------------------------------------


def _stack_of_tasks(cfg: ScenarioConfig):
    if cfg.model != "human3":
        raise PipelineError("model", "the held-mass scenario is defined on the human3 model")
    model, q = double_support_stance()
    payload = held_mass(cfg.payload)
    sensors = default_sensors(model, FEET)
    times = np.arange(cfg.steps + 1) * cfg.dt
    static = MinimumJerkTrajectory(q.joints, q.joints, 1.0)
    streams = _stage("synthesize", synthesize_sensors, model, static, times, q.base, FEET, sensors, cfg.noise, cfg.seed, [payload])
    wrench_std = cfg.noise_std("wrench")
    extra = [s for s in sensors if isinstance(s, (AccelerometerSensor, JointAccelerationSensor))]
    hand = model.link_index(HANDS[0])
    g = 9.81
    rows, deviations = [], []

    def estimate_all():
        for k, qk in enumerate(streams.configurations):
            nu = streams.velocities[k]
            feet = {n: streams.noisy[f"wrench:{n}"][k] for n in FEET}
            readings = np.concatenate([streams.noisy[s.name][k] for s in extra])
            res = stack_of_tasks_estimate(
                model, qk, nu, feet, np.zeros(6), HANDS, extra, readings,
                feet_variance=_cov(cfg, "feet", FEET_VARIANCE),
                hands_variance=_cov(cfg, "hands", HANDS_VARIANCE),
                momentum_variance=_cov(cfg, "momentum", MOMENTUM_VARIANCE),
                model_variance=_cov(cfg, "model", DEFAULT_MODEL_VARIANCE),
                prior_variance=_cov(cfg, "prior", DEFAULT_PRIOR_VARIANCE),
            )
            poses = forward_kinematics(model, qk)
            f_world = poses[hand].rotation @ res.task1_wrenches[hand, :3]
            for n in FEET:
                i = model.link_index(n)
                deviations.append(np.abs(res.task1_wrenches[i] - feet[n]))
            rows.append([times[k], *f_world, res.task2.torques[0], res.task2.torques[1]])

    _stage("estimate", estimate_all)
    rows = np.array(rows)
    expected = -cfg.payload * g
    fz = rows[:, 3]
    rel = float(np.max(np.abs(fz - expected)) / abs(expected)) if expected else float(np.max(np.abs(fz)))
    dev = float(np.max(deviations)) / wrench_std if wrench_std > 0 else float(np.max(deviations))
    metrics = {"hand_force_relative_error": rel, "feet_deviation_in_std": dev, "hand_force_z_mean": float(np.mean(fz))}
    cols = ["t", "hand_force_x", "hand_force_y", "hand_force_z"] + [f"tau_{n}" for n in model.dof_names]
    return metrics, {}, {"hand_force.csv": Trace(cols, rows)}


# --- trajectory-advancement -------------------------------------------------


def push_schedule(duration: float, force: float) -> Callable[[float, PointMassState], float]:
    """Assistive pushes along the path during the middle fifth and the late tenth of the run."""
    windows = [(0.3 * duration, 0.5 * duration), (0.75 * duration, 0.85 * duration)]

    def f(t, state):
        return force if any(a <= t < b for a, b in windows) else 0.0

    f.windows = windows
    return f


def _trajectory_advancement(cfg: ScenarioConfig):
    ramp = RampTrajectory([0.0], [0.1])
    push = push_schedule(cfg.duration, cfg.push_force)
    adv = _stage(
        "simulate", simulate_point_mass, ramp, push, HelpConvention.DESIRED_VELOCITY, cfg.steps, cfg.dt,
        advance=True, upper=cfg.upper_bound,
    )
    # same pushes against the fixed-rate reference with the error-direction gate
    gated = _stage(
        "simulate", simulate_point_mass, ramp, push, HelpConvention.ERROR_DIRECTION, cfg.steps, cfg.dt,
        initial=PointMassState(0.0, 0.3),
    )
    first = push.windows[0][0]
    before = adv.time < first
    dV = np.diff(gated.lyapunov)
    metrics = {
        "lyapunov_increase": float(max(0.0, dV.max())),
        "psi_dot_bound_violation": float(max(0.0, 1.0 - adv.psi_dot.min(), adv.psi_dot.max() - cfg.upper_bound)),
        "psi_dot_nominal_deviation": float(np.max(np.abs(adv.psi_dot[before] - 1.0))),
        "psi_dot_max": float(adv.psi_dot.max()),
    }
    cols = ["t", "psi", "psi_dot", "alpha", "V", "V_dot", "error_norm", "force", "control"]
    vdot = np.concatenate([[0.0], np.diff(adv.lyapunov) / cfg.dt])
    force = np.array([push(t, None) for t in adv.time])
    rows = np.column_stack([adv.time, adv.psi, adv.psi_dot, adv.alpha, adv.lyapunov, vdot, np.abs(adv.velocity_error), force, adv.control])
    gated_rows = np.column_stack([gated.time, gated.alpha, gated.lyapunov, np.abs(gated.velocity_error), gated.control])
    return metrics, {}, {
        "advancement.csv": Trace(cols, rows),
        "gated.csv": Trace(["t", "alpha", "V", "error_norm", "control"], gated_rows),
    }


# --- partner-aware ----------------------------------------------------------


def _partner_aware(cfg: ScenarioConfig):
    threshold = 0.01
    runs = {}
    for label, gain in (("unassisted", 0.0), ("assisted", cfg.assist_gain)):
        system = _stage("model", coupled_twin_arms, seed=cfg.seed)
        runs[label] = _stage(
            "simulate", simulate_partner_aware, system, robot_tip_task(), assisting_partner(gain), cfg.steps, cfg.dt
        )
    t_u = runs["unassisted"].first_time_below(threshold)
    t_a = runs["assisted"].first_time_below(threshold)
    metrics = {
        "vdot_law_max": float(max(r.rate_law.max() for r in runs.values())),
        "vdot_closed_loop_max": float(max(r.rate_closed_loop.max() for r in runs.values())),
        "assist_delay": float(t_a - t_u) if np.isfinite(t_a) and np.isfinite(t_u) else float("inf"),
        "time_to_threshold_unassisted": float(t_u),
        "time_to_threshold_assisted": float(t_a),
        "max_constraint_drift": float(max(r.drift.max() for r in runs.values())),
    }
    cols = ["run", "t", "alpha", "V", "V_dot_law", "V_dot_closed_loop", "error_norm", "tau_ea_0", "tau_ea_1", "tau_r_0", "tau_r_1"]
    blocks = []
    for k, r in enumerate(runs.values()):
        blocks.append(np.column_stack([np.full(r.time.size, k), r.time, r.alpha, r.lyapunov, r.rate_law, r.rate_closed_loop,
                                       r.error_norm, r.partner_torque, r.robot_torque]))
    return metrics, {}, {"coupled.csv": Trace(cols, np.vstack(blocks))}


# --- standup-free-params ----------------------------------------------------


def _standup_free_params(cfg: ScenarioConfig):
    model = _stage("model", resolve_model, cfg.model)
    if model.n < 6:
        raise PipelineError("model", "momentum control needs at least six joints to realize a contact wrench")
    # a strongly bent posture keeps the joint-to-momentum map well conditioned
    s0 = np.random.default_rng(cfg.seed).uniform(-1.5, 1.5, model.n)
    q = Configuration(Pose(), s0)
    contact = [ContactFrame(model.link_names[0])]
    system = ConstrainedSystem([Agent(model, tuple(contact))], [q], [np.zeros(model.nv)])
    c0 = center_of_mass(model, q)
    reach = np.array([0.01, 0.005, 0.01])
    traj = MinimumJerkTrajectory(c0, c0 + reach, 0.5 * cfg.duration)
    adv = AdvancementState(upper=cfg.upper_bound)
    m = model.total_mass
    kp, kd, k_ang = cfg.gain**2 / 4.0, cfg.gain, cfg.gain / 3.0
    rows, realization = [], []

    def run():
        nonlocal adv
        for _ in range(cfg.steps):
            q, nu = system.q[0], system.nu[0]
            c = center_of_mass(model, q)
            L = total_momentum(model, q, nu)
            cdot = L[:3] / m
            cd, cd_dot, cd_ddot = traj.references(adv.psi, adv.psi_dot, adv.psi_ddot)
            H_star = np.concatenate([m * (cd_ddot + kd * (cd_dot - cdot) + kp * (cd - c)), -k_ang * L[3:]])
            f_star = momentum_balance_wrench(H_star, m, centroidal_base_jacobian(model, q, contact))
            tau0 = postural_torque(model, q, nu, contact, f_star, s0, kp, kd)
            out = momentum_torques(model, q, nu, contact, f_star, tau0)
            realized = system.solve([out.torque], stabilize=False).wrenches
            realization.append(float(np.max(np.abs(realized - f_star))))
            rows.append([system.time, adv.psi, adv.psi_dot, *c, *cd, *f_star[:3]])
            system.step([out.torque], cfg.dt)
            cdot_next = total_momentum(model, system.q[0], system.nu[0])[:3] / m
            _, tangent, _ = traj.evaluate(adv.psi)
            if np.linalg.norm(tangent) > 1e-9:
                adv = advancement_update(adv, cdot_next, traj, cfg.dt)
            else:
                # past the end of the reference the parameter runs at the nominal rate
                adv = AdvancementState(adv.psi + cfg.dt, 1.0, 0.0, adv.upper, adv.cutoff_hz, 1.0)

    _stage("simulate", run)
    c_final = center_of_mass(model, system.q[0])
    metrics = {
        "wrench_realization_error": float(max(realization)),
        "final_com_error": float(np.linalg.norm(c_final - (c0 + reach))),
        "max_constraint_drift": float(np.abs(system.drift()).max()),
    }
    cols = ["t", "psi", "psi_dot", "com_x", "com_y", "com_z", "com_ref_x", "com_ref_y", "com_ref_z", "force_x", "force_y", "force_z"]
    return metrics, {}, {"momentum.csv": Trace(cols, np.array(rows))}


PIPELINES = {
    "ik-tracking": _ik_tracking,
    "map-estimation": _map_estimation,
    "stack-of-tasks": _stack_of_tasks,
    "trajectory-advancement": _trajectory_advancement,
    "partner-aware": _partner_aware,
    "standup-free-params": _standup_free_params,
}


def output_root(out_dir=None) -> Path:
    return Path(out_dir or os.environ.get(OUTPUT_ENV, "floatbase_out"))


def run_experiment(cfg: ScenarioConfig, out_dir=None, write: bool = True) -> Report:
    """Run the scenario pipeline, write its CSV traces and ``report.json``."""
    t0 = time.perf_counter()
    metrics, rmse, traces = PIPELINES[cfg.task](cfg)
    report = Report(cfg.name, cfg.task, cfg.seed, metrics, dict(cfg.tolerances), rmse)
    report.runtime_s = time.perf_counter() - t0
    if write:
        root = output_root(out_dir) / cfg.name

        def emit():
            for fname, trace in traces.items():
                trace.write(root / fname)
                report.files.append(str(root / fname))
            (root / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")

        _stage("report", emit)
    report.traces = traces
    return report

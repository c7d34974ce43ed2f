"""Synthetic sensor streams consistent with the rigid-body model.

A joint trajectory is played on a model whose base is held still by its
support links. Inverse dynamics gives the ground-truth dynamic variables and
every reading is produced from them through the measurement model, so
noiseless streams satisfy the estimator's equations exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..control import MinimumJerkTrajectory
from ..dynamics import GRAVITY, center_of_mass, rnea, world_wrench_to_link
from ..estimation import (
    AccelerometerSensor,
    JointAccelerationSensor,
    Sensor,
    WrenchSensor,
    build_measurement_model,
    distribute_support_wrenches,
    ground_truth_variables,
)
from ..kinematics import Configuration, forward_kinematics

NOISE_KIND = {AccelerometerSensor: "accelerometer", WrenchSensor: "wrench", JointAccelerationSensor: "joint_acceleration"}


def minimum_jerk_joint_trajectory(start, end, duration: float) -> MinimumJerkTrajectory:
    """Rest-to-rest joint reference; ``evaluate(t)`` gives positions, rates and accelerations."""
    return MinimumJerkTrajectory(np.asarray(start, dtype=float), np.asarray(end, dtype=float), duration)


@dataclass(frozen=True)
class Payload:
    """A point load hanging from ``link`` at ``offset`` (link coordinates)."""

    link: str
    offset: np.ndarray
    mass: float


@dataclass
class SensorStreams:
    times: np.ndarray
    configurations: list
    velocities: np.ndarray
    accelerations: np.ndarray
    external: np.ndarray
    truth: np.ndarray
    sensors: list
    clean: dict = field(default_factory=dict)
    noisy: dict = field(default_factory=dict)

    def reading(self, k: int, noisy: bool = True) -> np.ndarray:
        """Stacked readings of every sensor at sample ``k`` in sensor order."""
        src = self.noisy if noisy else self.clean
        return np.concatenate([src[s.name][k] for s in self.sensors])


def default_sensors(model, supports: Sequence[str], variances: dict | None = None) -> list[Sensor]:
    """Accelerometers on every link, wrench sensors on the supports and all joint encoders."""
    v = {"accelerometer": 1e-4, "wrench": 1e-4, "joint_acceleration": 1e-4}
    v.update(variances or {})
    out: list[Sensor] = [AccelerometerSensor(f"acc:{n}", v["accelerometer"], n) for n in model.link_names]
    out += [WrenchSensor(f"wrench:{n}", v["wrench"], n) for n in supports]
    out += [JointAccelerationSensor(f"ddq:{n}", v["joint_acceleration"], n) for n in model.dof_names]
    return out


def payload_wrenches(model, poses, payloads: Sequence[Payload], gravity=GRAVITY) -> np.ndarray:
    """Link-coordinate wrenches of point loads under gravity."""
    ext = np.zeros((model.n_links, 6))
    for p in payloads:
        i = model.link_index(p.link)
        point = poses[i].apply(p.offset)
        w = np.concatenate([p.mass * np.asarray(gravity, dtype=float), np.zeros(3)])
        ext[i] += world_wrench_to_link(poses, i, point, w)
    return ext


def synthesize_sensors(
    model,
    trajectory,
    times,
    base,
    supports: Sequence[str],
    sensors: Sequence[Sensor],
    noise: dict | None = None,
    seed: int = 0,
    payloads: Sequence[Payload] = (),
    gravity=GRAVITY,
) -> SensorStreams:
    """Sample ``trajectory`` at ``times`` with the base fixed at ``base`` and read every sensor.

    The support links receive the minimum-norm wrenches that hold the base
    still. ``noise`` maps a sensor kind (accelerometer, wrench,
    joint_acceleration) to an additive Gaussian standard deviation; momentum
    pseudo-readings stay noiseless and report the full net wrench.
    """
    noise = noise or {}
    rng = np.random.default_rng(seed)
    times = np.asarray(times, dtype=float)
    qs, nus, nudots, exts, truths = [], [], [], [], []
    clean = {s.name: [] for s in sensors}
    for t in times:
        s, sd, sdd = trajectory.evaluate(t)
        q = Configuration(base, s)
        nu = np.concatenate([np.zeros(6), sd])
        nu_dot = np.concatenate([np.zeros(6), sdd])
        poses = forward_kinematics(model, q)
        ext = payload_wrenches(model, poses, payloads, gravity)
        base_force = rnea(model, q, nu, nu_dot, gravity, ext)[:6]
        ext = ext + distribute_support_wrenches(model, q, base_force, supports)
        d = ground_truth_variables(model, q, nu, nu_dot, ext, gravity)
        meas = build_measurement_model(model, q, nu, sensors)
        y = meas.Y @ d + meas.bias
        for sensor in sensors:
            clean[sensor.name].append(meas.channel(y, sensor.name))
        qs.append(q)
        nus.append(nu)
        nudots.append(nu_dot)
        exts.append(ext)
        truths.append(d)
    clean = {k: np.array(v) for k, v in clean.items()}
    noisy = {}
    for sensor in sensors:
        std = float(noise.get(NOISE_KIND.get(type(sensor), ""), 0.0))
        arr = clean[sensor.name]
        noisy[sensor.name] = arr + std * rng.standard_normal(arr.shape) if std > 0.0 else arr.copy()
    return SensorStreams(times, qs, np.array(nus), np.array(nudots), np.array(exts), np.array(truths), list(sensors), clean, noisy)


def support_wrench_sum(model, q, external, links: Sequence[str]) -> np.ndarray:
    """Total world force of the external wrenches on ``links``."""
    poses = forward_kinematics(model, q)
    total = np.zeros(3)
    for name in links:
        i = model.link_index(name)
        total += poses[i].rotation @ external[i, :3]
    return total


def center_of_mass_track(model, configurations) -> np.ndarray:
    return np.array([center_of_mass(model, q) for q in configurations])

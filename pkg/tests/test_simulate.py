import numpy as np
import pytest

from floatbase.dynamics import Agent, ContactFrame, center_of_mass, momentum_rate_balance
from floatbase.kinematics import Configuration, forward_kinematics
from floatbase.library import HUMAN3_SOLES
from floatbase.simulate import ConstrainedSystem, project_velocity, simulate_unconstrained
from floatbase.spatial import Pose


def stance(human):
    feet = tuple(ContactFrame(name, offset) for name, offset in HUMAN3_SOLES.items())
    q = Configuration(Pose(), [0.3, -0.2])
    return ConstrainedSystem([Agent(human, feet)], [q], [np.zeros(human.nv)]), feet


def test_ballistic_com(chain, rng):
    q = Configuration(Pose(), rng.uniform(-1, 1, chain.n))
    nu = np.zeros(chain.nv)
    nu[:3] = [0.3, -0.1, 2.0]
    times, qs, _ = simulate_unconstrained(chain, q, nu, 1.0, samples=5)
    c0 = center_of_mass(chain, q)
    for t, qk in zip(times, qs):
        expected = c0 + np.array([0.3, -0.1, 2.0]) * t + 0.5 * np.array([0, 0, -9.81]) * t * t
        assert np.allclose(center_of_mass(chain, qk), expected, atol=1e-8)


def test_squat_momentum_balance(human):
    system, feet = stance(human)
    for k in range(200):
        torque = 40.0 * np.array([np.sin(0.05 * k), np.cos(0.03 * k)])
        q, nu = system.q[0], system.nu[0]
        out = system.step([torque], 1e-3)
        poses = forward_kinematics(human, q)
        com = center_of_mass(human, q, poses)
        world = []
        for c, f in zip(feet, out.wrenches.reshape(-1, 6)):
            lever = c.position(human, poses) - com
            world.append(np.concatenate([f[:3], f[3:] + np.cross(lever, f[:3])]))
        residual = momentum_rate_balance(human, q, nu, out.acceleration[0], world)
        assert np.linalg.norm(residual) <= 1e-6
    assert np.linalg.norm(system.drift()) < 1e-6


def test_constrained_solution_satisfies_constraints(human):
    system, _ = stance(human)
    system.nu[0] = project_velocity(system.constraints()[0], np.arange(human.nv, dtype=float))
    P, PdotV = system.constraints()
    assert np.allclose(P @ system.nu[0], 0.0, atol=1e-10)
    out = system.solve([np.array([5.0, -3.0])], stabilize=False)
    assert np.allclose(P @ out.acceleration[0] + PdotV, 0.0, atol=1e-9)


def test_project_velocity_without_constraints():
    V = np.array([1.0, 2.0])
    assert np.array_equal(project_velocity(np.zeros((0, 2)), V), V)

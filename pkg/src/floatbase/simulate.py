"""Forward simulation used by the oracles and scenarios.

Two integrators live here. :func:`simulate_unconstrained` hands the free
floating-base equations to an adaptive Runge-Kutta solver with the base
orientation carried as a quaternion. :class:`ConstrainedSystem` advances one
or two agents under rigid contacts by solving the KKT system with Baumgarte
stabilization and a semi-implicit Euler step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.spatial.transform import Rotation

from .dynamics import (
    GRAVITY,
    Agent,
    MutualContact,
    actuation_matrix,
    bias_forces,
    constraint_error,
    contact_constraint_matrices,
    contact_positions,
    forward_dynamics,
    mass_matrix,
)
from .kinematics import Configuration, integrate
from .spatial import Pose

BAUMGARTE_GAINS = (20.0, 100.0)


def _pack(q: Configuration, nu) -> np.ndarray:
    quat = Rotation.from_matrix(q.base.rotation).as_quat()
    return np.concatenate([q.base.position, quat, q.joints, nu])


def _unpack(model, x):
    quat = x[3:7] / np.linalg.norm(x[3:7])
    base = Pose(Rotation.from_quat(quat).as_matrix(), x[:3])
    n = model.n
    return Configuration(base, x[7 : 7 + n]), x[7 + n :]


def _quat_rate(quat, omega_world):
    x, y, z, w = quat
    ox, oy, oz = omega_world
    # q_dot = 0.5 * (0, omega) * q, scalar-last storage
    return 0.5 * np.array(
        [
            ox * w + oy * z - oz * y,
            -ox * z + oy * w + oz * x,
            ox * y - oy * x + oz * w,
            -ox * x - oy * y - oz * z,
        ]
    )


def simulate_unconstrained(
    model,
    q0: Configuration,
    nu0,
    duration: float,
    torque: Callable[[float, Configuration, np.ndarray], np.ndarray] | None = None,
    gravity=GRAVITY,
    samples: int = 101,
    rtol: float = 1e-11,
    atol: float = 1e-12,
):
    """Integrate free floating-base dynamics; returns sample times, configurations and velocities."""

    def rhs(t, x):
        q, nu = _unpack(model, x)
        tau = np.zeros(model.n) if torque is None else torque(t, q, nu)
        a = forward_dynamics(model, q, nu, tau, gravity)
        return np.concatenate([nu[:3], _quat_rate(x[3:7], nu[3:6]), nu[6:], a])

    t_eval = np.linspace(0.0, duration, samples)
    sol = solve_ivp(rhs, (0.0, duration), _pack(q0, np.asarray(nu0, dtype=float)), method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    states = [_unpack(model, sol.y[:, k]) for k in range(sol.y.shape[1])]
    return sol.t, [s[0] for s in states], [s[1] for s in states]


@dataclass
class ConstrainedStep:
    """Result of one KKT solve."""

    acceleration: list
    wrenches: np.ndarray


class ConstrainedSystem:
    """One or two agents coupled by mutual contacts and anchored by environment contacts."""

    def __init__(
        self,
        agents: Sequence[Agent],
        configurations: Sequence[Configuration],
        velocities: Sequence[np.ndarray],
        mutual: Sequence[MutualContact] = (),
        gravity=GRAVITY,
        baumgarte=BAUMGARTE_GAINS,
    ):
        self.agents = list(agents)
        self.q = list(configurations)
        self.nu = [np.asarray(v, dtype=float) for v in velocities]
        self.mutual = list(mutual)
        self.gravity = np.asarray(gravity, dtype=float)
        self.baumgarte = baumgarte
        self.reference = contact_positions(self.agents, self.q, self.mutual)
        self.time = 0.0

    @property
    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [a.model.nv for a in self.agents])

    def stacked_velocity(self) -> np.ndarray:
        return np.concatenate(self.nu)

    def split(self, V) -> list[np.ndarray]:
        o = self.offsets
        return [np.asarray(V[o[k] : o[k + 1]]) for k in range(len(self.agents))]

    def dynamics(self):
        """Block-diagonal ``M``, stacked ``h`` and actuation ``B`` for the current state."""
        o = self.offsets
        nv = o[-1]
        M = np.zeros((nv, nv))
        h = np.zeros(nv)
        B = np.zeros((nv, sum(a.model.n for a in self.agents)))
        col = 0
        for k, a in enumerate(self.agents):
            sl = slice(o[k], o[k + 1])
            M[sl, sl] = mass_matrix(a.model, self.q[k])
            h[sl] = bias_forces(a.model, self.q[k], self.nu[k], self.gravity)
            B[sl, col : col + a.model.n] = actuation_matrix(a.model)
            col += a.model.n
        return M, h, B

    def constraints(self):
        return contact_constraint_matrices(self.agents, self.q, self.nu, self.mutual)

    def drift(self) -> np.ndarray:
        return constraint_error(self.reference, contact_positions(self.agents, self.q, self.mutual))

    def solve(self, torques: Sequence[np.ndarray], stabilize: bool = True) -> ConstrainedStep:
        """Accelerations and contact wrenches from ``[M, -P^T; P, 0]``."""
        M, h, B = self.dynamics()
        P, Pdot_V = self.constraints()
        tau = np.concatenate([np.asarray(t, dtype=float) for t in torques])
        V = self.stacked_velocity()
        rhs_c = -Pdot_V
        if stabilize:
            kd, kp = self.baumgarte
            rhs_c = rhs_c - kd * (P @ V) - kp * self.drift()
        k = P.shape[0]
        K = np.block([[M, -P.T], [P, np.zeros((k, k))]])
        sol = np.linalg.lstsq(K, np.concatenate([B @ tau - h, rhs_c]), rcond=None)[0]
        nv = M.shape[0]
        return ConstrainedStep(self.split(sol[:nv]), sol[nv:])

    def step(self, torques: Sequence[np.ndarray], dt: float) -> ConstrainedStep:
        """Semi-implicit Euler step; returns the KKT solution at the start of the step."""
        out = self.solve(torques)
        for k, a in enumerate(self.agents):
            self.nu[k] = self.nu[k] + dt * out.acceleration[k]
            self.q[k] = integrate(a.model, self.q[k], self.nu[k], dt)
        self.time += dt
        return out


def project_velocity(P, V) -> np.ndarray:
    """Closest velocity to ``V`` satisfying ``P V = 0``."""
    if P.shape[0] == 0:
        return np.asarray(V, dtype=float)
    return V - np.linalg.pinv(P) @ (P @ V)

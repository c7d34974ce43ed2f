"""Reference set-ups shared by the experiments and the tests."""

from __future__ import annotations

import numpy as np

from ..control import TaskFrame, VelocityTask
from ..dynamics import Agent, ContactFrame, MutualContact
from ..kinematics import Configuration, forward_kinematics
from ..library import HUMAN3_HAND, HUMAN3_SOLES, TWIN_ARM_TIP, human3, twin_arm
from ..simulate import ConstrainedSystem, project_velocity
from ..spatial import Pose
from .sensors import Payload

ROBOT_JOINTS = (0.4, 0.8)
PARTNER_JOINTS = (-0.3, -1.0)


def coupled_twin_arms(robot_joints=ROBOT_JOINTS, partner_joints=PARTNER_JOINTS, seed: int = 0, velocity_scale: float = 1.0):
    """Two planar arms joined tip to tip.

    Agent 0 (the partner) floats and hangs on the robot; agent 1 (the robot)
    has its base welded to the world. The initial stacked velocity is a
    seeded random vector projected onto the constraint-consistent subspace.
    """
    robot, partner = twin_arm(), twin_arm()
    tip = ContactFrame("Fore", TWIN_ARM_TIP)
    agents = [Agent(partner), Agent(robot, (ContactFrame("Base"),))]
    qr = Configuration.neutral(robot).with_joints(robot_joints)
    pr = forward_kinematics(robot, qr)
    qe = Configuration.neutral(partner).with_joints(partner_joints)
    pe = forward_kinematics(partner, qe)
    R = tip.rotation(robot, pr) @ tip.rotation(partner, pe).T
    qe = Configuration(Pose(R, np.zeros(3)), qe.joints)
    pe = forward_kinematics(partner, qe)
    qe = Configuration(Pose(R, tip.position(robot, pr) - tip.position(partner, pe)), qe.joints)
    mutual = [MutualContact(tip, tip)]
    system = ConstrainedSystem(agents, [qe, qr], [np.zeros(partner.nv), np.zeros(robot.nv)], mutual)
    P, _ = system.constraints()
    V = velocity_scale * np.random.default_rng(seed).standard_normal(P.shape[1])
    system.nu = system.split(project_velocity(P, V))
    return system


def robot_tip_task(K_d=1.0, K_D=10.0, K_p=1.0) -> VelocityTask:
    """Regulate the planar (x, z) velocity of the robot tip to zero."""
    return VelocityTask.regulate(TaskFrame("Fore", TWIN_ARM_TIP, (0, 2)), K_d, K_D, K_p)


def double_support_stance(lean: float = 0.2):
    """``human3`` standing on both soles with the upper body leaning by ``lean`` rad."""
    model = human3()
    q = Configuration(Pose(), np.array([0.0, lean]))
    return model, q


def held_mass(mass: float) -> Payload:
    return Payload("RightHand", HUMAN3_HAND.copy(), mass)


FEET = tuple(HUMAN3_SOLES)
HANDS = ("RightHand",)

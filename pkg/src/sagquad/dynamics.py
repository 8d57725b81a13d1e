"""Arm-chain rigid-body dynamics.

The arm is treated as a serial chain bolted to the trunk.  Everything in
this module is computed in trunk (base) coordinates; gravity is passed in
those coordinates too.  Inverse dynamics uses recursive Newton-Euler, the
joint-space inertia uses the composite-rigid-body algorithm.  Joint
armature (reflected rotor inertia) adds to the inertia diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .spatial import BASE, Pose

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class ArmDynamicsResult:
    inertia: np.ndarray
    bias: np.ndarray
    coupling_wrench_on_base: np.ndarray


class ArmChain:
    """Packed parameters of the arm sub-chain."""

    def __init__(self, model, joints=None):
        self.model = model
        self.joints = list(model.arm if joints is None else joints)
        if model.parent[self.joints[0]] != BASE:
            raise ValueError("arm chain must start at the trunk")
        self.n = len(self.joints)
        j = self.joints
        self.origin_R = np.ascontiguousarray(model.origin_R[j])
        self.origin_p = np.ascontiguousarray(model.origin_p[j])
        self.axis = np.ascontiguousarray(model.axis[j])
        self.mass = np.ascontiguousarray(model.mass[j])
        self.com = np.ascontiguousarray(model.com[j])
        self.inertia = np.ascontiguousarray(model.inertia[j])
        self.armature = np.ascontiguousarray(model.armature[j])
        self.damping = np.ascontiguousarray(model.damping[j])

    def kinematics(self, q):
        """Link rotations, joint origins and joint axes, trunk coordinates."""
        return _k.chain_kinematics(self.origin_R, self.origin_p, self.axis,
                                   np.asarray(q, dtype=float))

    def link_index(self, frame):
        f = self.model.frame(frame)
        if f.link not in self.joints:
            raise ValueError(f"frame {frame!r} is not on the arm")
        return self.joints.index(f.link), f.offset


def arm_chain(model) -> ArmChain:
    ch = getattr(model, "_arm_chain", None)
    if ch is None:
        ch = ArmChain(model)
        model._arm_chain = ch
    return ch


def _vec(x):
    return np.ascontiguousarray(x, dtype=float)


def rnea(chain: ArmChain, q, qd, qdd, gravity=GRAVITY, kin=None):
    """Recursive Newton-Euler inverse dynamics.

    Returns ``(tau, F0, N0)``: joint torques plus the force, and moment about
    the first joint origin, that the trunk applies to the arm.
    """
    R, p, z = chain.kinematics(q) if kin is None else kin
    return _k.rnea(R, p, z, chain.mass, chain.com, chain.inertia, chain.armature,
                   _vec(qd), _vec(qdd), _vec(gravity))


def crba(chain: ArmChain, q, kin=None):
    """Composite-rigid-body joint-space inertia (armature on the diagonal)."""
    R, p, z = chain.kinematics(q) if kin is None else kin
    return _k.crba(R, p, z, chain.mass, chain.com, chain.inertia, chain.armature)


def arm_inverse_dynamics(model, q_a, qd_a, qdd_a, gravity=GRAVITY):
    return rnea(arm_chain(model), q_a, qd_a, qdd_a, gravity)[0]


def arm_inertia(model, q_a):
    """Joint-space inertia of the arm; symmetric positive definite."""
    return crba(arm_chain(model), q_a)


def arm_bias(model, q_a, qd_a, gravity=GRAVITY):
    """Gravity, Coriolis and centrifugal torques h(q, qd)."""
    ch = arm_chain(model)
    return rnea(ch, q_a, qd_a, np.zeros(ch.n), gravity)[0]


def arm_point_jacobian(model, q_a, frame="EE", kin=None):
    """6 x 7 Jacobian of an arm frame origin, trunk coordinates."""
    ch = arm_chain(model)
    R, p, z = ch.kinematics(q_a) if kin is None else kin
    k, off = ch.link_index(frame)
    return _k.point_jacobian(p, z, k, p[k] + R[k] @ off.translation)


def arm_frame_pose(model, q_a, frame, kin=None) -> Pose:
    """Pose of an arm frame in trunk coordinates."""
    ch = arm_chain(model)
    R, p, _ = ch.kinematics(q_a) if kin is None else kin
    k, off = ch.link_index(frame)
    return Pose(R[k], p[k]) @ off


def _pack_forces(model, forces):
    ch = arm_chain(model)
    links = np.empty(len(forces), dtype=np.int64)
    points = np.empty((len(forces), 3))
    vals = np.empty((len(forces), 3))
    for i, (frame, force) in enumerate(forces):
        k, off = ch.link_index(frame)
        links[i] = k
        points[i] = off.translation
        vals[i] = force
    return links, points, vals


def arm_forward_dynamics(model, q_a, qd_a, tau_a, F_e=None, gravity=GRAVITY, forces=()):
    """Joint accelerations M^-1 (tau + J_e^T [F_e; 0] - h).

    ``F_e`` is a force at the end-effector origin; ``forces`` adds further
    point forces ``(frame, force)`` on other arm frames.  Trunk coordinates.
    """
    return arm_forward_dynamics_full(model, q_a, qd_a, tau_a, F_e, gravity, forces)[0]


def arm_forward_dynamics_full(model, q_a, qd_a, tau_a, F_e=None, gravity=GRAVITY, forces=()):
    """Like :func:`arm_forward_dynamics` but also returns ``(M, h)``."""
    ch = arm_chain(model)
    ext = list(forces)
    if F_e is not None:
        ext.append(("EE", F_e))
    links, points, vals = _pack_forces(model, ext)
    return _k.forward_dynamics(ch.origin_R, ch.origin_p, ch.axis, ch.mass, ch.com, ch.inertia,
                               ch.armature, _vec(q_a), _vec(qd_a), _vec(tau_a), _vec(gravity),
                               links, points, vals)


MIDPOINT_ITERS = 2


def arm_midpoint_step(model, q_a, qd_a, tau_a, dt, gravity=GRAVITY, forces=(), damping=True):
    """One implicit-midpoint step of the fixed-base arm.

    Solved by fixed-point sweeps started from the explicit acceleration.
    Joint damping (if enabled) acts on the midpoint velocity.  Returns
    ``(q_new, qd_new, qdd, q_mid, qd_mid)``; ``qdd`` is the acceleration
    evaluated at the midpoint.
    """
    ch = arm_chain(model)
    links, points, vals = _pack_forces(model, list(forces))
    q, qd, tau, g = _vec(q_a), _vec(qd_a), _vec(tau_a), _vec(gravity)
    c = ch.damping if damping else np.zeros(ch.n)

    def accel(qq, vv):
        return _k.forward_dynamics(ch.origin_R, ch.origin_p, ch.axis, ch.mass, ch.com,
                                   ch.inertia, ch.armature, qq, vv, tau - c * vv, g,
                                   links, points, vals)[0]

    qdd = accel(q, qd)
    q_m, qd_m = q, qd
    for _ in range(MIDPOINT_ITERS):
        qd_new = qd + dt * qdd
        q_m, qd_m = q + 0.25 * dt * (qd + qd_new), 0.5 * (qd + qd_new)
        qdd = accel(q_m, qd_m)
    qd_new = qd + dt * qdd
    return q + 0.5 * dt * (qd + qd_new), qd_new, qdd, q_m, qd_m


def arm_coupling_wrench(model, q_a, qd_a, qdd_a, base_pose: Pose, gravity_world=GRAVITY):
    """Reaction wrench the moving arm exerts on the trunk.

    Force and moment about the base origin, world-aligned axes.  With the
    arm at rest this is the arm weight and its moment.  Rotor reactions of
    the joint armature are neglected.
    """
    ch = arm_chain(model)
    Rb = base_pose.rotation
    kin = ch.kinematics(q_a)
    _, F, N = rnea(ch, q_a, qd_a, qdd_a, Rb.T @ np.asarray(gravity_world, dtype=float), kin=kin)
    p0 = kin[1][0]
    force = -F
    moment = -(N + _k.cross(p0, F))
    return np.concatenate([Rb @ force, Rb @ moment])


def arm_dynamics(model, q_a, qd_a, base_pose: Pose, qdd_a=None, gravity_world=GRAVITY):
    """Inertia, bias and coupling wrench in one call."""
    ch = arm_chain(model)
    g_base = base_pose.rotation.T @ np.asarray(gravity_world, dtype=float)
    qdd = np.zeros(ch.n) if qdd_a is None else qdd_a
    return ArmDynamicsResult(arm_inertia(model, q_a), arm_bias(model, q_a, qd_a, g_base),
                             arm_coupling_wrench(model, q_a, qd_a, qdd, base_pose, gravity_world))


def arm_com(model, q_a, kin=None):
    """Arm mass and centre of mass, trunk coordinates."""
    ch = arm_chain(model)
    R, p, _ = ch.kinematics(q_a) if kin is None else kin
    c = np.einsum("n,ni->i", ch.mass, p + np.einsum("nij,nj->ni", R, ch.com))
    m = ch.mass.sum()
    return m, c / m


def arm_com_jacobian(model, q_a, kin=None):
    """3 x 7 Jacobian of the arm centre of mass, trunk coordinates."""
    ch = arm_chain(model)
    R, p, z = ch.kinematics(q_a) if kin is None else kin
    Jc = np.zeros((3, ch.n))
    for k in range(ch.n):
        c = p[k] + R[k] @ ch.com[k]
        Jc += ch.mass[k] * _k.point_jacobian(p, z, k, c)[:3]
    return Jc / ch.mass.sum()


def kinetic_energy(model, q_a, qd_a):
    qd_a = np.asarray(qd_a, dtype=float)
    return 0.5 * qd_a @ arm_inertia(model, q_a) @ qd_a


def potential_energy(model, q_a, gravity=GRAVITY):
    m, c = arm_com(model, q_a)
    return -m * np.dot(np.asarray(gravity, dtype=float), c)

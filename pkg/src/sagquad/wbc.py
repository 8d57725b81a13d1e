"""Trunk controller and leg torques.

The trunk controller turns base pose/velocity errors into a desired wrench
at the base origin and distributes it over the stance feet with a QP that
keeps every ground force inside a linearized friction cone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qp import QPError, solve_qp
from .spatial import rotation_error, skew

GRAVITY_ACC = 9.81
DEFAULT_Q = np.array([1.0, 1.0, 1.0, 10.0, 10.0, 10.0])
DEFAULT_R = 1e-4


def _diag(K):
    K = np.asarray(K, dtype=float)
    return np.diag(K) if K.ndim == 1 else K


@dataclass
class BaseReference:
    position: np.ndarray
    orientation: np.ndarray
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class TrunkGains:
    K_b: np.ndarray
    D_b: np.ndarray
    K_r: np.ndarray
    D_r: np.ndarray

    def __post_init__(self):
        for name in ("K_b", "D_b", "K_r", "D_r"):
            K = _diag(getattr(self, name))
            if np.any(np.diag(K) < 0) or np.any(K - np.diag(np.diag(K))):
                raise ValueError(f"{name} must be diagonal and nonnegative")
            setattr(self, name, K)


@dataclass
class ContactSet:
    """Stance feet: positions relative to the base origin (world-aligned axes)."""
    positions: np.ndarray
    mu: np.ndarray
    normals: np.ndarray = None
    f_min: np.ndarray = None
    f_max: np.ndarray = None
    heading: float = 0.0        # yaw of the base x-axis; orients the pyramid facets
    names: tuple = ()

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        k = len(self.positions)
        if not 1 <= k <= 4:
            raise ValueError("a contact set holds between 1 and 4 feet")
        self.mu = np.broadcast_to(np.asarray(self.mu, dtype=float), (k,)).copy()
        if self.normals is None:
            self.normals = np.tile([0.0, 0.0, 1.0], (k, 1))
        self.normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        self.normals /= np.linalg.norm(self.normals, axis=1, keepdims=True)
        self.f_min = np.broadcast_to(np.asarray(0.0 if self.f_min is None else self.f_min, float), (k,)).copy()
        self.f_max = np.broadcast_to(np.asarray(np.inf if self.f_max is None else self.f_max, float), (k,)).copy()
        if np.any(self.mu <= 0) or np.any(self.f_min < 0):
            raise ValueError("need mu > 0 and f_min >= 0")

    def __len__(self):
        return len(self.positions)

    def tangents(self, i):
        n = self.normals[i]
        hx = np.array([np.cos(self.heading), np.sin(self.heading), 0.0])
        t1 = hx - (hx @ n) * n
        if np.linalg.norm(t1) < 1e-9:
            t1 = np.array([1.0, 0.0, 0.0]) - n[0] * n
        t1 /= np.linalg.norm(t1)
        return t1, np.cross(n, t1)

    def permuted(self, order):
        order = list(order)
        return ContactSet(self.positions[order], self.mu[order], self.normals[order],
                          self.f_min[order], self.f_max[order], self.heading,
                          tuple(self.names[i] for i in order) if self.names else ())


@dataclass
class ForceDistribution:
    forces: np.ndarray          # (n_feet, 3)
    wrench: np.ndarray          # achieved wrench A F
    status: str                 # "optimal" | "clamped-infeasible"
    residual: float = 0.0


def desired_base_wrench(state, ref: BaseReference, gains: TrunkGains, coupling=None,
                        mass=0.0, g=GRAVITY_ACC):
    """PD wrench on the base plus weight feedforward and a coupling term.

    ``coupling`` is added as is; pass the negated arm reaction wrench to
    compensate the arm.  ``mass`` is the mass whose weight is fed forward.
    """
    coupling = np.zeros(6) if coupling is None else np.asarray(coupling, dtype=float)
    F = (gains.K_b @ (ref.position - state.base_position)
         + gains.D_b @ (ref.linear_velocity - state.base_linear_velocity)
         + np.array([0.0, 0.0, mass * g]) + coupling[:3])
    e_r = rotation_error(ref.orientation, state.base_rotation)
    T = (gains.D_r @ (ref.angular_velocity - state.base_angular_velocity)
         + gains.K_r @ e_r + coupling[3:])
    return np.concatenate([F, T])


def wrench_map(positions):
    """6 x 3k matrix stacking identity and skew(p) blocks."""
    k = len(positions)
    A = np.zeros((6, 3 * k))
    for i, p in enumerate(positions):
        A[:3, 3 * i:3 * i + 3] = np.eye(3)
        A[3:, 3 * i:3 * i + 3] = skew(p)
    return A


def friction_constraints(contacts: ContactSet):
    """Rows C and bounds (lower, upper) for the inscribed 4-facet pyramids."""
    k = len(contacts)
    C = np.zeros((5 * k, 3 * k))
    lower = np.full(5 * k, -np.inf)
    upper = np.zeros(5 * k)
    for i in range(k):
        n = contacts.normals[i]
        t1, t2 = contacts.tangents(i)
        mu = contacts.mu[i] / np.sqrt(2.0)
        sl = slice(3 * i, 3 * i + 3)
        C[5 * i + 0, sl] = t1 - mu * n
        C[5 * i + 1, sl] = -t1 - mu * n
        C[5 * i + 2, sl] = t2 - mu * n
        C[5 * i + 3, sl] = -t2 - mu * n
        C[5 * i + 4, sl] = n
        lower[5 * i + 4] = contacts.f_min[i]
        upper[5 * i + 4] = contacts.f_max[i]
    return C, lower, upper


def _clamp_to_cones(F, contacts):
    out = F.copy()
    for i in range(len(contacts)):
        n = contacts.normals[i]
        t1, t2 = contacts.tangents(i)
        fn = np.clip(out[i] @ n, contacts.f_min[i], contacts.f_max[i])
        lim = contacts.mu[i] / np.sqrt(2.0) * fn
        a = np.clip(out[i] @ t1, -lim, lim)
        b = np.clip(out[i] @ t2, -lim, lim)
        out[i] = fn * n + a * t1 + b * t2
    return out


def distribute_forces(W_desired, contacts: ContactSet, Q=None, R=DEFAULT_R) -> ForceDistribution:
    """Ground reaction forces that best realise ``W_desired`` inside the friction pyramids.

    Cost ``|A F - W|_Q^2 + R |F - F0|^2`` where ``F0`` is the Q-weighted
    minimum-norm wrench solution, i.e. the vanishing-regularization limit
    of the plain ``R |F|^2`` term; the regularizer only acts once bounds
    are active, so an achievable wrench is reproduced exactly.
    """
    W = np.asarray(W_desired, dtype=float)
    Qd = DEFAULT_Q if Q is None else np.asarray(Q, dtype=float)
    Qd = np.diag(Qd) if Qd.ndim == 2 else Qd
    A = wrench_map(contacts.positions)
    sq = np.sqrt(Qd)
    F0 = np.linalg.pinv(sq[:, None] * A, rcond=1e-10) @ (sq * W)
    H = A.T @ (Qd[:, None] * A) + R * np.eye(A.shape[1])
    g = -(A.T @ (Qd * W) + R * F0)
    C, lo, up = friction_constraints(contacts)
    status = "optimal"
    if np.any(contacts.f_min > contacts.f_max):
        F = _clamp_to_cones(F0.reshape(-1, 3), contacts)
        status = "clamped-infeasible"
    else:
        try:
            res = solve_qp(H, g, C, lo, up)
            F = res.x.reshape(-1, 3)
            if not res.ok:
                F = _clamp_to_cones(F, contacts)
                status = "clamped-infeasible"
        except QPError:
            F = _clamp_to_cones(F0.reshape(-1, 3), contacts)
            status = "clamped-infeasible"
    support = W[:3] @ contacts.normals.mean(axis=0)
    if support > contacts.f_max.sum() * (1.0 + 1e-9):
        status = "clamped-infeasible"
    achieved = A @ F.ravel()
    return ForceDistribution(F, achieved, status, float(np.linalg.norm(achieved - W)))


def stance_leg_torques(forces, jacobians):
    """Feedforward joint torques -J^T F for each stance leg."""
    return [-np.asarray(J).T @ np.asarray(F) for F, J in zip(forces, jacobians)]


def leg_torques(tau_ff, q, qd, q_des, qd_des, Kp, Kd):
    """Feedforward plus joint PD."""
    Kp = _diag(np.broadcast_to(np.asarray(Kp, float), (3,)) if np.ndim(Kp) < 2 else Kp)
    Kd = _diag(np.broadcast_to(np.asarray(Kd, float), (3,)) if np.ndim(Kd) < 2 else Kd)
    return (np.asarray(tau_ff, float) + Kp @ (np.asarray(q_des) - q)
            + Kd @ (np.asarray(qd_des) - qd))

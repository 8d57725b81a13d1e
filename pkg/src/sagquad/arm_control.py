"""Decoupled arm control.

The first four joints (Shelbow) place the wrist point WR with a Cartesian
impedance rendered in the horizontal frame.  The last three joints (wrist)
either track an end-effector position with a Cartesian spring, or follow
joint setpoints with a joint impedance; the latter is what the visual
servo drives.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import arm_bias, arm_chain, arm_point_jacobian

N_SHELBOW = 4

CARTESIAN = "cartesian-tracking"
VISUAL = "visual-joint-impedance"


def _diag3(K):
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        K = np.full(3, float(K))
    K = np.diag(K) if K.ndim == 1 else K
    if K.shape != (3, 3) or np.any(K - np.diag(np.diag(K))) or np.any(np.diag(K) < 0):
        raise ValueError("gain must be a nonnegative diagonal 3x3 matrix")
    return K


@dataclass
class ArmGains:
    K_p_sh: np.ndarray = 50.0       # N/m
    K_d_sh: np.ndarray = 5.0        # N s/m
    K_pc_wr: np.ndarray = 200.0     # N/m
    K_dc_wr: np.ndarray = 10.0      # N s/m
    K_pj_wr: np.ndarray = 100.0     # N m/rad
    K_dj_wr: np.ndarray = 5.0       # N m s/rad

    def __post_init__(self):
        for name in ("K_p_sh", "K_d_sh", "K_pc_wr", "K_dc_wr", "K_pj_wr", "K_dj_wr"):
            setattr(self, name, _diag3(getattr(self, name)))


@dataclass
class WristMode:
    mode: str = CARTESIAN
    q_des: np.ndarray = field(default_factory=lambda: np.zeros(3))
    qd_des: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x_des: np.ndarray = field(default_factory=lambda: np.zeros(3))
    xd_des: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.mode not in (CARTESIAN, VISUAL):
            raise ValueError(f"unknown wrist mode {self.mode!r}")


def split_jacobian(J_ea):
    J_ea = np.asarray(J_ea)
    return J_ea[:, :N_SHELBOW], J_ea[:, N_SHELBOW:]


def _force_torques(J, R_hb, force):
    # only the linear rows, rotated into the horizontal frame; zero moment
    return (R_hb @ np.asarray(J)[:3]).T @ force


def shelbow_torques(J_sh, x_wr, xd_wr, x_wr_des, xd_wr_des, gains: ArmGains, h_sh, R_hb=None):
    """Wrist-point impedance on the Shelbow joints.

    ``J_sh`` is the 6 x 4 Jacobian of WR in trunk coordinates, ``R_hb``
    rotates trunk coordinates into the horizontal frame (identity if the
    Jacobian is already horizontal).  Positions and velocities are in the
    horizontal frame.
    """
    R_hb = np.eye(3) if R_hb is None else R_hb
    F = (gains.K_p_sh @ (np.asarray(x_wr_des) - x_wr)
         + gains.K_d_sh @ (np.asarray(xd_wr_des) - xd_wr))
    return _force_torques(J_sh, R_hb, F) + np.asarray(h_sh)


def wrist_cartesian_torques(J_wr, x_e, xd_e, x_e_des, xd_e_des, gains: ArmGains, h_wr, R_hb=None):
    """End-effector position spring on the wrist joints (horizontal frame)."""
    R_hb = np.eye(3) if R_hb is None else R_hb
    F = (gains.K_pc_wr @ (np.asarray(x_e_des) - x_e)
         + gains.K_dc_wr @ (np.asarray(xd_e_des) - xd_e))
    return _force_torques(J_wr, R_hb, F) + np.asarray(h_wr)


def wrist_joint_torques(q_wr, qd_wr, q_wr_des, qd_wr_des, gains: ArmGains, h_wr):
    return (gains.K_pj_wr @ (np.asarray(q_wr_des) - q_wr)
            + gains.K_dj_wr @ (np.asarray(qd_wr_des) - qd_wr) + np.asarray(h_wr))


def arm_gravity_split(model, q_a, qd_a, gravity=None):
    """Bias torques split into (Shelbow, wrist); gravity in trunk coordinates."""
    h = arm_bias(model, q_a, qd_a) if gravity is None else arm_bias(model, q_a, qd_a, gravity)
    return h[:N_SHELBOW], h[N_SHELBOW:]


class WristSetpointIntegrator:
    """Integrates wrist joint-velocity references into joint setpoints.

    Trapezoidal rule at the vision period; the setpoint is kept within
    ``window`` of the measured wrist angles so it cannot run away while
    vision stalls or the joints are blocked.
    """

    def __init__(self, q0, window=0.5):
        self.q_des = np.array(q0, dtype=float)
        self.qd_des = np.zeros_like(self.q_des)
        self.window = window

    def reset(self, q):
        self.q_des = np.array(q, dtype=float)
        self.qd_des = np.zeros_like(self.q_des)

    def update(self, qd_new, dt, q_meas):
        qd_new = np.asarray(qd_new, dtype=float)
        self.q_des = self.q_des + 0.5 * dt * (self.qd_des + qd_new)
        self.q_des = np.clip(self.q_des, q_meas - self.window, q_meas + self.window)
        self.qd_des = qd_new
        return self.q_des


@dataclass
class ArmReference:
    """Everything the arm needs for one control tick."""
    x_wr_des: np.ndarray
    xd_wr_des: np.ndarray = field(default_factory=lambda: np.zeros(3))
    wrist: WristMode = field(default_factory=WristMode)


def horizontal_rotation(base_R):
    """Rotation taking trunk coordinates to horizontal-frame coordinates."""
    x = base_R[:, 0]
    yaw = np.arctan2(x[1], x[0])
    c, s = np.cos(yaw), np.sin(yaw)
    R_h = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return R_h.T @ base_R


def arm_torques(model, q_a, qd_a, base_R, ref: ArmReference, gains: ArmGains,
                gravity_world=(0.0, 0.0, -9.81)):
    """Full 7-joint torque command for the decoupled scheme.

    Wrist and EE positions are measured relative to the trunk origin and
    expressed in the horizontal frame.
    """
    ch = arm_chain(model)
    kin = ch.kinematics(q_a)
    R_hb = horizontal_rotation(base_R)
    g_b = base_R.T @ np.asarray(gravity_world, dtype=float)
    h_sh, h_wr = arm_gravity_split(model, q_a, qd_a, g_b)

    J_w = arm_point_jacobian(model, q_a, "WR", kin=kin)
    k, off = ch.link_index("WR")
    x_wr = R_hb @ (kin[1][k] + kin[0][k] @ off.translation)
    xd_wr = R_hb @ (J_w[:3] @ qd_a)
    J_sh, _ = split_jacobian(J_w)
    tau_sh = shelbow_torques(J_sh, x_wr, xd_wr, ref.x_wr_des, ref.xd_wr_des, gains, h_sh, R_hb)

    w = ref.wrist
    q_wr, qd_wr = q_a[N_SHELBOW:], qd_a[N_SHELBOW:]
    if w.mode == VISUAL:
        tau_wr = wrist_joint_torques(q_wr, qd_wr, w.q_des, w.qd_des, gains, h_wr)
    else:
        J_e = arm_point_jacobian(model, q_a, "EE", kin=kin)
        k, off = ch.link_index("EE")
        x_e = R_hb @ (kin[1][k] + kin[0][k] @ off.translation)
        xd_e = R_hb @ (J_e[:3] @ qd_a)
        _, J_wr = split_jacobian(J_e)
        tau_wr = wrist_cartesian_torques(J_wr, x_e, xd_e, w.x_des, w.xd_des, gains, h_wr, R_hb)
    return np.concatenate([tau_sh, tau_wr])

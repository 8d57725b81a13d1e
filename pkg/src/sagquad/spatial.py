"""Rigid transforms, the kinematic tree, forward kinematics and Jacobians.

All world quantities use a z-up world frame.  Jacobians stack the linear
rows on top of the angular rows and are expressed with world-aligned axes
unless a function says otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class KinematicsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# SO(3) helpers

def skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def vee(S):
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def rotx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def roty(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_matrix(rpy):
    """Fixed-axis roll, pitch, yaw: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    return rotz(rpy[2]) @ roty(rpy[1]) @ rotx(rpy[0])


def matrix_to_rpy(R):
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def exp_so3(w):
    """Rodrigues formula for the rotation vector ``w``."""
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (np.eye(3) + np.sin(theta) / theta * K
            + (1.0 - np.cos(theta)) / theta ** 2 * K @ K)


def log_so3(R):
    """Rotation vector (axis * angle) of ``R``; angle in [0, pi]."""
    cos_t = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_t)
    if theta < 1e-6:
        # first-order expansion keeps the map smooth at the identity
        return 0.5 * vee(R - R.T) * (1.0 + theta ** 2 / 6.0)
    if np.pi - theta < 1e-6:
        # near pi the skew part vanishes; recover the axis from R + I
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if np.dot(vee(R - R.T), axis) < 0.0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * vee(R - R.T)


def rotation_error(R_desired, R_actual):
    """Orientation error as the world-frame rotation vector of ``R_d R^T``.

    Zero iff the two rotations coincide; equal to axis*angle of the
    rotation that carries ``R_actual`` onto ``R_desired``.
    """
    return log_so3(np.asarray(R_desired) @ np.asarray(R_actual).T)


def orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


# ---------------------------------------------------------------------------
# Pose / Twist

@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def from_xyz_rpy(cls, xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)):
        return cls(rpy_to_matrix(rpy), np.asarray(xyz, dtype=float))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, point):
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def as_matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(3))
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    def as_vector(self):
        return np.concatenate([self.linear, self.angular])

    def transform(self, pose: Pose) -> "Twist":
        """Re-express a twist given in frame A into frame B, where ``pose`` is A in B.

        Uses the adjoint map: the reference point moves to B's origin.
        """
        w = pose.rotation @ self.angular
        v = pose.rotation @ self.linear + np.cross(pose.translation, w)
        return Twist(v, w)


def adjoint(pose: Pose):
    A = np.zeros((6, 6))
    A[:3, :3] = pose.rotation
    A[3:, 3:] = pose.rotation
    A[:3, 3:] = skew(pose.translation) @ pose.rotation
    return A


# ---------------------------------------------------------------------------
# Kinematic tree

REVOLUTE = 0
PRISMATIC = 1

BASE = -1  # parent index of links attached directly to the floating base


@dataclass
class Link:
    name: str
    parent: int
    origin: Pose
    axis: np.ndarray
    joint_type: int = REVOLUTE
    mass: float = 0.0
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inertia: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    armature: float = 0.0
    damping: float = 0.0


@dataclass
class Frame:
    name: str
    link: int
    offset: Pose


class KinematicModel:
    """Tree of single-DoF joints hanging from a floating base.

    Link ``i`` carries joint ``i``; its frame is
    ``T_parent @ origin @ joint_motion(q_i)``.  Parents always precede
    children, so a single forward sweep evaluates the whole tree.
    """

    def __init__(self, links, frames, base_mass, base_inertia, groups=None,
                 home=None, name="robot"):
        self.name = name
        self.links = list(links)
        self.n = len(self.links)
        for i, link in enumerate(self.links):
            if not (link.parent == BASE or 0 <= link.parent < i):
                raise KinematicsError(
                    f"link {link.name!r}: parent index {link.parent} must precede it")
            ax = np.asarray(link.axis, dtype=float)
            if abs(np.linalg.norm(ax) - 1.0) > 1e-9:
                raise KinematicsError(f"link {link.name!r}: joint axis must be unit length")
        self.frames = {f.name: f for f in frames}
        if "B" not in self.frames:
            self.frames["B"] = Frame("B", BASE, Pose())
        for f in self.frames.values():
            if not (f.link == BASE or 0 <= f.link < self.n):
                raise KinematicsError(f"frame {f.name!r} attached to unknown link {f.link}")
        self.base_mass = float(base_mass)
        self.base_inertia = np.asarray(base_inertia, dtype=float).reshape(3, 3)
        self.groups = dict(groups or {})
        self.home = {k: np.asarray(v, dtype=float) for k, v in (home or {}).items()}
        self.link_index = {link.name: i for i, link in enumerate(self.links)}

        # packed arrays for the hot loops
        self.parent = np.array([l.parent for l in self.links], dtype=int)
        self.origin_R = np.array([l.origin.rotation for l in self.links]).reshape(self.n, 3, 3)
        self.origin_p = np.array([l.origin.translation for l in self.links]).reshape(self.n, 3)
        self.axis = np.array([l.axis for l in self.links], dtype=float).reshape(self.n, 3)
        self.joint_type = np.array([l.joint_type for l in self.links], dtype=int)
        self.mass = np.array([l.mass for l in self.links], dtype=float)
        self.com = np.array([l.com for l in self.links], dtype=float).reshape(self.n, 3)
        self.inertia = np.array([l.inertia for l in self.links], dtype=float).reshape(self.n, 3, 3)
        self.armature = np.array([l.armature for l in self.links], dtype=float)
        self.damping = np.array([l.damping for l in self.links], dtype=float)

        arm = self.groups.get("arm")
        if arm is not None:
            if len(arm) != 7 or any(self.joint_type[i] != REVOLUTE for i in arm):
                raise KinematicsError("arm group must list 7 revolute joints")
            for a, b in zip(arm[:-1], arm[1:]):
                if self.parent[b] != a:
                    raise KinematicsError("arm group must be a serial chain")

    # -- structure queries -------------------------------------------------
    def frame(self, name) -> Frame:
        try:
            return self.frames[name]
        except KeyError:
            raise KinematicsError(f"unknown frame {name!r}") from None

    def ancestors(self, link):
        """Joint indices from the base down to ``link`` (inclusive)."""
        path = []
        while link != BASE:
            path.append(link)
            link = self.parent[link]
        return path[::-1]

    @property
    def arm(self):
        return list(self.groups["arm"])

    @property
    def shelbow(self):
        return self.arm[:4]

    @property
    def wrist(self):
        return self.arm[4:]

    @property
    def legs(self):
        return dict(self.groups.get("legs", {}))

    @property
    def arm_mass(self):
        return float(self.mass[self.arm].sum())

    @property
    def total_mass(self):
        return self.base_mass + float(self.mass.sum())


@dataclass
class RobotState:
    """Generalized coordinates of the floating-base robot.

    Base velocities are world-frame: linear velocity of the base origin and
    angular velocity.  ``contacts`` is a per-foot stance flag in leg order.
    """
    base_rotation: np.ndarray
    base_position: np.ndarray
    base_linear_velocity: np.ndarray
    base_angular_velocity: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    contacts: np.ndarray = field(default_factory=lambda: np.ones(4, dtype=bool))

    @classmethod
    def zeros(cls, model: KinematicModel):
        return cls(np.eye(3), np.zeros(3), np.zeros(3), np.zeros(3),
                   np.zeros(model.n), np.zeros(model.n))

    @property
    def base_pose(self) -> Pose:
        return Pose(self.base_rotation, self.base_position)

    def copy(self) -> "RobotState":
        return RobotState(self.base_rotation.copy(), self.base_position.copy(),
                          self.base_linear_velocity.copy(), self.base_angular_velocity.copy(),
                          self.q.copy(), self.qd.copy(), np.array(self.contacts, dtype=bool))


def _check_state(model, state):
    if np.shape(state.q) != (model.n,) or np.shape(state.qd) != (model.n,):
        raise KinematicsError(
            f"state has {np.shape(state.q)} joints, model expects ({model.n},)")


def joint_rotation(model, i, qi):
    if model.joint_type[i] == PRISMATIC:
        return np.eye(3)
    return exp_so3(model.axis[i] * qi)


def link_transforms(model: KinematicModel, q, base_R=None, base_p=None, links=None):
    """World rotations and origins of links.

    ``links`` restricts the sweep to the given indices plus their ancestors
    (results for other links are left as NaN).
    """
    base_R = np.eye(3) if base_R is None else base_R
    base_p = np.zeros(3) if base_p is None else base_p
    R = np.full((model.n, 3, 3), np.nan)
    p = np.full((model.n, 3), np.nan)
    if links is None:
        todo = range(model.n)
    else:
        needed = set()
        for l in links:
            needed.update(model.ancestors(l))
        todo = sorted(needed)
    for i in todo:
        par = model.parent[i]
        if par == BASE:
            Rp, pp = base_R, base_p
        else:
            Rp, pp = R[par], p[par]
        Ro = Rp @ model.origin_R[i]
        po = pp + Rp @ model.origin_p[i]
        if model.joint_type[i] == PRISMATIC:
            R[i] = Ro
            p[i] = po + Ro @ (model.axis[i] * q[i])
        else:
            R[i] = Ro @ exp_so3(model.axis[i] * q[i])
            p[i] = po
    return R, p


def forward_kinematics(model: KinematicModel, state: RobotState, frame) -> Pose:
    """World pose of a named frame."""
    _check_state(model, state)
    f = model.frame(frame)
    if f.link == BASE:
        return state.base_pose @ f.offset
    R, p = link_transforms(model, state.q, state.base_rotation, state.base_position,
                           links=[f.link])
    return Pose(R[f.link], p[f.link]) @ f.offset


def _chain_joints(model, frame, base_of_chain):
    f = model.frame(frame)
    b = model.frame(base_of_chain)
    path = model.ancestors(f.link) if f.link != BASE else []
    if b.link == BASE:
        return f, path
    if b.link not in path:
        raise KinematicsError(f"frame {frame!r} is not downstream of {base_of_chain!r}")
    return f, path[path.index(b.link) + 1:]


def geometric_jacobian(model: KinematicModel, state: RobotState, frame, base_of_chain="B"):
    """6 x n Jacobian of ``frame`` w.r.t. the joints between ``base_of_chain`` and it.

    Column j maps a unit rate of joint j to the frame's twist (origin
    velocity, angular velocity) in world-aligned axes.  Joints outside the
    chain get zero columns.  The floating base does not contribute.
    """
    _check_state(model, state)
    f, joints = _chain_joints(model, frame, base_of_chain)
    J = np.zeros((6, model.n))
    if f.link == BASE:
        return J
    R, p = link_transforms(model, state.q, state.base_rotation, state.base_position,
                           links=[f.link])
    p_f = p[f.link] + R[f.link] @ f.offset.translation
    for j in joints:
        z = R[j] @ model.axis[j]
        if model.joint_type[j] == PRISMATIC:
            J[:3, j] = z
        else:
            J[:3, j] = np.cross(z, p_f - p[j])
            J[3:, j] = z
    return J


def horizontal_frame(base_pose: Pose) -> Pose:
    """Frame at the base origin with z = world z and x = heading of the base x-axis."""
    x = base_pose.rotation[:, 0]
    xh = np.array([x[0], x[1], 0.0])
    nrm = np.linalg.norm(xh)
    if nrm < np.sin(1e-6):
        raise KinematicsError("base x-axis is vertical; heading undefined")
    xh /= nrm
    z = np.array([0.0, 0.0, 1.0])
    y = np.cross(z, xh)
    return Pose(np.column_stack([xh, y, z]), base_pose.translation.copy())


def heading(R):
    """Yaw of the horizontal projection of a rotation's x-axis."""
    return float(np.arctan2(R[1, 0], R[0, 0]))


def wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi

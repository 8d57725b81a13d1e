"""Eye-in-hand camera, simulated detector and image-based visual servoing.

Features live on the normalized projection plane (unit focal length).  The
camera optical axis is camera z, image x points right and image y down.
The third feature is the base-z component of the camera x-axis, which is
zero when the image horizon is level with the trunk.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spatial import Pose, Twist

SV_CUTOFF = 1e-6


class BehindCameraError(ValueError):
    pass


class InvalidDepthError(ValueError):
    pass


class NoTargetError(ValueError):
    pass


@dataclass
class CameraModel:
    focal: float = 1.0
    half_extent: tuple = (0.95, 0.55)      # tan(87/2 deg), tan(58/2 deg)
    mount: Pose = field(default_factory=Pose)   # camera C relative to the EE frame
    z_range: tuple = (0.15, 8.0)
    min_radius: float = 0.002
    depth_noise: float = 0.01           # m, zero-mean Gaussian on the depth channel
    constant_depth: float | None = None   # if set, servo with this Z instead of the measurement

    def __post_init__(self):
        if min(self.half_extent) <= 0 or self.focal <= 0:
            raise ValueError("camera half-extents and focal length must be positive")


@dataclass
class Detection:
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    half_size: np.ndarray = field(default_factory=lambda: np.zeros(2))
    Z: float = 0.0
    valid: bool = False

    @classmethod
    def invalid(cls):
        return cls()


@dataclass
class FeatureError:
    e_s: np.ndarray
    valid: bool = True

    @property
    def norm(self):
        return float(np.linalg.norm(self.e_s))


def project(point, focal=1.0):
    X, Y, Z = np.asarray(point, dtype=float)
    if Z <= 0.0:
        raise BehindCameraError("point is behind the camera")
    return focal * X / Z, focal * Y / Z, Z


def detect(center, radius, camera_pose: Pose, model: CameraModel, rng=None) -> Detection:
    """Bounding box of a sphere as a color blob detector would report it.

    ``Z`` is the depth channel reading: ground truth plus Gaussian noise
    when ``rng`` is given.
    """
    p = camera_pose.inverse().apply(center)
    Z = p[2]
    zmin, zmax = model.z_range
    if not zmin <= Z <= zmax:
        return Detection.invalid()
    x, y, _ = project(p, model.focal)
    hx, hy = model.half_extent
    r = model.focal * radius / Z
    if abs(x) > hx or abs(y) > hy or r < model.min_radius:
        return Detection.invalid()
    Zm = Z if rng is None or model.depth_noise <= 0 else Z + model.depth_noise * rng.standard_normal()
    return Detection(np.array([x, y]), np.array([r, r]), float(max(Zm, zmin)), True)


def point_interaction_matrix(x, y, Z):
    if Z <= 0:
        raise InvalidDepthError("depth must be positive")
    return np.array([
        [-1.0 / Z, 0.0, x / Z, x * y, -(1.0 + x * x), y],
        [0.0, -1.0 / Z, y / Z, 1.0 + y * y, -x * y, -x],
    ])


def roll_feature(R_cb):
    return R_cb[2, 0]


def roll_interaction_row(R_cb):
    return np.array([[0.0, 0.0, 0.0, 0.0, -R_cb[2, 2], R_cb[2, 1]]])


def feature_error(det: Detection, R_cb) -> FeatureError:
    if not det.valid:
        raise NoTargetError("no valid detection")
    return FeatureError(np.array([det.center[0], det.center[1], roll_feature(R_cb)]))


def interaction_matrix(det: Detection, R_cb, Z=None):
    """Stacked 3 x 6 matrix for (x, y, roll feature)."""
    Z = det.Z if Z is None else Z
    return np.vstack([point_interaction_matrix(det.center[0], det.center[1], Z),
                      roll_interaction_row(R_cb)])


def truncated_pinv(A, cutoff=SV_CUTOFF):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (Vt.T * inv) @ U.T


def camera_twist(e_s, L_hat, lam) -> Twist:
    """Camera-frame twist that makes the features decay as exp(-lam t)."""
    if lam <= 0:
        raise ValueError("servo gain must be positive")
    e = e_s.e_s if isinstance(e_s, FeatureError) else np.asarray(e_s, dtype=float)
    return Twist.from_vector(-lam * truncated_pinv(L_hat) @ e)


def wrist_velocity_reference(xi_c, J_wr, R_cb):
    """Wrist joint rates realising a camera twist as closely as possible.

    The camera-frame twist is rotated into trunk coordinates, where ``J_wr``
    (the camera-frame Jacobian w.r.t. the wrist joints) lives.
    """
    v = xi_c.as_vector() if isinstance(xi_c, Twist) else np.asarray(xi_c, dtype=float)
    v_b = np.concatenate([R_cb @ v[:3], R_cb @ v[3:]])
    return truncated_pinv(J_wr) @ v_b


def servo_step(det: Detection, R_cb, J_wr, lam, model: CameraModel | None = None,
               carrier_rate=None):
    """One vision tick: returns (wrist rate reference, feature error).

    ``carrier_rate`` is the feature rate caused by everything except the
    wrist (trunk and proximal joints); when given it is cancelled so the
    error still decays at ``lam``. An invalid detection yields a zero rate
    and an invalid error.
    """
    if not det.valid:
        return np.zeros(J_wr.shape[1]), FeatureError(np.zeros(3), valid=False)
    Z = det.Z
    if model is not None and model.constant_depth is not None:
        Z = model.constant_depth
    err = feature_error(det, R_cb)
    L = interaction_matrix(det, R_cb, Z)
    if carrier_rate is None:
        xi = camera_twist(err, L, lam)
    else:
        xi = Twist.from_vector(truncated_pinv(L) @ (-lam * err.e_s - np.asarray(carrier_rate)))
    return wrist_velocity_reference(xi, J_wr, R_cb), err


def carrier_feature_rate(det: Detection, R_cb, Z, twist_world_c, twist_arm_c):
    """Feature rate produced by a camera twist that the wrist does not command.

    Both twists are in camera coordinates: ``twist_world_c`` is the motion
    relative to the world (moves the image point), ``twist_arm_c`` the part
    relative to the trunk (moves the roll feature).
    """
    Lp = point_interaction_matrix(det.center[0], det.center[1], Z)
    return np.r_[Lp @ np.asarray(twist_world_c, float),
                 roll_interaction_row(R_cb) @ np.asarray(twist_arm_c, float)]

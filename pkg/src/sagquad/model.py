"""Model-file loading and leg kinematics for the default quadruped-arm robot.

Model files are YAML.  Schema (lengths in m, masses in kg, angles in rad)::

    name: <str>
    base: {mass: <float>, inertia: [ixx, iyy, izz] | 3x3}
    links:                       # parents listed before children
      - name: <str>
        parent: base | <link name>
        joint: revolute | prismatic
        axis: [x, y, z]          # unit, in the joint frame
        xyz: [x, y, z]           # joint origin in the parent link frame
        rpy: [r, p, y]           # optional, fixed-axis roll/pitch/yaw
        mass: <float>            # optional, default 0
        com: [x, y, z]           # optional, link frame
        inertia: [ixx, iyy, izz] | [ixx, iyy, izz, ixy, ixz, iyz]   # about the CoM
        armature: <float>        # optional reflected rotor inertia, kg m^2
        damping: <float>         # optional viscous joint friction, N m s/rad
    frames:
      - {name: <str>, link: base | <link name>, xyz: [...], rpy: [...]}
    groups:
      arm: [7 link names]        # first four = Shelbow, last three = wrist
      legs: {LF: [haa, hfe, kfe], RF: [...], LH: [...], RH: [...]}
    home:
      arm: [7 angles]
    stance:
      height: <float>            # nominal base height above flat ground
      feet: {LF: [x, y], ...}    # nominal foot positions, base frame

Frames ``B``, ``shoulder``, ``WR``, ``C``, ``EE`` and ``<leg>_foot`` are
expected by the controllers.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .spatial import (BASE, PRISMATIC, REVOLUTE, Frame, KinematicModel, KinematicsError,
                      Link, Pose, RobotState)

LEG_NAMES = ("LF", "RF", "LH", "RH")


class ModelFileError(ValueError):
    pass


def default_model_path() -> Path:
    return Path(resources.files("sagquad") / "data" / "default_robot.yaml")


def _inertia(v):
    v = np.asarray(v, dtype=float)
    if v.shape == (3, 3):
        return v
    if v.shape == (3,):
        return np.diag(v)
    if v.shape == (6,):
        ixx, iyy, izz, ixy, ixz, iyz = v
        return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    raise ModelFileError(f"bad inertia spec {v.tolist()}")


def model_from_dict(data) -> KinematicModel:
    names = {}
    links = []
    for k, entry in enumerate(data.get("links", [])):
        try:
            name = entry["name"]
            parent = entry.get("parent", "base")
            if parent in (None, "base", "B"):
                pidx = BASE
            elif parent in names:
                pidx = names[parent]
            else:
                raise ModelFileError(f"links[{k}] ({name}): unknown or later parent {parent!r}")
            jtype = {"revolute": REVOLUTE, "prismatic": PRISMATIC}[entry.get("joint", "revolute")]
            axis = np.asarray(entry["axis"], dtype=float)
            links.append(Link(
                name=name, parent=pidx,
                origin=Pose.from_xyz_rpy(entry.get("xyz", (0, 0, 0)), entry.get("rpy", (0, 0, 0))),
                axis=axis / np.linalg.norm(axis), joint_type=jtype,
                mass=float(entry.get("mass", 0.0)),
                com=np.asarray(entry.get("com", (0, 0, 0)), dtype=float),
                inertia=_inertia(entry.get("inertia", (0, 0, 0))),
                armature=float(entry.get("armature", 0.0)),
                damping=float(entry.get("damping", 0.0)),
            ))
        except KeyError as exc:
            raise ModelFileError(f"links[{k}]: missing field {exc}") from None
        names[name] = len(links) - 1

    def link_of(ref, where):
        if ref in (None, "base", "B"):
            return BASE
        if ref not in names:
            raise ModelFileError(f"{where}: unknown link {ref!r}")
        return names[ref]

    frames = [Frame(f["name"], link_of(f.get("link"), f"frame {f['name']}"),
                    Pose.from_xyz_rpy(f.get("xyz", (0, 0, 0)), f.get("rpy", (0, 0, 0))))
              for f in data.get("frames", [])]
    groups_in = data.get("groups", {})
    groups = {}
    if "arm" in groups_in:
        groups["arm"] = [link_of(n, "groups.arm") for n in groups_in["arm"]]
    if "legs" in groups_in:
        groups["legs"] = {leg: [link_of(n, f"groups.legs.{leg}") for n in js]
                          for leg, js in groups_in["legs"].items()}
    base = data.get("base", {})
    try:
        model = KinematicModel(links, frames, base.get("mass", 0.0),
                               _inertia(base.get("inertia", (0, 0, 0))),
                               groups=groups, home=data.get("home", {}),
                               name=data.get("name", "robot"))
    except KinematicsError as exc:
        raise ModelFileError(str(exc)) from None
    stance = data.get("stance", {})
    model.stance_height = float(stance.get("height", 0.0))
    model.nominal_feet = {leg: np.asarray(xy, dtype=float)
                          for leg, xy in stance.get("feet", {}).items()}
    if "legs" in groups:
        _attach_leg_geometry(model)
    return model


def load_model(path=None) -> KinematicModel:
    path = default_model_path() if path is None else Path(path)
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ModelFileError(f"{path}: {exc}") from None
    return model_from_dict(data)


# ---------------------------------------------------------------------------
# legs: hip abduction (x) + hip flexion (y) + knee (y), collocated hip joints

def _attach_leg_geometry(model):
    geo = {}
    for leg, (haa, hfe, kfe) in model.legs.items():
        foot = model.frame(f"{leg}_foot")
        if foot.link != kfe:
            raise ModelFileError(f"{leg}_foot must hang from the knee link")
        l1 = -model.origin_p[kfe][2]
        l2 = -foot.offset.translation[2]
        ok = (np.allclose(model.axis[haa], (1, 0, 0)) and np.allclose(model.axis[hfe], (0, 1, 0))
              and np.allclose(model.axis[kfe], (0, 1, 0))
              and np.allclose(model.origin_p[hfe], 0) and np.allclose(model.origin_p[kfe][:2], 0)
              and np.allclose(foot.offset.translation[:2], 0) and l1 > 0 and l2 > 0)
        if not ok:
            raise ModelFileError(f"leg {leg}: only HAA(x)-HFE(y)-KFE(y) legs are supported")
        geo[leg] = (model.origin_p[haa].copy(), l1, l2)
    model.leg_geometry = geo


def leg_ik(model, leg, foot_in_base):
    """Joint angles placing the foot at ``foot_in_base`` (clamped to reach)."""
    hip, l1, l2 = model.leg_geometry[leg]
    px, py, pz = np.asarray(foot_in_base, dtype=float) - hip
    a = np.arctan2(py, -pz)
    L = np.hypot(py, pz)
    d2 = px * px + L * L
    reach = (l1 + l2) * 0.999
    if d2 > reach * reach:
        s = reach / np.sqrt(d2)
        px, L = px * s, L * s
        d2 = reach * reach
    ck = np.clip((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0)
    k = -np.arccos(ck)
    A = l1 + l2 * np.cos(k)
    B = l2 * np.sin(k)
    h = np.arctan2(-px, L) - np.arctan2(B, A)
    return np.array([a, h, k])


def leg_fk(model, leg, q_leg):
    """Foot position in the base frame."""
    hip, l1, l2 = model.leg_geometry[leg]
    a, h, k = q_leg
    ux = -l1 * np.sin(h) - l2 * np.sin(h + k)
    uz = -l1 * np.cos(h) - l2 * np.cos(h + k)
    return hip + np.array([ux, -np.sin(a) * uz, np.cos(a) * uz])


def leg_jacobian(model, leg, q_leg):
    """3x3 Jacobian of the foot position (base frame) w.r.t. the leg joints."""
    hip, l1, l2 = model.leg_geometry[leg]
    a, h, k = q_leg
    s_a, c_a = np.sin(a), np.cos(a)
    ux = -l1 * np.sin(h) - l2 * np.sin(h + k)
    uz = -l1 * np.cos(h) - l2 * np.cos(h + k)
    dux_dh = -l1 * np.cos(h) - l2 * np.cos(h + k)
    dux_dk = -l2 * np.cos(h + k)
    duz_dh = l1 * np.sin(h) + l2 * np.sin(h + k)
    duz_dk = l2 * np.sin(h + k)
    return np.array([
        [0.0, dux_dh, dux_dk],
        [-c_a * uz, -s_a * duz_dh, -s_a * duz_dk],
        [-s_a * uz, c_a * duz_dh, c_a * duz_dk],
    ])


def standing_state(model, base_position=None, yaw=0.0) -> RobotState:
    """All-stance state at the nominal height with the arm at home."""
    from .spatial import rotz
    state = RobotState.zeros(model)
    state.base_rotation = rotz(yaw)
    state.base_position = (np.array([0.0, 0.0, model.stance_height]) if base_position is None
                           else np.asarray(base_position, dtype=float))
    for leg, joints in model.legs.items():
        xy = model.nominal_feet[leg]
        state.q[joints] = leg_ik(model, leg, [xy[0], xy[1], -model.stance_height])
    if "arm" in model.home:
        state.q[model.arm] = model.home["arm"]
    return state

"""Scenario runner.

A scenario is a YAML file naming a kind (disturbance-servo, sag-static,
sag-thrown, free-camera-ibvs) plus overrides for any gain or parameter.
``run`` executes it and writes a tidy CSV log with a JSON sidecar;
``summarize`` recomputes the metrics from those two files alone.

Exit codes: 0 success, 1 scenario failure, 2 config error, 3 divergence.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .arm_control import ArmGains
from .model import ModelFileError, load_model
from .sag import ApproachParams, GraspParams, SagController, SearchParams
from .sim import (LOG_COLUMNS, ClosedLoop, ControlRates, Disturbance, DisturbanceProfile,
                  GaitSchedule, HoldAndServo, LoopConfig, Mission, ObjectState, SagMission,
                  SimulationDiverged, home_wrist_target, initial_world, simulate_free_camera,
                  throw_velocity)
from .spatial import Pose
from .vision import CameraModel
from .wbc import TrunkGains

KINDS = ("disturbance-servo", "sag-static", "sag-thrown", "free-camera-ibvs")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class LogParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ObjectSpec:
    position: tuple = (2.5, 0.0, 0.4)
    radius: float = 0.035


@dataclass
class RobotSpec:
    position: tuple | None = None     # default: origin at stance height
    yaw: float = 0.0


@dataclass
class ThrowSpec:
    start: tuple = (2.0, 1.0, 0.8)
    stop: tuple = (2.0, -1.0, 0.8)
    release_time: float = 2.0
    flight_time: float = 0.8
    grasp_after_catch: bool = True
    hold_after_catch: float = 1.0


@dataclass
class FreeCameraSpec:
    feature: tuple = (0.25, -0.15)    # initial projection of the target
    depth: float = 1.5
    roll: float = 0.1                 # initial camera roll about the optical axis, rad
    dt: float = 0.001


@dataclass
class SuccessSpec:
    settle_threshold: float = 0.01
    settle_window: float = 3.0
    close_distance: float = 0.03
    fov_fraction: float = 0.95
    decay_tolerance: float = 0.05


@dataclass
class ScenarioConfig:
    kind: str
    model: str | None = None
    duration: float = 10.0
    seed: int = 0
    output: str = "runs"
    name: str | None = None
    vision_noise: bool = True
    loop: LoopConfig = field(default_factory=LoopConfig)
    search: SearchParams = field(default_factory=SearchParams)
    approach: ApproachParams = field(default_factory=ApproachParams)
    grasp: GraspParams = field(default_factory=GraspParams)
    object: ObjectSpec = field(default_factory=ObjectSpec)
    robot: RobotSpec = field(default_factory=RobotSpec)
    disturbances: list = field(default_factory=list)
    throw: ThrowSpec = field(default_factory=ThrowSpec)
    free_camera: FreeCameraSpec = field(default_factory=FreeCameraSpec)
    success: SuccessSpec = field(default_factory=SuccessSpec)
    source: str | None = None

    @property
    def stem(self):
        return self.name or (Path(self.source).stem if self.source else self.kind)


# sections of the YAML file and the dataclass each one fills
_LOOP_SECTIONS = {"trunk": TrunkGains, "arm": ArmGains, "camera": CameraModel,
                  "gait": GaitSchedule, "rates": ControlRates}
_TOP_SECTIONS = {"search": SearchParams, "approach": ApproachParams, "grasp": GraspParams,
                 "object": ObjectSpec, "robot": RobotSpec, "throw": ThrowSpec,
                 "free_camera": FreeCameraSpec, "success": SuccessSpec}
_LOOP_SCALARS = {f.name for f in dataclasses.fields(LoopConfig)} - set(_LOOP_SECTIONS)
_TOP_SCALARS = {"kind", "model", "duration", "seed", "output", "name", "vision_noise"}


def _node_line(root, path):
    """1-based line of the YAML node at ``path`` (keys / indices), best effort."""
    node, line = root, None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == key:
                    node, line = v, k.start_mark.line + 1
                    break
            else:
                return line
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line if line is not None else (node.start_mark.line + 1 if node is not None else None)


def _err(src, root, path, msg):
    line = _node_line(root, path) if root is not None else None
    where = f"{src}:{line}" if line else src
    field_name = ".".join(str(p) for p in path)
    return ConfigError(f"{where}: {field_name}: {msg}" if field_name else f"{where}: {msg}")


def _build(cls, data, src, root, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise _err(src, root, path, "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise _err(src, root, path + [k], f"unknown field (expected one of {sorted(names)})")
    kw = {}
    for k, v in data.items():
        kw[k] = np.deg2rad(v) if k in ("limit_a", "limit_b", "ee_half_angle") else v
        if isinstance(v, list):
            kw[k] = tuple(v) if cls not in (TrunkGains, ArmGains) else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        bad = next((k for k in data if k in str(exc)), None)
        raise _err(src, root, path + ([bad] if bad else []), str(exc)) from None


def parse_config(text, source="<string>") -> ScenarioConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    known = _TOP_SCALARS | set(_TOP_SECTIONS) | {"loop", "disturbances"}
    for k in data:
        if k not in known:
            raise _err(source, root, [k], f"unknown section (expected one of {sorted(known)})")
    kind = data.get("kind")
    if kind not in KINDS:
        raise _err(source, root, ["kind"], f"must be one of {list(KINDS)}, got {kind!r}")

    loop_data = data.get("loop") or {}
    if not isinstance(loop_data, dict):
        raise _err(source, root, ["loop"], "expected a mapping")
    loop_kw = {}
    for k, v in loop_data.items():
        if k in _LOOP_SECTIONS:
            loop_kw[k] = _build(_LOOP_SECTIONS[k], v, source, root, ["loop", k])
        elif k in _LOOP_SCALARS:
            if k in ("lam", "mu", "f_max", "R", "pitch_rate", "capture_gain", "track_memory") and float(v) < 0:
                raise _err(source, root, ["loop", k], "must be nonnegative")
            if isinstance(getattr(LoopConfig, k, None), bool) and not isinstance(v, bool):
                raise _err(source, root, ["loop", k], f"expected true or false, got {v!r}")
            loop_kw[k] = tuple(v) if isinstance(v, list) else v
        else:
            raise _err(source, root, ["loop", k], "unknown field")
    try:
        loop = LoopConfig(**loop_kw)
    except (TypeError, ValueError) as exc:
        raise _err(source, root, ["loop"], str(exc)) from None
    if loop.lam <= 0:
        raise _err(source, root, ["loop", "lam"], "servo gain must be positive")

    kw = {"kind": kind, "loop": loop, "source": source}
    for k in _TOP_SCALARS - {"kind"}:
        if k in data:
            kw[k] = data[k]
    for k, cls in _TOP_SECTIONS.items():
        if k in data:
            kw[k] = _build(cls, data[k], source, root, [k])
    dist = []
    for i, d in enumerate(data.get("disturbances") or []):
        dist.append(_build(Disturbance, d, source, root, ["disturbances", i]))
    try:
        DisturbanceProfile(dist)
    except ValueError as exc:
        raise _err(source, root, ["disturbances"], str(exc)) from None
    kw["disturbances"] = dist

    try:
        duration = float(kw.get("duration", 10.0))
    except (TypeError, ValueError):
        raise _err(source, root, ["duration"], "must be a number") from None
    if not duration > 0:
        raise _err(source, root, ["duration"], "must be positive")
    kw["duration"] = duration
    cfg = ScenarioConfig(**kw)
    if cfg.model is not None:
        p = Path(cfg.model)
        if not p.is_absolute() and source not in ("<string>",):
            p = Path(source).parent / p
        if not p.exists():
            raise _err(source, root, ["model"], f"model file {str(p)!r} does not exist")
        cfg.model = str(p)
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: scenario file does not exist")
    return parse_config(path.read_text(), str(path))


# ---------------------------------------------------------------------------
# running

@dataclass
class RunSummary:
    kind: str
    success: bool
    final_distance: float
    max_feature_error: float
    settle_times: list
    qp_infeasible: int
    wall_clock: float
    stop_distance: float | None = None
    fov_fraction: float | None = None
    decay_rate: float | None = None
    gripper_closed: bool = False

    def __post_init__(self):
        if self.final_distance < 0:
            raise ValueError("distances are nonnegative")

    def as_dict(self):
        return dataclasses.asdict(self)

    def same_result(self, other):
        """Equality ignoring wall-clock time."""
        a, b = self.as_dict(), other.as_dict()
        a.pop("wall_clock"), b.pop("wall_clock")
        return json.dumps(a, sort_keys=True, default=str) == json.dumps(b, sort_keys=True,
                                                                        default=str)


class ThrownMission(Mission):
    """Wrist-only tracking during the throw, then the full pipeline."""

    def __init__(self, hold: HoldAndServo, sag: SagMission | None, switch_time):
        self.hold, self.sag, self.switch_time = hold, sag, switch_time

    @property
    def phase(self):
        if self.sag is not None and self.active is self.sag:
            return self.sag.phase
        return "track"

    @property
    def active(self):
        return self._active if hasattr(self, "_active") else self.hold

    def tick(self, per, bb):
        self._active = self.sag if (self.sag is not None and per.t >= self.switch_time) else self.hold
        out = self._active.tick(per, bb)
        if self._active is self.hold:
            out.phase = "track"
        return out


def _loop_for(cfg: ScenarioConfig, model):
    obj = ObjectState(np.array(cfg.object.position, dtype=float), radius=cfg.object.radius)
    meta = {}
    if cfg.kind == "sag-thrown":
        t = cfg.throw
        obj = ObjectState(np.array(t.start, dtype=float), radius=cfg.object.radius,
                          release_time=t.release_time,
                          release_velocity=throw_velocity(t.start, t.stop, t.flight_time),
                          catch_time=t.release_time + t.flight_time,
                          catch_point=np.array(t.stop, dtype=float))
        meta["flight"] = [t.release_time, t.release_time + t.flight_time]
        meta["grasp_after_catch"] = bool(t.grasp_after_catch)
    base = None if cfg.robot.position is None else np.array(cfg.robot.position, dtype=float)
    world = initial_world(model, obj, base, cfg.robot.yaw)
    hold = HoldAndServo(home_wrist_target(model))
    if cfg.kind == "disturbance-servo":
        mission = hold
    else:
        sag = SagMission(SagController(cfg.search, cfg.approach, cfg.grasp,
                                       dt=cfg.loop.rates.plant_dt * cfg.loop.rates.control_every
                                       * cfg.loop.rates.tree_every))
        if cfg.kind == "sag-static":
            mission = sag
        else:
            t = cfg.throw
            mission = ThrownMission(hold, sag if t.grasp_after_catch else None,
                                    t.release_time + t.flight_time + t.hold_after_catch)
    prof = DisturbanceProfile(list(cfg.disturbances))
    meta["releases"] = prof.releases()
    meta["pushes"] = sorted([d.start, d.start + d.duration] for d in prof.items)
    loop = ClosedLoop(model, world, mission, cfg.loop, prof, seed=cfg.seed,
                      vision_noise=cfg.vision_noise)
    return loop, meta


def _free_camera_log(cfg: ScenarioConfig):
    fc = cfg.free_camera
    target = np.array([0.0, 0.0, 0.0])
    # camera looking along world +x (optical axis), target offset in the image
    R0 = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    x, y = fc.feature
    p_c = np.array([x * fc.depth, y * fc.depth, fc.depth])
    R = R0 @ _rot_optical(fc.roll)
    p = target - R @ p_c
    ts, E = simulate_free_camera(Pose(R, p), target, cfg.loop.lam, cfg.duration, fc.dt)
    return ts, E


def _rot_optical(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def run(cfg: ScenarioConfig, out_dir=None, progress=None):
    """Execute a scenario; returns (RunSummary, log path)."""
    out_dir = Path(out_dir or cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / f"{cfg.stem}.csv"
    t0 = time.perf_counter()
    meta = {"kind": cfg.kind, "seed": cfg.seed, "duration": cfg.duration,
            "lam": cfg.loop.lam, "success": dataclasses.asdict(cfg.success),
            "source": cfg.source}
    if cfg.kind == "free-camera-ibvs":
        ts, E = _free_camera_log(cfg)
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "e_x", "e_y", "e_phi", "feature_valid"])
            for t, e in zip(ts, E):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in e), 1])
        meta.update(releases=[])
    else:
        model = load_model(cfg.model)
        loop, extra = _loop_for(cfg, model)
        meta.update(extra)
        try:
            loop.run(cfg.duration, stop=lambda l: getattr(l.mission, "phase", None) == "done"
                     and cfg.kind == "sag-static")
        finally:
            _write_rows(log_path, loop.rows)
        meta["events"] = [[t, e] for t, e in loop.events]
    meta["wall_clock"] = time.perf_counter() - t0
    log_path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2))
    summary = summarize(log_path)
    log_path.with_suffix(".summary.json").write_text(
        json.dumps(summary.as_dict(), indent=2, default=_jsonable))
    return summary, log_path


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return str(v)


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------------------
# summary

_NUMERIC = set(LOG_COLUMNS) - {"phase", "event"}


def read_log(path):
    """Columns of a log as a dict of arrays (strings for phase/event)."""
    path = Path(path)
    if not path.exists():
        raise LogParseError(f"{path}: log does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogParseError(f"{path}: empty log (no header)") from None
        cols = {h: [] for h in header}
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise LogParseError(f"{path}: row {row_no}: expected {len(header)} fields, "
                                    f"got {len(row)}")
            for h, v in zip(header, row):
                if h in ("phase", "event"):
                    cols[h].append(v)
                    continue
                try:
                    cols[h].append(float(v))
                except ValueError:
                    raise LogParseError(f"{path}: row {row_no}: column {h!r}: "
                                        f"not a number: {v!r}") from None
    return {h: (np.array(v, dtype=float) if h not in ("phase", "event") else v)
            for h, v in cols.items()}


def settle_time(t, e, start, threshold, end=None):
    """Time after ``start`` from which ``e`` stays below ``threshold``.

    Only samples in [start, end) are considered.  NaN samples (no valid
    measurement) count as unsettled; returns inf if the signal is above the
    threshold at the last considered sample.
    """
    t, e = np.asarray(t), np.asarray(e)
    m = t >= start
    if end is not None:
        m &= t < end
    tt, ee = t[m], e[m]
    if len(tt) == 0:
        return math.inf
    bad = ~(ee < threshold)
    if bad[-1]:
        return math.inf
    idx = np.flatnonzero(bad)
    first_good = 0 if len(idx) == 0 else idx[-1] + 1
    return float(tt[first_good] - start)


def fit_decay_rate(t, e, floor=1e-9):
    """Least-squares slope of -log(e) over the samples above ``floor``."""
    t, e = np.asarray(t, dtype=float), np.asarray(e, dtype=float)
    m = e > floor
    A = np.vstack([t[m], np.ones(m.sum())]).T
    slope, _ = np.linalg.lstsq(A, np.log(e[m]), rcond=None)[0]
    return float(-slope)


def summarize(log_path) -> RunSummary:
    log_path = Path(log_path)
    meta_path = log_path.with_suffix(".meta.json")
    if not meta_path.exists():
        raise LogParseError(f"{meta_path}: sidecar metadata missing")
    meta = json.loads(meta_path.read_text())
    crit = SuccessSpec(**meta.get("success", {}))
    cols = read_log(log_path)
    t = cols.get("t", np.zeros(0))
    if len(t) == 0:
        e = np.zeros(0)
    else:
        e = np.sqrt(cols["e_x"] ** 2 + cols["e_y"] ** 2 + cols["e_phi"] ** 2)
    valid = e[np.isfinite(e)]
    max_e = float(valid.max()) if len(valid) else 0.0
    kind = meta["kind"]
    wall = float(meta.get("wall_clock", 0.0))

    if kind == "free-camera-ibvs":
        rate = fit_decay_rate(t, e) if len(t) > 1 else float("nan")
        ok = abs(rate - meta["lam"]) <= crit.decay_tolerance * meta["lam"]
        return RunSummary(kind, bool(ok), 0.0, max_e, [], 0, wall, decay_rate=rate)

    releases = meta.get("releases", [])
    starts = sorted(p[0] for p in meta.get("pushes", []))
    settles = []
    for r in releases:
        nxt = [s for s in starts if s >= r]
        settles.append(settle_time(t, e, r, crit.settle_threshold, nxt[0] if nxt else None))
    qp_bad = int(np.sum(cols["qp_status"] == 0)) if len(t) else 0
    dist = cols["ee_obj_dist"] if len(t) else np.zeros(0)
    phases = cols.get("phase", [])
    events = cols.get("event", [])
    close_rows = [i for i, ev in enumerate(events) if ev == "gripper-close"]
    closed = bool(close_rows)
    done_rows = [i for i, ph in enumerate(phases) if ph == "done"]
    if done_rows:
        final = float(dist[done_rows[0]])     # fingers closed, object about to be held
    elif closed:
        final = float(dist[close_rows[0]])
    else:
        final = float(dist[-1]) if len(dist) else 0.0
    stop = None
    for i, ph in enumerate(phases):
        if ph.startswith("grasp"):
            stop = float(cols["cam_obj_dist"][i])
            break
    fov = None
    if "flight" in meta and len(t):
        a, b = meta["flight"]
        m = (t >= a) & (t <= b) & (cols["vision_tick"] == 1)
        fov = float(np.mean(cols["detection_valid"][m])) if m.any() else 0.0

    if kind == "disturbance-servo":
        ok = bool(len(t)) and all(s <= crit.settle_window for s in settles)
    elif kind == "sag-static":
        ok = closed and final < crit.close_distance
    else:
        ok = fov is not None and fov >= crit.fov_fraction
        if meta.get("grasp_after_catch"):
            ok = ok and closed and final < crit.close_distance
        ok = bool(ok)
    return RunSummary(kind, bool(ok), max(final, 0.0), max_e, settles, qp_bad, wall,
                      stop_distance=stop, fov_fraction=fov, gripper_closed=closed)


# ---------------------------------------------------------------------------
# command line

def _format(summary: RunSummary):
    d = summary.as_dict()
    lines = [f"{'PASS' if summary.success else 'FAIL'}  {summary.kind}"]
    for k, v in d.items():
        if k in ("kind", "success") or v is None:
            continue
        if isinstance(v, float):
            v = f"{v:.6g}"
        elif isinstance(v, list):
            v = "[" + ", ".join(f"{x:.3f}" for x in v) + "]"
        lines.append(f"  {k:18s} {v}")
    return "\n".join(lines)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="sagquad-run", description=__doc__.splitlines()[0])
    ap.add_argument("scenario", help="scenario YAML file (or a CSV log with --summary-only)")
    ap.add_argument("--out", help="output directory (overrides the scenario's 'output')")
    ap.add_argument("--seed", type=int, help="seed override")
    ap.add_argument("--duration", type=float, help="duration override, s")
    ap.add_argument("--summary-only", action="store_true",
                    help="re-analyse an existing log instead of running")
    args = ap.parse_args(argv)

    try:
        if args.summary_only and args.scenario.endswith(".csv"):
            log = Path(args.scenario)
        else:
            cfg = load_config(args.scenario)
            if args.seed is not None:
                cfg.seed = args.seed
            if args.duration is not None:
                if args.duration <= 0:
                    raise ConfigError("--duration must be positive")
                cfg.duration = args.duration
            log = Path(args.out or cfg.output) / f"{cfg.stem}.csv"
        if args.summary_only:
            summary = summarize(log)
        else:
            summary, log = run(cfg, args.out)
    except (ConfigError, ModelFileError, LogParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(_format(summary))
    print(f"  log                {log}")
    return EXIT_OK if summary.success else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

import numpy as np
import pytest

from sagquad.model import load_model
from sagquad.sag import Perception
from sagquad.spatial import Pose, RobotState, rotz, rpy_to_matrix

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model():
    return load_model()


def random_state(model, rng, base=True):
    s = RobotState.zeros(model)
    s.q = rng.uniform(-np.pi, np.pi, model.n)
    s.qd = rng.normal(size=model.n)
    if base:
        s.base_rotation = rpy_to_matrix(rng.uniform(-np.pi, np.pi, 3))
        s.base_position = rng.normal(size=3)
    return s


def perception(t, visible=True, obj=(2.0, 0.0, 0.4), base=(0.0, 0.0, 0.42), yaw=0.0,
               x_wr=(0.5, 0, 0.13), feature=0.0):
    bp = Pose(rotz(yaw), np.array(base, float))
    cam = bp @ Pose(np.array([[0, 0, 1.0], [-1, 0, 0], [0, -1, 0]]), [0.62, 0, 0.13])
    return Perception(t, visible, np.array(obj, float) if visible else None, bp, yaw, cam,
                      np.array(x_wr, float), np.array(x_wr, float) + [0.12, 0, 0], np.eye(3), feature)

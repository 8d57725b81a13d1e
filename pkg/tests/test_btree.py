import numpy as np
import pytest
from hypothesis import given, strategies as st

from sagquad.btree import (FAILURE, RUNNING, SUCCESS, Action, Blackboard, Condition, Fallback,
                           Sequence, Status, TreeError, active_branch, build_sag_tree, tick)
from sagquad.sag import APPROACH_PHASES, SEARCH_PHASES, SagController
from sagquad.sim import SagMission
from conftest import perception


def leaf(name, status):
    return Action(name, fn=lambda bb: status)


def test_sequence_all_success():
    assert tick(Sequence("s", [leaf("a", SUCCESS), leaf("b", SUCCESS)]), Blackboard()) is SUCCESS


def test_sequence_running_reevaluates_from_first_child():
    bb = Blackboard()
    root = Sequence("s", [leaf("a", SUCCESS), leaf("b", RUNNING)])
    assert tick(root, bb) is RUNNING and bb.visits == ["a", "b"]
    assert tick(root, bb) is RUNNING and bb.visits == ["a", "b"]


def test_fallback_recovery():
    assert tick(Fallback("f", [leaf("a", FAILURE), leaf("b", SUCCESS)]), Blackboard()) is SUCCESS
    assert tick(Fallback("f", [leaf("a", FAILURE)]), Blackboard()) is FAILURE


def test_malformed_trees_fail_at_construction():
    with pytest.raises(TreeError):
        Sequence("empty", [])
    with pytest.raises(TreeError):
        Condition("c", children=[leaf("a", SUCCESS)], fn=lambda bb: True)
    with pytest.raises(TreeError):
        Action("a")
    with pytest.raises(TreeError):
        Fallback("f", ["not a node"])


def test_action_must_return_status():
    with pytest.raises(TreeError):
        tick(Action("a", fn=lambda bb: True), Blackboard())


def test_guarded_action_skipped_when_condition_fails():
    ran = []
    root = Sequence("s", [Condition("c", fn=lambda bb: bb["ok"]),
                          Action("a", fn=lambda bb: ran.append(1) or SUCCESS)])
    assert tick(root, Blackboard(ok=False)) is FAILURE
    assert ran == []


def test_dump_is_indented():
    root = build_sag_tree(lambda bb: True, *(lambda bb: RUNNING,) * 3)
    text = root.dump()
    assert text.splitlines()[0] == "fallback: sag"
    assert "    condition: object-visible?" in text


def _sag_tree():
    log = []
    tree = build_sag_tree(lambda bb: bb["visible"],
                          lambda bb: log.append("approach") or RUNNING,
                          lambda bb: log.append("grasp") or RUNNING,
                          lambda bb: log.append("search") or RUNNING)
    return tree, log


@given(st.lists(st.booleans(), min_size=1, max_size=50))
def test_branch_follows_visibility_on_every_tick(script):
    tree, _ = _sag_tree()
    bb = Blackboard()
    for visible in script:
        bb["visible"] = visible
        assert tick(tree, bb) is RUNNING
        assert active_branch(bb) == ("approach" if visible else "search")


@given(st.booleans())
def test_determinism(visible):
    a, b = _sag_tree()[0], _sag_tree()[0]
    ba, bb_ = Blackboard(visible=visible), Blackboard(visible=visible)
    assert tick(a, ba) == tick(b, bb_) and ba.visits == bb_.visits


def test_no_detection_keeps_searching():
    tree, log = _sag_tree()
    bb = Blackboard(visible=False)
    assert all(tick(tree, bb) is RUNNING for _ in range(100))
    assert set(log) == {"search"}


def visibility_trace(script, dt=0.02):
    """Runs the real mission tree on synthetic perceptions; returns (branch, phase) per tick."""
    mission = SagMission(SagController(dt=dt))
    bb = Blackboard()
    trace = []
    for k, visible in enumerate(script):
        mission.tick(perception(k * dt, visible=visible), bb)
        trace.append((active_branch(bb), mission.phase))
    return trace


def test_scripted_detection_loss_during_approach():
    script = [False] * 10 + [True] * 20 + [False] * 5 + [True] * 10
    trace = visibility_trace(script)
    for k, visible in enumerate(script):
        branch, phase = trace[k]
        assert branch == ("approach" if visible else "search")
        assert phase in (APPROACH_PHASES if visible else SEARCH_PHASES)
    # the loss at tick 30 is acted on in that very tick, and tick 35 resumes
    assert trace[29][0] == "approach" and trace[30][0] == "search"
    assert trace[34][0] == "search" and trace[35][0] == "approach"

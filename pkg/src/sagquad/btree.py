"""Minimal reactive behavior tree.

Composites keep no memory: every tick starts at the root, so a guard that
turns false preempts whatever ran below it on the previous tick.
"""
from __future__ import annotations

from enum import Enum


class Status(Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    RUNNING = "running"


SUCCESS, FAILURE, RUNNING = Status.SUCCESS, Status.FAILURE, Status.RUNNING


class TreeError(ValueError):
    pass


class Blackboard(dict):
    """Keyed store shared by the leaves; ``visits`` records leaf order per tick."""

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.visits = []


class BtNode:
    kind = "node"

    def __init__(self, name, children=(), fn=None):
        self.name = name
        self.children = list(children)
        self.fn = fn
        if self.kind in ("sequence", "fallback"):
            if not self.children:
                raise TreeError(f"{self.kind} {name!r} needs at least one child")
            if fn is not None:
                raise TreeError("composites take no tick function")
            for c in self.children:
                if not isinstance(c, BtNode):
                    raise TreeError(f"child of {name!r} is not a node")
        else:
            if self.children:
                raise TreeError(f"leaf {name!r} cannot have children")
            if not callable(fn):
                raise TreeError(f"leaf {name!r} needs a tick function")

    def tick(self, bb):
        raise NotImplementedError

    def dump(self, indent=0):
        pad = "  " * indent
        lines = [f"{pad}{self.kind}: {self.name}"]
        for c in self.children:
            lines.append(c.dump(indent + 1))
        return "\n".join(lines)


class Sequence(BtNode):
    kind = "sequence"

    def tick(self, bb):
        for c in self.children:
            s = c.tick(bb)
            if s is not SUCCESS:
                return s
        return SUCCESS


class Fallback(BtNode):
    kind = "fallback"

    def tick(self, bb):
        for c in self.children:
            s = c.tick(bb)
            if s is not FAILURE:
                return s
        return FAILURE


class Condition(BtNode):
    kind = "condition"

    def tick(self, bb):
        bb.visits.append(self.name)
        return SUCCESS if self.fn(bb) else FAILURE


class Action(BtNode):
    kind = "action"

    def tick(self, bb):
        bb.visits.append(self.name)
        s = self.fn(bb)
        if not isinstance(s, Status):
            raise TreeError(f"action {self.name!r} returned {s!r}")
        return s


def tick(root: BtNode, bb: Blackboard) -> Status:
    bb.visits = []
    return root.tick(bb)


def build_sag_tree(object_visible, approach, grasp, search) -> BtNode:
    """fallback(sequence(object-visible?, approach-and-grasp), search).

    Each argument is a leaf tick function taking the blackboard.  The
    approach action reports success once the grasp phases are reached, so
    the grasp action only runs behind a finished approach.
    """
    approach_and_grasp = Sequence("approach-and-grasp", [
        Action("approach", fn=approach),
        Action("grasp", fn=grasp),
    ])
    return Fallback("sag", [
        Sequence("pursue-object", [Condition("object-visible?", fn=object_visible),
                                   approach_and_grasp]),
        Action("search", fn=search),
    ])


def active_branch(bb: Blackboard):
    """Name of the top-level branch that ran last: "approach", "grasp" or "search"."""
    for name in reversed(bb.visits):
        if name in ("approach", "grasp", "search"):
            return name
    return None

"""Built-in scenarios: line/triangle/square/five/ten, sparse graph, 3D heading, experiment.

Initial formations are near-straight lines along x with small deterministic
heading perturbations (0.05 rad times the agent id) to break symmetry; these
starts are package defaults, not externally specified values. Iteration caps
for the larger formations keep full descents affordable; they satisfy the
descent safety/monotonicity contract without necessarily reaching grad_tol.
"""

from __future__ import annotations

import numpy as np

from .manifold import GroupMode, Pose, StateTuple, rotation_exp
from .scenario import (
    Edge,
    MeasurementGraph,
    OptimizerParams,
    Scenario,
    TagLayout,
    fully_connected_graph,
)

DEFAULT_SIGMA = 0.1
DEFAULT_TAG_OFFSETS_2D = ((0.2, 0.2), (0.2, -0.2))
EXPERIMENT_TAG_OFFSETS = ((0.0, 0.085), (0.0, -0.085))


def _tags(num_agents: int, offsets) -> tuple:
    out = []
    for agent in range(1, num_agents + 1):
        for k, offset in enumerate(offsets):
            out.append(TagLayout(2 * (agent - 1) + k + 1, agent, np.array(offset, dtype=float)))
    return tuple(out)


def _near_line_state(mode: GroupMode, num_agents: int, spacing: float = 1.5, z_step: float = 0.0) -> StateTuple:
    poses = []
    for agent in range(2, num_agents + 1):
        heading = 0.05 * agent
        if mode is GroupMode.SE3:
            rot = rotation_exp(np.array([0.0, 0.0, heading]), mode)
        else:
            rot = rotation_exp(np.array([heading]), mode)
        if mode is GroupMode.SE2:
            trans = np.array([spacing * (agent - 1), 0.0])
        else:
            trans = np.array([spacing * (agent - 1), 0.0, z_step * (agent - 1)])
        poses.append(Pose(rot, trans))
    return StateTuple(tuple(poses), mode)


def _planar_preset(num_agents: int, max_iters: int, seed: int, spacing: float = 1.5) -> Scenario:
    tags = _tags(num_agents, DEFAULT_TAG_OFFSETS_2D)
    return Scenario(
        mode=GroupMode.SE2,
        tags=tags,
        graph=fully_connected_graph(tags, DEFAULT_SIGMA),
        optimizer=OptimizerParams(max_iters=max_iters),
        initial_state=_near_line_state(GroupMode.SE2, num_agents, spacing),
        rng_seed=seed,
    )


def line3() -> Scenario:
    """Three agents in a near-straight line; start of the validation trajectory."""
    return _planar_preset(3, max_iters=5000, seed=421)


def triangle3() -> Scenario:
    """Three agents, full graph; descends to an equilateral triangle."""
    return _planar_preset(3, max_iters=5000, seed=422)


def square4() -> Scenario:
    """Four agents, full graph; descends to a square."""
    return _planar_preset(4, max_iters=5000, seed=423)


def five() -> Scenario:
    return _planar_preset(5, max_iters=1500, seed=424)


def ten() -> Scenario:
    return _planar_preset(10, max_iters=300, seed=425, spacing=1.6)


def sparse() -> Scenario:
    """Four agents on a ring graph: only adjacent agent pairs exchange ranges."""
    num_agents = 4
    tags = _tags(num_agents, DEFAULT_TAG_OFFSETS_2D)
    ring = [(1, 2), (2, 3), (3, 4), (1, 4)]
    edges = []
    by_agent = {a: [t for t in tags if t.agent_id == a] for a in range(1, num_agents + 1)}
    for a, b in ring:
        for ta in by_agent[a]:
            for tb in by_agent[b]:
                edges.append(Edge(ta.tag_id, tb.tag_id, DEFAULT_SIGMA))
    return Scenario(
        mode=GroupMode.SE2,
        tags=tags,
        graph=MeasurementGraph(tuple(edges)),
        optimizer=OptimizerParams(max_iters=5000),
        initial_state=_near_line_state(GroupMode.SE2, num_agents),
        rng_seed=426,
    )


def heading3d() -> Scenario:
    """Three agents in 3D with yaw plus translation as the free coordinates.

    The initial line is given distinct z offsets: with two tags per agent at
    equal height, an equal-z formation has no vertical range sensitivity and
    the information matrix drops rank, so the start must already break that tie.
    """
    num_agents = 3
    offsets = ((0.2, 0.2, 0.0), (0.2, -0.2, 0.0))
    tags = _tags(num_agents, offsets)
    return Scenario(
        mode=GroupMode.SE3_HEADING,
        tags=tags,
        graph=fully_connected_graph(tags, DEFAULT_SIGMA),
        optimizer=OptimizerParams(max_iters=3000),
        initial_state=_near_line_state(GroupMode.SE3_HEADING, num_agents, z_step=0.4),
        rng_seed=427,
    )


def experiment() -> Scenario:
    """Desk-scale stand-in for the flight test: 17 cm tag separation, sigma 0.10 m."""
    num_agents = 3
    tags = _tags(num_agents, EXPERIMENT_TAG_OFFSETS)
    return Scenario(
        mode=GroupMode.SE2,
        tags=tags,
        graph=fully_connected_graph(tags, 0.10),
        optimizer=OptimizerParams(max_iters=5000),
        initial_state=_near_line_state(GroupMode.SE2, num_agents),
        rng_seed=428,
    )


PRESETS = {
    "line3": line3,
    "triangle3": triangle3,
    "square4": square4,
    "five": five,
    "ten": ten,
    "sparse": sparse,
    "heading3d": heading3d,
    "experiment": experiment,
}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None

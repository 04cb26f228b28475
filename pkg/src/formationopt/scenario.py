"""Scenario data model and JSON file ingestion.

A scenario bundles everything one run needs: the group mode, agents with their
body-frame tag positions, the inter-tag measurement graph with per-edge noise,
optimizer settings, an initial state, and an RNG seed. Scenarios are immutable
after construction and safe to share across workers.

File schema (JSON, lengths in meters, angles in radians)::

    {
      "mode": "SE2" | "SE3" | "SE3-heading",
      "agents": [{"id": 1, "tags": [{"id": 1, "body_position": [0.2, 0.2]}, ...]}, ...],
      "graph": {"type": "full", "sigma": 0.1}
               | {"type": "explicit", "edges": [[tag_i, tag_j, sigma], ...]},
      "optimizer": {"gamma": 0.1, "activation_radius": 2.0, "safety_radius": 1.0,
                    "max_iters": 5000, "grad_tol": 1e-4, "fd_step": 1e-5},
      "initial_state": [{"agent": 2, "rotation": <heading angle or row-major matrix>,
                         "translation": [x, y]}, ...],
      "seed": 1234
    }
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScenarioError
from .manifold import GroupMode, Pose, StateTuple


@dataclass(frozen=True, eq=False)
class TagLayout:
    """One ranging tag: its id, owning agent, and body-frame position."""

    tag_id: int
    agent_id: int
    body_position: np.ndarray

    def __post_init__(self):
        pos = np.array(self.body_position, dtype=float)
        pos.setflags(write=False)
        object.__setattr__(self, "body_position", pos)


@dataclass(frozen=True, eq=False)
class Edge:
    """Unordered tag pair carrying a range measurement with noise sigma (m)."""

    tag_i: int
    tag_j: int
    sigma: float

    def __post_init__(self):
        i, j = self.tag_i, self.tag_j
        if i == j:
            raise ScenarioError(f"graph.edges: self edge on tag {i}")
        if i > j:
            object.__setattr__(self, "tag_i", j)
            object.__setattr__(self, "tag_j", i)
        if not self.sigma > 0.0:
            raise ScenarioError(
                f"graph.edges: edge ({self.tag_i}, {self.tag_j}) has sigma {self.sigma}; must be > 0"
            )


@dataclass(frozen=True, eq=False)
class MeasurementGraph:
    """Canonicalized edge list: each edge stored with tag_i < tag_j, sorted."""

    edges: tuple

    def __post_init__(self):
        edges = tuple(sorted(self.edges, key=lambda e: (e.tag_i, e.tag_j)))
        seen = set()
        for e in edges:
            key = (e.tag_i, e.tag_j)
            if key in seen:
                raise ScenarioError(f"graph.edges: duplicate edge {key}")
            seen.add(key)
        object.__setattr__(self, "edges", edges)

    @property
    def node_ids(self) -> frozenset:
        return frozenset(t for e in self.edges for t in (e.tag_i, e.tag_j))

    def __len__(self) -> int:
        return len(self.edges)


@dataclass(frozen=True, eq=False)
class OptimizerParams:
    gamma: float = 0.1
    activation_radius: float = 2.0
    safety_radius: float = 1.0
    max_iters: int = 5000
    grad_tol: float = 1e-4
    fd_step: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.safety_radius < self.activation_radius:
            raise ScenarioError(
                f"optimizer: need 0 < safety_radius < activation_radius, got "
                f"safety_radius={self.safety_radius}, activation_radius={self.activation_radius}"
            )
        for name in ("gamma", "grad_tol", "fd_step"):
            if not getattr(self, name) > 0.0:
                raise ScenarioError(f"optimizer.{name} must be > 0")
        if self.max_iters < 0:
            raise ScenarioError("optimizer.max_iters must be >= 0")


@dataclass(frozen=True, eq=False)
class Scenario:
    mode: GroupMode
    tags: tuple
    graph: MeasurementGraph
    optimizer: OptimizerParams
    initial_state: StateTuple
    rng_seed: int = 0

    def __post_init__(self):
        tags = tuple(self.tags)
        object.__setattr__(self, "tags", tags)
        by_id = {}
        for tag in tags:
            if tag.tag_id in by_id:
                raise ScenarioError(f"agents.tags: duplicate tag id {tag.tag_id}")
            if tag.body_position.shape != (self.mode.ambient_dim,):
                raise ScenarioError(
                    f"agents.tags: tag {tag.tag_id} body_position has length "
                    f"{tag.body_position.shape[0]}, mode {self.mode.value} needs {self.mode.ambient_dim}"
                )
            by_id[tag.tag_id] = tag
        object.__setattr__(self, "_tags_by_id", by_id)

        agent_ids = sorted({tag.agent_id for tag in tags})
        n = len(agent_ids)
        if agent_ids != list(range(1, n + 1)):
            raise ScenarioError(
                f"agents: agent ids must be contiguous 1..N with at least one tag each, got {agent_ids}"
            )
        if n < 2:
            raise ScenarioError("agents: need at least 2 agents")
        object.__setattr__(self, "_num_agents", n)

        for e in self.graph.edges:
            for t in (e.tag_i, e.tag_j):
                if t not in by_id:
                    raise ScenarioError(f"graph.edges: unknown tag id {t}")
            if by_id[e.tag_i].agent_id == by_id[e.tag_j].agent_id:
                raise ScenarioError(
                    f"graph.edges: edge ({e.tag_i}, {e.tag_j}) joins two tags on agent "
                    f"{by_id[e.tag_i].agent_id}; intra-agent ranges carry no relative information"
                )

        if self.initial_state.mode is not self.mode:
            raise ScenarioError(
                f"initial_state: mode {self.initial_state.mode.value} does not match scenario "
                f"mode {self.mode.value}"
            )
        if len(self.initial_state.poses) != n - 1:
            raise ScenarioError(
                f"initial_state: expected {n - 1} poses for {n} agents, got "
                f"{len(self.initial_state.poses)}"
            )

    @property
    def num_agents(self) -> int:
        return self._num_agents

    def lookup(self, tag_id: int) -> int:
        """Owning agent of a tag id; raises KeyError for unknown tags."""
        try:
            return self._tags_by_id[tag_id].agent_id
        except KeyError:
            raise KeyError(f"tag {tag_id} not found in scenario") from None

    def tag(self, tag_id: int) -> TagLayout:
        try:
            return self._tags_by_id[tag_id]
        except KeyError:
            raise KeyError(f"tag {tag_id} not found in scenario") from None

    def agent_tags(self, agent_id: int) -> list:
        return [t for t in self.tags if t.agent_id == agent_id]

    def with_graph(self, graph: MeasurementGraph) -> "Scenario":
        return Scenario(self.mode, self.tags, graph, self.optimizer, self.initial_state, self.rng_seed)

    def with_initial_state(self, state: StateTuple) -> "Scenario":
        return Scenario(self.mode, self.tags, self.graph, self.optimizer, state, self.rng_seed)


def fully_connected_graph(tags, sigma: float) -> MeasurementGraph:
    """All inter-agent tag pairs exactly once with uniform sigma.

    Pairs of tags on the same agent are excluded; they carry no relative-pose
    information.
    """
    tags = list(tags)
    if len({t.agent_id for t in tags}) < 2:
        raise ValueError("fully connected graph needs tags on at least 2 agents")
    edges = [
        Edge(a.tag_id, b.tag_id, sigma)
        for a, b in itertools.combinations(tags, 2)
        if a.agent_id != b.agent_id
    ]
    return MeasurementGraph(tuple(edges))


def _require(mapping, key, context):
    if key not in mapping:
        raise ScenarioError(f"{context}: missing required key {key!r}")
    return mapping[key]


def _check_keys(mapping, allowed, context):
    extra = set(mapping) - set(allowed)
    if extra:
        raise ScenarioError(f"{context}: unknown keys {sorted(extra)}")


def _parse_rotation(value, mode: GroupMode, context: str) -> np.ndarray:
    n = mode.ambient_dim
    if isinstance(value, (int, float)):
        if mode is GroupMode.SE3:
            raise ScenarioError(f"{context}: scalar heading not allowed in SE3 mode; give a 3x3 matrix")
        from .manifold import rotation_exp

        return rotation_exp(np.array([float(value)]), mode)
    rows = np.array(value, dtype=float)
    if rows.shape != (n, n):
        raise ScenarioError(f"{context}: rotation must be a scalar heading or {n}x{n} row-major matrix")
    return rows


def state_from_records(records, mode: GroupMode, num_agents: int, context: str = "initial_state") -> StateTuple:
    """Build a StateTuple from the document form [{agent, rotation, translation}, ...]."""
    by_agent = {}
    for rec in records:
        _check_keys(rec, ("agent", "rotation", "translation"), context)
        agent = _require(rec, "agent", context)
        if agent in by_agent:
            raise ScenarioError(f"{context}: duplicate entry for agent {agent}")
        rot = _parse_rotation(_require(rec, "rotation", context), mode, f"{context}.agent {agent}")
        trans = np.array(_require(rec, "translation", context), dtype=float)
        if trans.shape != (mode.ambient_dim,):
            raise ScenarioError(
                f"{context}.agent {agent}: translation needs length {mode.ambient_dim}"
            )
        try:
            by_agent[agent] = Pose(rot, trans)
        except ValueError as exc:
            raise ScenarioError(f"{context}.agent {agent}: {exc}") from exc
    expected = list(range(2, num_agents + 1))
    if sorted(by_agent) != expected:
        raise ScenarioError(f"{context}: need exactly agents {expected}, got {sorted(by_agent)}")
    return StateTuple(tuple(by_agent[a] for a in expected), mode)


def state_to_records(state: StateTuple) -> list:
    return [
        {
            "agent": k + 2,
            "rotation": [[float(v) for v in row] for row in pose.rotation],
            "translation": [float(v) for v in pose.translation],
        }
        for k, pose in enumerate(state.poses)
    ]


def loads_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    _check_keys(doc, ("mode", "agents", "graph", "optimizer", "initial_state", "seed"), "scenario")

    try:
        mode = GroupMode.from_string(_require(doc, "mode", "scenario"))
    except ValueError as exc:
        raise ScenarioError(f"mode: {exc}") from exc

    tags = []
    agents = _require(doc, "agents", "scenario")
    for entry in agents:
        _check_keys(entry, ("id", "tags"), "agents")
        agent_id = _require(entry, "id", "agents")
        for tag in _require(entry, "tags", f"agents.{agent_id}"):
            _check_keys(tag, ("id", "body_position"), f"agents.{agent_id}.tags")
            tags.append(
                TagLayout(
                    _require(tag, "id", "agents.tags"),
                    agent_id,
                    np.array(_require(tag, "body_position", "agents.tags"), dtype=float),
                )
            )

    graph_doc = _require(doc, "graph", "scenario")
    graph_type = _require(graph_doc, "type", "graph")
    if graph_type == "full":
        _check_keys(graph_doc, ("type", "sigma"), "graph")
        sigma = float(_require(graph_doc, "sigma", "graph"))
        if not sigma > 0.0:
            raise ScenarioError(f"graph.sigma must be > 0, got {sigma}")
        try:
            graph = fully_connected_graph(tags, sigma)
        except ValueError as exc:
            raise ScenarioError(f"graph: {exc}") from exc
    elif graph_type == "explicit":
        _check_keys(graph_doc, ("type", "edges"), "graph")
        edges = []
        for raw in _require(graph_doc, "edges", "graph"):
            if len(raw) != 3:
                raise ScenarioError(f"graph.edges: expected [tag_i, tag_j, sigma], got {raw}")
            edges.append(Edge(int(raw[0]), int(raw[1]), float(raw[2])))
        graph = MeasurementGraph(tuple(edges))
    else:
        raise ScenarioError(f"graph.type must be 'full' or 'explicit', got {graph_type!r}")

    opt_doc = dict(doc.get("optimizer", {}))
    _check_keys(
        opt_doc,
        ("gamma", "activation_radius", "safety_radius", "max_iters", "grad_tol", "fd_step"),
        "optimizer",
    )
    optimizer = OptimizerParams(**opt_doc)

    num_agents = len({t.agent_id for t in tags})
    initial = state_from_records(_require(doc, "initial_state", "scenario"), mode, num_agents)
    seed = int(doc.get("seed", 0))
    return Scenario(mode, tuple(tags), graph, optimizer, initial, seed)


def load_scenario(path) -> Scenario:
    """Load and fully validate a scenario file; all invariants checked here."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    return loads_scenario(path.read_text(encoding="utf-8"))


def scenario_to_dict(scenario: Scenario) -> dict:
    agents = []
    for agent_id in range(1, scenario.num_agents + 1):
        agents.append(
            {
                "id": agent_id,
                "tags": [
                    {"id": t.tag_id, "body_position": [float(v) for v in t.body_position]}
                    for t in scenario.agent_tags(agent_id)
                ],
            }
        )
    opt = scenario.optimizer
    return {
        "mode": scenario.mode.value,
        "agents": agents,
        "graph": {
            "type": "explicit",
            "edges": [[e.tag_i, e.tag_j, float(e.sigma)] for e in scenario.graph.edges],
        },
        "optimizer": {
            "gamma": opt.gamma,
            "activation_radius": opt.activation_radius,
            "safety_radius": opt.safety_radius,
            "max_iters": opt.max_iters,
            "grad_tol": opt.grad_tol,
            "fd_step": opt.fd_step,
        },
        "initial_state": state_to_records(scenario.initial_state),
        "seed": scenario.rng_seed,
    }


def write_scenario(scenario: Scenario, path) -> None:
    """Write a scenario as JSON; load_scenario(write_scenario(s)) is bit-identical."""
    Path(path).write_text(
        json.dumps(scenario_to_dict(scenario), indent=2) + "\n", encoding="utf-8"
    )


def load_state_document(path, mode: GroupMode, num_agents: int) -> StateTuple:
    """Read a state document ({"mode": ..., "state": [...]}) written by this package."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    _check_keys(doc, ("mode", "state"), "state document")
    file_mode = GroupMode.from_string(_require(doc, "mode", "state document"))
    if file_mode is not mode:
        raise ScenarioError(
            f"state document mode {file_mode.value} does not match scenario mode {mode.value}"
        )
    return state_from_records(_require(doc, "state", "state document"), mode, num_agents, "state")


def write_state_document(state: StateTuple, path) -> None:
    Path(path).write_text(
        json.dumps({"mode": state.mode.value, "state": state_to_records(state)}, indent=2) + "\n",
        encoding="utf-8",
    )

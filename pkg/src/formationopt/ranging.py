"""Range measurement model, synthesis, and analytic measurement Jacobians.

A range between tags i (on agent a) and j (on agent b) is the Euclidean norm
of the world-frame (agent-1-frame) tag displacement. Its derivative with
respect to the right perturbation of agent a's pose has the closed form

    d y / d xi_a = rho @ [C_a @ A_i | C_a]

where rho is the unit direction row vector from tag j to tag i resolved in
agent 1's frame, C_a the agent's rotation, and A_i the rotation-column block
of the tag's homogeneous-point rearrangement (see :func:`manifold.odot`). The
block for agent b is the same expression negated. Edges touching agent 1
contribute a single nonzero block to the stacked Jacobian because the
reference agent carries no state.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import manifold
from .errors import SingularGeometryError
from .manifold import GroupMode, StateTuple
from .scenario import Scenario

ZERO_RANGE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MeasurementVector:
    """Ranges in canonical edge order plus their per-edge noise sigmas."""

    values: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        sigmas = np.array(self.sigmas, dtype=float)
        if values.shape != sigmas.shape or values.ndim != 1:
            raise ValueError("values and sigmas must be 1-D arrays of equal length")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ValueError("ranges must be finite and non-negative")
        if np.any(sigmas <= 0.0):
            raise ValueError("sigmas must be positive")
        values.setflags(write=False)
        sigmas.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.sigmas**2)

    def __len__(self) -> int:
        return len(self.values)


def homogeneous_point(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.concatenate([p, [1.0]])


def _rotation_columns(eps: np.ndarray, mode: GroupMode) -> np.ndarray:
    """Rotation-column block of odot for a body point, shape (n, rot_dof)."""
    if mode is GroupMode.SE2:
        return np.array([[-eps[1]], [eps[0]]])
    if mode is GroupMode.SE3_HEADING:
        return np.array([[-eps[1]], [eps[0]], [0.0]])
    return -manifold._skew3(eps)


@dataclass(frozen=True, eq=False)
class _EdgeTables:
    """Per-edge index and geometry arrays precomputed once per scenario."""

    agent_i: np.ndarray  # (E,) 0-based agent index of tag i
    agent_j: np.ndarray
    eps_i: np.ndarray  # (E, n) body positions
    eps_j: np.ndarray
    acol_i: np.ndarray  # (E, n, rot_dof) rotation-column blocks
    acol_j: np.ndarray
    sigmas: np.ndarray  # (E,)
    cols_i: np.ndarray  # (E, m) stacked-Jacobian column indices, -1 rows masked
    cols_j: np.ndarray
    has_state_i: np.ndarray  # (E,) bool, False when the tag sits on agent 1
    has_state_j: np.ndarray


@functools.lru_cache(maxsize=64)
def _edge_tables(scenario: Scenario) -> _EdgeTables:
    mode = scenario.mode
    m = mode.dof
    edges = scenario.graph.edges
    count = len(edges)
    n = mode.ambient_dim
    agent_i = np.empty(count, dtype=int)
    agent_j = np.empty(count, dtype=int)
    eps_i = np.empty((count, n))
    eps_j = np.empty((count, n))
    acol_i = np.empty((count, n, mode.rot_dof))
    acol_j = np.empty((count, n, mode.rot_dof))
    sigmas = np.empty(count)
    cols_i = np.zeros((count, m), dtype=int)
    cols_j = np.zeros((count, m), dtype=int)
    for e, edge in enumerate(edges):
        ta, tb = scenario.tag(edge.tag_i), scenario.tag(edge.tag_j)
        agent_i[e] = ta.agent_id - 1
        agent_j[e] = tb.agent_id - 1
        eps_i[e] = ta.body_position
        eps_j[e] = tb.body_position
        acol_i[e] = _rotation_columns(ta.body_position, mode)
        acol_j[e] = _rotation_columns(tb.body_position, mode)
        sigmas[e] = edge.sigma
        cols_i[e] = np.arange((ta.agent_id - 2) * m, (ta.agent_id - 1) * m)
        cols_j[e] = np.arange((tb.agent_id - 2) * m, (tb.agent_id - 1) * m)
    return _EdgeTables(
        agent_i=agent_i,
        agent_j=agent_j,
        eps_i=eps_i,
        eps_j=eps_j,
        acol_i=acol_i,
        acol_j=acol_j,
        sigmas=sigmas,
        cols_i=cols_i,
        cols_j=cols_j,
        has_state_i=agent_i > 0,
        has_state_j=agent_j > 0,
    )


def edge_sigmas(scenario: Scenario) -> np.ndarray:
    return _edge_tables(scenario).sigmas.copy()


def _edge_geometry(x: StateTuple, scenario: Scenario):
    """World tag positions per edge side and the separation norms."""
    t = _edge_tables(scenario)
    rot = x.rotation_stack()
    trans = x.translation_stack()
    r_i = rot[t.agent_i]
    r_j = rot[t.agent_j]
    w_i = np.einsum("eij,ej->ei", r_i, t.eps_i) + trans[t.agent_i]
    w_j = np.einsum("eij,ej->ei", r_j, t.eps_j) + trans[t.agent_j]
    delta = w_i - w_j
    norms = np.linalg.norm(delta, axis=1)
    return t, r_i, r_j, delta, norms


def measurement_function(x: StateTuple, scenario: Scenario) -> np.ndarray:
    """Noise-free ranges g(x) in canonical edge order."""
    _, _, _, _, norms = _edge_geometry(x, scenario)
    return norms


def _edge_pair(scenario: Scenario, edge):
    if hasattr(edge, "tag_i"):
        return edge.tag_i, edge.tag_j
    return int(edge[0]), int(edge[1])


def range_measurement(x: StateTuple, scenario: Scenario, edge) -> float:
    """Noise-free range for one edge; symmetric in the edge's orientation."""
    tag_i, tag_j = _edge_pair(scenario, edge)
    ta, tb = scenario.tag(tag_i), scenario.tag(tag_j)
    w_i = x.pose_of(ta.agent_id).apply(ta.body_position)
    w_j = x.pose_of(tb.agent_id).apply(tb.body_position)
    return float(np.linalg.norm(w_i - w_j))


def jacobian_blocks(x: StateTuple, scenario: Scenario, edge):
    """Rows (d y / d xi_a, d y / d xi_b) for one edge, each of length m.

    The blocks are returned for both agents even when one of them is the
    reference agent; :func:`stack_jacobian` is where reference blocks are
    dropped. Raises :class:`SingularGeometryError` when the tags coincide.
    """
    mode = scenario.mode
    tag_i, tag_j = _edge_pair(scenario, edge)
    ta, tb = scenario.tag(tag_i), scenario.tag(tag_j)
    pose_a = x.pose_of(ta.agent_id)
    pose_b = x.pose_of(tb.agent_id)
    w_i = pose_a.apply(ta.body_position)
    w_j = pose_b.apply(tb.body_position)
    delta = w_i - w_j
    dist = np.linalg.norm(delta)
    if dist <= ZERO_RANGE_TOL:
        raise SingularGeometryError(
            f"tags {tag_i} and {tag_j} coincide (range {dist:.3e} m); direction undefined",
            edge=(tag_i, tag_j),
        )
    rho = delta / dist
    h_a = np.empty(mode.dof)
    h_b = np.empty(mode.dof)
    rd = mode.rot_dof
    h_a[:rd] = rho @ (pose_a.rotation @ _rotation_columns(ta.body_position, mode))
    h_a[rd:] = rho @ pose_a.rotation
    h_b[:rd] = -(rho @ (pose_b.rotation @ _rotation_columns(tb.body_position, mode)))
    h_b[rd:] = -(rho @ pose_b.rotation)
    return h_a, h_b


def ranges_and_jacobian(x: StateTuple, scenario: Scenario):
    """Vectorized (ranges, stacked Jacobian) for every edge at once."""
    t, r_i, r_j, delta, norms = _edge_geometry(x, scenario)
    bad = np.flatnonzero(norms <= ZERO_RANGE_TOL)
    if bad.size:
        edge = scenario.graph.edges[bad[0]]
        raise SingularGeometryError(
            f"tags {edge.tag_i} and {edge.tag_j} coincide (range {norms[bad[0]]:.3e} m); "
            "direction undefined",
            edge=(edge.tag_i, edge.tag_j),
        )
    rho = delta / norms[:, None]
    mode = scenario.mode
    m = mode.dof
    rd = mode.rot_dof
    count = len(norms)
    dim = m * (x.num_agents - 1)
    h = np.zeros((count, dim))
    rows = np.arange(count)

    block_i = np.empty((count, m))
    block_i[:, :rd] = np.einsum("ei,eij,ejk->ek", rho, r_i, t.acol_i)
    block_i[:, rd:] = np.einsum("ei,eij->ej", rho, r_i)
    block_j = np.empty((count, m))
    block_j[:, :rd] = -np.einsum("ei,eij,ejk->ek", rho, r_j, t.acol_j)
    block_j[:, rd:] = -np.einsum("ei,eij->ej", rho, r_j)

    sel = t.has_state_i
    h[rows[sel][:, None], t.cols_i[sel]] = block_i[sel]
    sel = t.has_state_j
    h[rows[sel][:, None], t.cols_j[sel]] = block_j[sel]
    return norms, h


def stack_jacobian(x: StateTuple, scenario: Scenario) -> np.ndarray:
    """|E| x m(N-1) measurement Jacobian; reference-agent blocks dropped."""
    _, h = ranges_and_jacobian(x, scenario)
    return h


def finite_difference_jacobian(x: StateTuple, scenario: Scenario, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the stacked ranges over tangent coordinates.

    This is the independent check for the analytic Jacobian: it only evaluates
    the measurement function through the retraction.
    """
    dim = scenario.mode.dof * (x.num_agents - 1)
    out = np.empty((len(scenario.graph.edges), dim))
    basis = np.zeros(dim)
    for k in range(dim):
        basis[k] = step
        plus = measurement_function(manifold.oplus(x, basis), scenario)
        basis[k] = -step
        minus = measurement_function(manifold.oplus(x, basis), scenario)
        basis[k] = 0.0
        out[:, k] = (plus - minus) / (2.0 * step)
    return out


def synthesize(x: StateTuple, scenario: Scenario, rng: np.random.Generator) -> MeasurementVector:
    """Noise-free ranges plus independent zero-mean Gaussian noise per edge."""
    t = _edge_tables(scenario)
    values = measurement_function(x, scenario) + t.sigmas * rng.standard_normal(len(t.sigmas))
    # A large negative draw can push a short range below zero; ranges are
    # magnitudes, so clip at zero.
    return MeasurementVector(np.maximum(values, 0.0), t.sigmas)

"""Collision barrier, total cost, tangent-space gradient, and on-manifold descent.

The total cost is the estimation cost (negative log-determinant of the Fisher
information) plus a pairwise collision barrier summed over ordered agent
pairs, so each unordered pair is counted twice. The descent iterates

    x <- x (+) (-gamma_eff * gradient)

with the gradient taken by central finite differences over the tangent basis
and gamma_eff backtracked (halved) until the candidate's cost is finite and
does not increase; the nominal step is the configured gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fisher, serialize
from .errors import (
    BarrierPoleError,
    DescentStallError,
    GradientError,
    InfeasibleStateError,
)
from .manifold import StateTuple, oplus
from .scenario import Scenario

POLE_TOL = 1e-9
ACCEPT_SLACK = 1e-12
MAX_HALVINGS = 30


@dataclass(frozen=True)
class BarrierParams:
    """Activation (outer onset) and safety (inner pole) radii of the barrier, meters."""

    activation_radius: float
    safety_radius: float

    def __post_init__(self):
        if not 0.0 < self.safety_radius < self.activation_radius:
            raise ValueError("need 0 < safety_radius < activation_radius")


def _barrier_value(dist: float, barrier: BarrierParams) -> float:
    d2 = dist * dist
    num = d2 - barrier.activation_radius**2
    den = d2 - barrier.safety_radius**2
    if abs(dist - barrier.safety_radius) < POLE_TOL:
        raise BarrierPoleError(
            f"inter-agent distance {dist:.12g} m sits on the barrier pole at "
            f"{barrier.safety_radius} m"
        )
    if dist < barrier.safety_radius:
        raise InfeasibleStateError(
            f"inter-agent distance {dist:.6f} m is below the safety radius "
            f"{barrier.safety_radius} m"
        )
    ratio = num / den
    if ratio >= 0.0:
        return 0.0
    return ratio * ratio


def _agent_positions(x: StateTuple) -> np.ndarray:
    return x.translation_stack()


def collision_cost_pair(x: StateTuple, scenario: Scenario, alpha: int, beta: int) -> float:
    """Barrier value for one agent pair, from reference-point positions."""
    if alpha == beta:
        raise ValueError("collision cost needs two distinct agents")
    barrier = BarrierParams(scenario.optimizer.activation_radius, scenario.optimizer.safety_radius)
    dist = float(np.linalg.norm(x.pose_of(alpha).translation - x.pose_of(beta).translation))
    return _barrier_value(dist, barrier)


def collision_cost(x: StateTuple, scenario: Scenario) -> float:
    """Sum of the pair barrier over ordered pairs (each unordered pair twice)."""
    barrier = BarrierParams(scenario.optimizer.activation_radius, scenario.optimizer.safety_radius)
    positions = _agent_positions(x)
    total = 0.0
    count = positions.shape[0]
    for a in range(count):
        for b in range(count):
            if a == b:
                continue
            total += _barrier_value(float(np.linalg.norm(positions[a] - positions[b])), barrier)
    return total


def cost_terms(x: StateTuple, scenario: Scenario):
    """(estimation cost, collision cost, total); total is +inf when unobservable."""
    est = fisher.estimation_cost(x, scenario)
    col = collision_cost(x, scenario)
    return est, col, est + col


def total_cost(x: StateTuple, scenario: Scenario) -> float:
    return cost_terms(x, scenario)[2]


def _probe(x: StateTuple, scenario: Scenario) -> float:
    """Total cost treating barrier pole/infeasible probes as +inf."""
    try:
        return total_cost(x, scenario)
    except (BarrierPoleError, InfeasibleStateError):
        return math.inf


def _coordinate_slope(plus: float, minus: float, center, step: float) -> float:
    """Central difference, degrading to one-sided when one probe is infinite."""
    if math.isinf(plus) and math.isinf(minus):
        raise GradientError("both finite-difference probes are infinite")
    if math.isinf(plus):
        return (center() - minus) / step
    if math.isinf(minus):
        return (plus - center()) / step
    return (plus - minus) / (2.0 * step)


def descent_gradient(x: StateTuple, scenario: Scenario) -> np.ndarray:
    """Finite-difference gradient of the total cost over the stacked tangent basis."""
    dim = scenario.mode.dof * (x.num_agents - 1)
    step = scenario.optimizer.fd_step
    grad = np.empty(dim)
    basis = np.zeros(dim)
    center_cache = []

    def center():
        if not center_cache:
            center_cache.append(_probe(x, scenario))
        return center_cache[0]

    for k in range(dim):
        basis[k] = step
        plus = _probe(oplus(x, basis), scenario)
        basis[k] = -step
        minus = _probe(oplus(x, basis), scenario)
        basis[k] = 0.0
        try:
            grad[k] = _coordinate_slope(plus, minus, center, step)
        except GradientError:
            raise GradientError(
                f"both probes infinite on tangent coordinate {k}; state is pinned "
                "against an unobservable or infeasible boundary"
            ) from None
    return grad


@dataclass(frozen=True, eq=False)
class TraceRecord:
    iteration: int
    cost_est: float
    cost_col: float
    cost_total: float
    grad_norm: float
    step_scale: float
    state: StateTuple


@dataclass(frozen=True, eq=False)
class DescentTrace:
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def checkpoint_indices(self, count: int = 10) -> list:
        """Indices of ``count`` evenly spaced records, always including first and last."""
        total = len(self.records)
        if count >= total:
            return list(range(total))
        return sorted({round(k * (total - 1) / (count - 1)) for k in range(count)})

    def checkpoints(self, count: int = 10) -> list:
        return [self.records[i] for i in self.checkpoint_indices(count)]


def write_trace_csv(trace: DescentTrace, path) -> None:
    serialize.write_csv(
        path,
        ["iter", "J_est", "J_col", "J_total", "grad_norm", "step_scale"],
        [
            [r.iteration, r.cost_est, r.cost_col, r.cost_total, r.grad_norm, r.step_scale]
            for r in trace
        ],
    )


def _min_pair_distance(x: StateTuple) -> float:
    positions = _agent_positions(x)
    best = math.inf
    for a in range(positions.shape[0]):
        for b in range(a + 1, positions.shape[0]):
            best = min(best, float(np.linalg.norm(positions[a] - positions[b])))
    return best


def descend(scenario: Scenario):
    """Gradient descent with backtracking; returns (final state, trace).

    Every accepted iterate has finite total cost and keeps all pairwise agent
    distances above the safety radius; candidates within POLE_TOL of the
    barrier pole are rejected inside the line search without being evaluated.
    Terminates when the gradient norm drops below grad_tol or after max_iters
    steps. Exhausting the 30 halvings raises DescentStallError with the trace
    attached. The run is fully deterministic.
    """
    params = scenario.optimizer
    x = scenario.initial_state
    est, col, current = cost_terms(x, scenario)
    if not math.isfinite(current):
        raise InfeasibleStateError(
            f"initial state has non-finite total cost {current}; "
            "descent needs a feasible, observable start"
        )
    records = []
    iteration = 0
    step_scale = 1.0
    while True:
        grad = descent_gradient(x, scenario)
        grad_norm = float(np.linalg.norm(grad))
        records.append(TraceRecord(iteration, est, col, current, grad_norm, step_scale, x))
        if grad_norm < params.grad_tol or iteration >= params.max_iters:
            break
        scale = 1.0
        accepted = None
        for _ in range(MAX_HALVINGS + 1):
            candidate = oplus(x, (-params.gamma * scale) * grad)
            if _min_pair_distance(candidate) < params.safety_radius + POLE_TOL:
                scale *= 0.5
                continue
            cand_est, cand_col, cand_total = cost_terms(candidate, scenario)
            if math.isfinite(cand_total) and cand_total <= current + ACCEPT_SLACK:
                accepted = (candidate, cand_est, cand_col, cand_total, scale)
                break
            scale *= 0.5
        if accepted is None:
            raise DescentStallError(
                f"line search exhausted {MAX_HALVINGS} halvings at iteration {iteration}",
                trace=DescentTrace(tuple(records)),
            )
        x, est, col, current, step_scale = accepted
        iteration += 1
    return x, DescentTrace(tuple(records))

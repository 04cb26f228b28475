"""Fisher information, estimation cost, observability diagnosis, and CRLB ellipses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ranging, serialize
from .errors import ObservabilityError
from .manifold import GroupMode, StateTuple
from .scenario import Scenario

RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class FisherInfo:
    """Symmetrized information matrix with its rank and log-determinant.

    ``log_det`` is -inf exactly when the matrix is rank deficient; the
    estimation cost (its negation) saturates to +inf there. ``null_vector``
    is an orthonormal witness of the weakest direction when rank deficient,
    else None.
    """

    matrix: np.ndarray
    rank: int
    log_det: float
    eigenvalues: np.ndarray
    null_vector: np.ndarray | None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def full_rank(self) -> bool:
        return self.rank == self.dim


def fisher_information(x: StateTuple, scenario: Scenario) -> FisherInfo:
    """Information matrix H^T R^-1 H of the stacked range measurements."""
    _, h = ranging.ranges_and_jacobian(x, scenario)
    hw = h / ranging._edge_tables(scenario).sigmas[:, None]
    m = hw.T @ hw
    m = 0.5 * (m + m.T)
    eigenvalues, eigenvectors = np.linalg.eigh(m)
    threshold = RANK_RTOL * max(float(eigenvalues[-1]), 0.0)
    positive = eigenvalues > threshold
    rank = int(np.count_nonzero(positive))
    if rank == m.shape[0]:
        log_det = float(np.sum(np.log(eigenvalues)))
        null_vector = None
    else:
        log_det = float("-inf")
        null_vector = eigenvectors[:, 0].copy()
    return FisherInfo(m, rank, log_det, eigenvalues, null_vector)


def estimation_cost(x: StateTuple, scenario: Scenario) -> float:
    """Negative log-determinant of the information matrix; +inf when singular."""
    return -fisher_information(x, scenario).log_det


@dataclass(frozen=True, eq=False)
class CrlbEllipse:
    """One-sigma position-uncertainty contour for a single agent."""

    agent_id: int
    center: np.ndarray
    covariance: np.ndarray
    points: np.ndarray  # (num_points, n)


def _unit_circle(num_points: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(num_points) / num_points
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _unit_sphere(num_points: int) -> np.ndarray:
    # Fibonacci lattice: evenly spread directions for the 1-sigma surface.
    k = np.arange(num_points)
    z = 1.0 - (2.0 * k + 1.0) / num_points
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def crlb_ellipses(x: StateTuple, scenario: Scenario, num_points: int = 64) -> list:
    """Per-agent position covariance from the inverse FIM, with 1-sigma contours.

    The position sub-block of each agent's tangent block of the inverse is
    extracted (rotation coordinates come first in the tangent convention).
    Agent 1 is the reference and has no uncertainty, so agents 2..N are
    reported.
    """
    info = fisher_information(x, scenario)
    if not info.full_rank:
        raise ObservabilityError(
            f"information matrix has rank {info.rank} < {info.dim}; "
            f"null direction {np.array2string(info.null_vector, precision=6)}",
            null_direction=info.null_vector,
        )
    # Eigh-based inverse keeps the result exactly symmetric.
    eigenvalues, eigenvectors = np.linalg.eigh(info.matrix)
    inv = eigenvectors @ np.diag(1.0 / eigenvalues) @ eigenvectors.T
    inv = 0.5 * (inv + inv.T)

    mode = scenario.mode
    m, rd, n = mode.dof, mode.rot_dof, mode.ambient_dim
    sphere = _unit_circle(num_points) if n == 2 else _unit_sphere(num_points)
    out = []
    for agent in range(2, x.num_agents + 1):
        start = (agent - 2) * m
        block = inv[start : start + m, start : start + m]
        pos_cov = block[rd:, rd:]
        pos_cov = 0.5 * (pos_cov + pos_cov.T)
        eval_p, evec_p = np.linalg.eigh(pos_cov)
        sqrt_cov = evec_p @ np.diag(np.sqrt(np.maximum(eval_p, 0.0))) @ evec_p.T
        center = x.pose_of(agent).translation
        points = center + sphere @ sqrt_cov.T
        out.append(CrlbEllipse(agent, center, pos_cov, points))
    return out


def write_ellipse_csv(ellipses, path, checkpoint_column: bool = False) -> None:
    """CSV rows (agent_id, point_x, point_y[, point_z]); optionally prefixed by checkpoint.

    ``ellipses`` is a list of CrlbEllipse, or of (checkpoint, CrlbEllipse)
    pairs when ``checkpoint_column`` is set.
    """
    rows = []
    n = None
    for item in ellipses:
        chk, ell = item if checkpoint_column else (None, item)
        n = ell.points.shape[1]
        for point in ell.points:
            row = [ell.agent_id, *point]
            if checkpoint_column:
                row = [chk, *row]
            rows.append(row)
    n = 2 if n is None else n
    header = ["agent_id", "point_x", "point_y"] + (["point_z"] if n == 3 else [])
    if checkpoint_column:
        header = ["checkpoint", *header]
    serialize.write_csv(path, header, rows)

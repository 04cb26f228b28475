"""Matrix Lie-group kernel for SE(2), SE(3), and the heading-only SE(3) restriction.

Tangent coordinates are ordered rotation-first:

* ``SE2``          -- (theta, u_x, u_y)
* ``SE3``          -- (w_x, w_y, w_z, u_x, u_y, u_z)
* ``SE3-heading``  -- (theta_z, u_x, u_y, u_z), roll and pitch fixed to zero

All types are immutable values and all operations are pure functions, so the
module is safe to use from concurrent workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import BranchCutError

SMALL_ANGLE = 1e-7
ROTATION_TOL = 1e-9
BRANCH_MARGIN = 1e-6
ALGEBRA_TOL = 1e-9


class GroupMode(enum.Enum):
    """Which group the state lives on; fixes dimensions for every operator here."""

    SE2 = "SE2"
    SE3 = "SE3"
    SE3_HEADING = "SE3-heading"

    @property
    def ambient_dim(self) -> int:
        """Spatial dimension n (poses are (n+1)x(n+1) homogeneous matrices)."""
        return 2 if self is GroupMode.SE2 else 3

    @property
    def dof(self) -> int:
        """Tangent dimension m."""
        return {GroupMode.SE2: 3, GroupMode.SE3: 6, GroupMode.SE3_HEADING: 4}[self]

    @property
    def rot_dof(self) -> int:
        """Number of rotation coordinates (leading block of a tangent vector)."""
        return 3 if self is GroupMode.SE3 else 1

    @classmethod
    def from_string(cls, text: str) -> "GroupMode":
        for mode in cls:
            if mode.value == text:
                return mode
        valid = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown group mode {text!r}; expected one of {valid}")


def _skew3(w: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def project_rotation(r: np.ndarray, mode: GroupMode) -> np.ndarray:
    """Nearest orthonormal matrix with det +1, respecting the heading restriction."""
    if mode is GroupMode.SE2:
        theta = np.arctan2(r[1, 0] - r[0, 1], r[0, 0] + r[1, 1])
        c, s = np.cos(theta), np.sin(theta)
        return np.array([[c, -s], [s, c]])
    if mode is GroupMode.SE3_HEADING:
        # Yaw-only poses must stay exactly yaw-only; project the planar block.
        theta = np.arctan2(r[1, 0] - r[0, 1], r[0, 0] + r[1, 1])
        return _rot_z(theta)
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


def _rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rotation plus translation, an element of SE(n).

    The rotation is validated to be orthonormal with det +1 (within 1e-9) at
    construction; both arrays are stored read-only.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float)
        n = t.shape[0] if t.ndim == 1 else -1
        if r.shape != (n, n) or n not in (2, 3):
            raise ValueError(
                f"pose needs an n x n rotation and length-n translation with n in (2, 3); "
                f"got rotation {r.shape} and translation {t.shape}"
            )
        err = np.linalg.norm(r.T @ r - np.eye(n))
        if err > ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal (||R^T R - I|| = {err:.3e})")
        det = np.linalg.det(r)
        if abs(det - 1.0) > ROTATION_TOL:
            raise ValueError(f"rotation has det {det:.12f}, expected +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def n(self) -> int:
        return self.translation.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """Homogeneous (n+1)x(n+1) matrix with exact (0, ..., 0, 1) last row."""
        n = self.n
        out = np.zeros((n + 1, n + 1))
        out[:n, :n] = self.rotation
        out[:n, n] = self.translation
        out[n, n] = 1.0
        return out

    @classmethod
    def identity(cls, n: int) -> "Pose":
        return cls(np.eye(n), np.zeros(n))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        n = m.shape[0] - 1
        expected = np.zeros(n + 1)
        expected[n] = 1.0
        if not np.array_equal(m[n], expected):
            raise ValueError("homogeneous matrix must have exact (0, ..., 0, 1) last row")
        return cls(m[:n, :n], m[:n, n])

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -(rt @ self.translation))

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, point: np.ndarray) -> np.ndarray:
        """Map a body-frame point into the parent frame."""
        return self.rotation @ np.asarray(point, dtype=float) + self.translation


@dataclass(frozen=True, eq=False)
class StateTuple:
    """Ordered poses (T_12, ..., T_1N) of agents 2..N relative to reference agent 1.

    Agent 1 is the gauge: its pose is identity and is never stored.
    """

    poses: tuple
    mode: GroupMode

    def __post_init__(self):
        poses = tuple(self.poses)
        n = self.mode.ambient_dim
        for k, pose in enumerate(poses):
            if pose.n != n:
                raise ValueError(
                    f"pose {k} has spatial dimension {pose.n}, mode {self.mode.value} needs {n}"
                )
            if self.mode is GroupMode.SE3_HEADING:
                if np.max(np.abs(pose.rotation[:, 2] - np.array([0.0, 0.0, 1.0]))) > ALGEBRA_TOL:
                    raise ValueError(f"pose {k} has nonzero roll/pitch in heading-only mode")
        object.__setattr__(self, "poses", poses)

    @property
    def num_agents(self) -> int:
        return len(self.poses) + 1

    def pose_of(self, agent_id: int) -> Pose:
        """Pose of ``agent_id`` in agent 1's frame; agent 1 returns identity."""
        if agent_id == 1:
            return Pose.identity(self.mode.ambient_dim)
        if not 2 <= agent_id <= self.num_agents:
            raise KeyError(f"agent {agent_id} not in scenario (1..{self.num_agents})")
        return self.poses[agent_id - 2]

    def rotation_stack(self) -> np.ndarray:
        """(N, n, n) rotations indexed by agent_id - 1; index 0 is the identity."""
        n = self.mode.ambient_dim
        out = np.empty((self.num_agents, n, n))
        out[0] = np.eye(n)
        for k, pose in enumerate(self.poses):
            out[k + 1] = pose.rotation
        return out

    def translation_stack(self) -> np.ndarray:
        """(N, n) translations indexed by agent_id - 1; index 0 is zero."""
        n = self.mode.ambient_dim
        out = np.zeros((self.num_agents, n))
        for k, pose in enumerate(self.poses):
            out[k + 1] = pose.translation
        return out


def wedge(xi: np.ndarray, mode: GroupMode) -> np.ndarray:
    """Map tangent coordinates to the (n+1)x(n+1) Lie-algebra matrix."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (mode.dof,):
        raise ValueError(f"expected length-{mode.dof} tangent vector for {mode.value}, got {xi.shape}")
    if mode is GroupMode.SE2:
        theta, u = xi[0], xi[1:]
        out = np.zeros((3, 3))
        out[0, 1] = -theta
        out[1, 0] = theta
        out[:2, 2] = u
        return out
    if mode is GroupMode.SE3:
        w, u = xi[:3], xi[3:]
    else:
        w, u = np.array([0.0, 0.0, xi[0]]), xi[1:]
    out = np.zeros((4, 4))
    out[:3, :3] = _skew3(w)
    out[:3, 3] = u
    return out


def vee(m: np.ndarray, mode: GroupMode) -> np.ndarray:
    """Inverse of :func:`wedge`; rejects matrices outside the algebra of ``mode``."""
    m = np.asarray(m, dtype=float)
    k = mode.ambient_dim + 1
    if m.shape != (k, k):
        raise ValueError(f"expected {k}x{k} matrix for {mode.value}, got {m.shape}")
    rot = m[: k - 1, : k - 1]
    if np.max(np.abs(rot + rot.T)) > ALGEBRA_TOL:
        raise ValueError("rotation block is not skew-symmetric")
    if np.max(np.abs(m[k - 1])) > ALGEBRA_TOL:
        raise ValueError("last row is not zero")
    if mode is GroupMode.SE2:
        return np.array([m[1, 0], m[0, 2], m[1, 2]])
    if mode is GroupMode.SE3:
        return np.array([m[2, 1], m[0, 2], m[1, 0], m[0, 3], m[1, 3], m[2, 3]])
    if max(abs(m[2, 1]), abs(m[0, 2])) > ALGEBRA_TOL:
        raise ValueError("roll/pitch generators present in heading-only mode")
    return np.array([m[1, 0], m[0, 3], m[1, 3], m[2, 3]])


def _se2_v(theta: float) -> np.ndarray:
    # Left-Jacobian factor mapping tangent translation to the group translation.
    if abs(theta) < SMALL_ANGLE:
        a = 1.0 - theta * theta / 6.0
        b = 0.5 * theta
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta
    return np.array([[a, -b], [b, a]])


def _se2_v_inv(theta: float) -> np.ndarray:
    v = _se2_v(theta)
    det = v[0, 0] * v[0, 0] + v[1, 0] * v[1, 0]
    return np.array([[v[0, 0], v[1, 0]], [-v[1, 0], v[0, 0]]]) / det


def _so3_exp(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    s = _skew3(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + s + 0.5 * (s @ s)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * s + b * (s @ s)


def _so3_log(r: np.ndarray) -> np.ndarray:
    cos_theta = np.clip(0.5 * (np.trace(r) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta >= np.pi - BRANCH_MARGIN:
        raise BranchCutError(
            f"rotation angle {theta:.9f} rad is within {BRANCH_MARGIN} of the pi branch cut"
        )
    axis_part = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < SMALL_ANGLE:
        return (0.5 + theta * theta / 12.0) * axis_part
    return (theta / (2.0 * np.sin(theta))) * axis_part


def _so3_v(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    s = _skew3(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * s + (s @ s) / 6.0
    t2 = theta * theta
    a = (1.0 - np.cos(theta)) / t2
    b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * s + b * (s @ s)


def _so3_v_inv(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    s = _skew3(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * s + (s @ s) / 12.0
    c = 1.0 / (theta * theta) - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * s + c * (s @ s)


def rotation_exp(w: np.ndarray, mode: GroupMode) -> np.ndarray:
    """Rotation-only exponential map for the rotation coordinates of ``mode``."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if w.shape != (mode.rot_dof,):
        raise ValueError(f"expected {mode.rot_dof} rotation coordinates for {mode.value}")
    if mode is GroupMode.SE2:
        c, s = np.cos(w[0]), np.sin(w[0])
        return np.array([[c, -s], [s, c]])
    if mode is GroupMode.SE3_HEADING:
        return _rot_z(w[0])
    return _so3_exp(w)


def rotation_log(r: np.ndarray, mode: GroupMode) -> np.ndarray:
    """Rotation-only logarithm; raises :class:`BranchCutError` at or beyond pi."""
    r = np.asarray(r, dtype=float)
    if mode is GroupMode.SE3:
        return _so3_log(r)
    theta = np.arctan2(r[1, 0], r[0, 0])
    if abs(theta) >= np.pi - BRANCH_MARGIN:
        raise BranchCutError(
            f"rotation angle {theta:.9f} rad is within {BRANCH_MARGIN} of the pi branch cut"
        )
    if mode is GroupMode.SE3_HEADING:
        if np.max(np.abs(r[:, 2] - np.array([0.0, 0.0, 1.0]))) > ALGEBRA_TOL:
            raise ValueError("rotation has roll/pitch; not in the heading-only subgroup")
    return np.array([theta])


def exp(xi: np.ndarray, mode: GroupMode) -> Pose:
    """Closed-form exponential map from tangent coordinates to a pose."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (mode.dof,):
        raise ValueError(f"expected length-{mode.dof} tangent vector for {mode.value}, got {xi.shape}")
    if not np.all(np.isfinite(xi)):
        raise ValueError("tangent coordinates must be finite")
    if mode is GroupMode.SE2:
        return Pose(rotation_exp(xi[:1], mode), _se2_v(xi[0]) @ xi[1:])
    if mode is GroupMode.SE3:
        return Pose(_so3_exp(xi[:3]), _so3_v(xi[:3]) @ xi[3:])
    # Heading-only: planar block follows SE(2), z passes through untouched.
    t = np.empty(3)
    t[:2] = _se2_v(xi[0]) @ xi[1:3]
    t[2] = xi[3]
    return Pose(_rot_z(xi[0]), t)


def log(pose: Pose, mode: GroupMode) -> np.ndarray:
    """Principal-branch logarithm; raises :class:`BranchCutError` near |angle| = pi."""
    if pose.n != mode.ambient_dim:
        raise ValueError(f"pose dimension {pose.n} does not match mode {mode.value}")
    if mode is GroupMode.SE3:
        w = _so3_log(pose.rotation)
        return np.concatenate([w, _so3_v_inv(w) @ pose.translation])
    theta = rotation_log(pose.rotation, mode)[0]
    if mode is GroupMode.SE2:
        u = _se2_v_inv(theta) @ pose.translation
        return np.array([theta, u[0], u[1]])
    u_xy = _se2_v_inv(theta) @ pose.translation[:2]
    return np.array([theta, u_xy[0], u_xy[1], pose.translation[2]])


def odot(p: np.ndarray, mode: GroupMode) -> np.ndarray:
    """(n+1) x m matrix with wedge(xi) @ p == odot(p) @ xi for homogeneous p."""
    p = np.asarray(p, dtype=float)
    n = mode.ambient_dim
    if p.shape != (n + 1,):
        raise ValueError(f"expected homogeneous point of length {n + 1}, got {p.shape}")
    if p[n] != 1.0:
        raise ValueError("homogeneous point must have last entry exactly 1")
    eps = p[:n]
    out = np.zeros((n + 1, mode.dof))
    if mode is GroupMode.SE2:
        out[0, 0] = -eps[1]
        out[1, 0] = eps[0]
    elif mode is GroupMode.SE3:
        out[:3, :3] = -_skew3(eps)
    else:
        out[0, 0] = -eps[1]
        out[1, 0] = eps[0]
    out[:n, mode.rot_dof :] = np.eye(n)
    return out


def oplus(state: StateTuple, dx: np.ndarray) -> StateTuple:
    """Right-multiplicative retraction applied blockwise: T_i <- T_i exp(wedge(dx_i)).

    Rotations are re-orthonormalized by polar projection after each update so
    drift stays bounded over long descent runs. A zero block leaves its pose
    bit-identical.
    """
    dx = np.asarray(dx, dtype=float)
    mode = state.mode
    m = mode.dof
    expected = m * len(state.poses)
    if dx.shape != (expected,):
        raise ValueError(f"expected stacked update of length {expected}, got {dx.shape}")
    new_poses = []
    for k, pose in enumerate(state.poses):
        block = dx[k * m : (k + 1) * m]
        if not block.any():
            new_poses.append(pose)
            continue
        step = exp(block, mode)
        rot = project_rotation(pose.rotation @ step.rotation, mode)
        trans = pose.rotation @ step.translation + pose.translation
        new_poses.append(Pose(rot, trans))
    return StateTuple(tuple(new_poses), mode)

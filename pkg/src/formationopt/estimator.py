"""On-manifold Gauss-Newton pose estimator and the Monte-Carlo validation harness.

The estimator minimizes a Mahalanobis-weighted sum of a per-agent attitude
prior residual ln(C^T C_prior)-vee and the range residual y - g(x), iterating
right-perturbation Gauss-Newton steps with a step-halving safeguard.

Monte-Carlo trials are independent given their RNG streams, which are derived
from (seed, checkpoint index, trial index), so reports are reproducible and
trials can run on worker threads without changing the result.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import manifold, optimize, ranging, serialize
from .errors import (
    BranchCutError,
    EstimatorMaxIterError,
    EstimatorSingularError,
)
from .manifold import GroupMode, Pose, StateTuple, oplus
from .ranging import MeasurementVector
from .scenario import Scenario

STEP_TOL = 1e-8
MAX_ITERS = 100
MAX_HALVINGS = 10
TRANSLATION_JITTER = 0.5
FAILURE_FRACTION = 0.05


@dataclass(frozen=True, eq=False)
class AttitudePrior:
    """Per-agent rotation prior: mean rotations and SPD covariances, agents 2..N."""

    means: tuple
    covariances: tuple

    def __post_init__(self):
        means = tuple(np.array(m, dtype=float) for m in self.means)
        covs = tuple(np.array(c, dtype=float) for c in self.covariances)
        if len(means) != len(covs):
            raise ValueError("need one covariance per prior mean")
        for c in covs:
            if c.ndim != 2 or c.shape[0] != c.shape[1]:
                raise ValueError("prior covariances must be square")
            if np.max(np.abs(c - c.T)) > 1e-12 or np.any(np.linalg.eigvalsh(c) <= 0.0):
                raise ValueError("prior covariances must be symmetric positive definite")
        for arr in (*means, *covs):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @classmethod
    def from_state(cls, state: StateTuple, sigma: float) -> "AttitudePrior":
        """Prior centered exactly on the state's rotations with isotropic sigma (rad)."""
        rd = state.mode.rot_dof
        cov = sigma * sigma * np.eye(rd)
        return cls(
            tuple(p.rotation for p in state.poses),
            tuple(cov for _ in state.poses),
        )

    @classmethod
    def perturbed(cls, state: StateTuple, sigma: float, rng: np.random.Generator) -> "AttitudePrior":
        """Prior whose means are the true rotations perturbed by N(0, sigma^2) tangent noise."""
        mode = state.mode
        rd = mode.rot_dof
        cov = sigma * sigma * np.eye(rd)
        means = []
        for pose in state.poses:
            w = sigma * rng.standard_normal(rd)
            means.append(pose.rotation @ manifold.rotation_exp(w, mode))
        return cls(tuple(means), tuple(cov for _ in state.poses))


def _prior_whiteners(prior: AttitudePrior):
    # Inverse Cholesky factors; rows get multiplied by these to whiten.
    out = []
    for cov in prior.covariances:
        out.append(np.linalg.inv(np.linalg.cholesky(cov)))
    return out


def _whitened_system(x: StateTuple, scenario: Scenario, prior: AttitudePrior, y: MeasurementVector):
    """Stacked whitened residual and Jacobian for the prior and range terms."""
    mode = scenario.mode
    m, rd = mode.dof, mode.rot_dof
    num_blocks = len(x.poses)
    dim = m * num_blocks
    whiteners = _prior_whiteners(prior)

    prior_residual = np.zeros(rd * num_blocks)
    prior_jac = np.zeros((rd * num_blocks, dim))
    for k, pose in enumerate(x.poses):
        err = manifold.rotation_log(pose.rotation.T @ prior.means[k], mode)
        lw = whiteners[k]
        rows = slice(k * rd, (k + 1) * rd)
        prior_residual[rows] = lw @ err
        # d err / d dtheta = -Jl_inv(err); scalar modes reduce to -1. The SO(3)
        # left Jacobian is the translation factor of the SE(3) exponential.
        if mode is GroupMode.SE3:
            block = -manifold._so3_v_inv(err)
        else:
            block = -np.eye(1)
        prior_jac[rows, k * m : k * m + rd] = lw @ block

    ranges, h = ranging.ranges_and_jacobian(x, scenario)
    inv_sigma = 1.0 / y.sigmas
    meas_residual = (y.values - ranges) * inv_sigma
    meas_jac = -h * inv_sigma[:, None]

    residual = np.concatenate([prior_residual, meas_residual])
    jac = np.vstack([prior_jac, meas_jac])
    return residual, jac


def _objective(x: StateTuple, scenario: Scenario, prior: AttitudePrior, y: MeasurementVector) -> float:
    mode = scenario.mode
    whiteners = _prior_whiteners(prior)
    total = 0.0
    for k, pose in enumerate(x.poses):
        err = manifold.rotation_log(pose.rotation.T @ prior.means[k], mode)
        wr = whiteners[k] @ err
        total += float(wr @ wr)
    ranges = ranging.measurement_function(x, scenario)
    wm = (y.values - ranges) / y.sigmas
    total += float(wm @ wm)
    return 0.5 * total


def gauss_newton(
    y: MeasurementVector,
    scenario: Scenario,
    prior: AttitudePrior,
    x0: StateTuple,
    max_iters: int = MAX_ITERS,
    step_tol: float = STEP_TOL,
) -> StateTuple:
    """Iterate right-perturbation Gauss-Newton until the step norm converges.

    Full steps are kept whenever they decrease the objective; otherwise the
    step is halved up to 10 times. If no halving decreases the objective the
    current iterate is returned as converged. Raises EstimatorSingularError
    when the normal equations are rank deficient and EstimatorMaxIterError
    (carrying the last iterate) when the iteration cap is hit.
    """
    if len(y) != len(scenario.graph.edges):
        raise ValueError("measurement vector length does not match the graph")
    x = x0
    for iteration in range(max_iters):
        residual, jac = _whitened_system(x, scenario, prior, y)
        if iteration == 0:
            sv = np.linalg.svd(jac, compute_uv=False)
            if sv[-1] <= 1e-10 * sv[0]:
                raise EstimatorSingularError(
                    "combined prior + measurement Jacobian is rank deficient at the initial guess"
                )
        gram = jac.T @ jac
        rhs = -(jac.T @ residual)
        try:
            delta = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError as exc:
            raise EstimatorSingularError(f"normal equations solve failed: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise EstimatorSingularError("normal equations produced non-finite step")
        if float(np.linalg.norm(delta)) < step_tol:
            return x
        current = 0.5 * float(residual @ residual)
        scale = 1.0
        accepted = None
        for _ in range(MAX_HALVINGS + 1):
            candidate = oplus(x, scale * delta)
            if _objective(candidate, scenario, prior, y) <= current:
                accepted = candidate
                break
            scale *= 0.5
        if accepted is None:
            # No scaled step decreases the objective: numerically stationary.
            return x
        x = accepted
    raise EstimatorMaxIterError(
        f"step norm did not converge within {max_iters} iterations", last_iterate=x
    )


def state_tangent_error(truth: StateTuple, estimate: StateTuple) -> np.ndarray:
    """Stacked per-agent ln(T_true^-1 T_hat)-vee error coordinates."""
    if truth.mode is not estimate.mode or len(truth.poses) != len(estimate.poses):
        raise ValueError("states must share mode and agent count")
    mode = truth.mode
    parts = [
        manifold.log(t.inverse() @ e, mode) for t, e in zip(truth.poses, estimate.poses)
    ]
    return np.concatenate(parts)


def mean_squared_error(trials) -> float:
    """Mean over (truth, estimate) pairs of the squared tangent-error norm."""
    trials = list(trials)
    if not trials:
        raise ValueError("need at least one trial")
    total = 0.0
    for truth, estimate in trials:
        err = state_tangent_error(truth, estimate)
        total += float(err @ err)
    return total / len(trials)


@dataclass(frozen=True, eq=False)
class CheckpointStats:
    index: int
    cost_est: float
    cost_col: float
    cost_total: float
    mse: float
    mean_pos_err: float
    mean_heading_err: float
    trials: int
    trials_failed: int
    failed: bool
    error_second_moment: np.ndarray


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    checkpoints: tuple

    @property
    def any_failed(self) -> bool:
        return any(c.failed for c in self.checkpoints)


def write_report_csv(report: MonteCarloReport, path) -> None:
    serialize.write_csv(
        path,
        ["checkpoint", "J_est", "J_col", "J_total", "MSE", "mean_pos_err", "mean_heading_err", "trials_failed"],
        [
            [c.index, c.cost_est, c.cost_col, c.cost_total, c.mse, c.mean_pos_err, c.mean_heading_err, c.trials_failed]
            for c in report.checkpoints
        ],
    )


def _run_trial(state: StateTuple, scenario: Scenario, prior_sigma: float, rng: np.random.Generator):
    mode = scenario.mode
    n = mode.ambient_dim
    y = ranging.synthesize(state, scenario, rng)
    prior = AttitudePrior.perturbed(state, prior_sigma, rng)
    guess_poses = []
    for k, pose in enumerate(state.poses):
        jitter = TRANSLATION_JITTER * rng.standard_normal(n)
        guess_poses.append(Pose(prior.means[k], pose.translation + jitter))
    x0 = StateTuple(tuple(guess_poses), mode)
    estimate = gauss_newton(y, scenario, prior, x0)
    return state_tangent_error(state, estimate), estimate


def monte_carlo(
    checkpoint_states,
    scenario: Scenario,
    prior_sigma: float,
    trials: int,
    seed: int,
    threads: int | None = None,
) -> MonteCarloReport:
    """Run ``trials`` estimation trials at each checkpoint state.

    Each trial synthesizes noisy ranges, builds a perturbed attitude prior
    (standing in for gyroscope dead reckoning), starts Gauss-Newton from the
    prior attitude with jittered true translations, and accumulates tangent
    errors. Failed trials (singular or non-converging) are counted; a
    checkpoint is marked failed when more than 5% of its trials error out.
    """
    if trials < 1:
        raise ValueError("need at least one trial per checkpoint")
    checkpoint_states = list(checkpoint_states)
    mode = scenario.mode
    m, rd, n = mode.dof, mode.rot_dof, mode.ambient_dim
    stats = []
    for ci, state in enumerate(checkpoint_states):
        est, col, total = optimize.cost_terms(state, scenario)

        def trial(ti: int, _state=state, _ci=ci):
            rng = np.random.default_rng([seed, _ci, ti])
            try:
                return _run_trial(_state, scenario, prior_sigma, rng)
            except (EstimatorSingularError, EstimatorMaxIterError, BranchCutError):
                return None

        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(trial, range(trials)))
        else:
            results = [trial(ti) for ti in range(trials)]

        errors = [r[0] for r in results if r is not None]
        estimates = [r[1] for r in results if r is not None]
        failed_count = trials - len(errors)
        if errors:
            err_matrix = np.stack(errors)
            mse = float(np.mean(np.sum(err_matrix**2, axis=1)))
            second_moment = (err_matrix.T @ err_matrix) / len(errors)
            pos_errs = []
            head_errs = []
            for estimate in estimates:
                for k, pose in enumerate(state.poses):
                    pos_errs.append(np.linalg.norm(estimate.poses[k].translation - pose.translation))
            blocks = err_matrix.reshape(len(errors), len(state.poses), m)
            head_errs = np.linalg.norm(blocks[:, :, :rd], axis=2).ravel()
            mean_pos = float(np.mean(pos_errs))
            mean_head = float(np.mean(head_errs))
        else:
            dim = m * len(state.poses)
            mse = math.nan
            second_moment = np.full((dim, dim), math.nan)
            mean_pos = math.nan
            mean_head = math.nan
        stats.append(
            CheckpointStats(
                index=ci,
                cost_est=est,
                cost_col=col,
                cost_total=total,
                mse=mse,
                mean_pos_err=mean_pos,
                mean_heading_err=mean_head,
                trials=trials,
                trials_failed=failed_count,
                failed=failed_count > FAILURE_FRACTION * trials,
                error_second_moment=second_moment,
            )
        )
    return MonteCarloReport(tuple(stats))

"""Command-line front end: optimize, evaluate, check-jacobian, estimate, montecarlo, crlb.

All commands are deterministic given (scenario, seed): re-runs produce
byte-identical CSV bodies. Each run writes a manifest.json listing the
resolved parameters and every output file; the wall-clock duration is the
only non-reproducible field.

Exit codes:
    0  success
    1  runtime failure (for example coincident tags in check-jacobian)
    2  scenario validation failure
    3  optimizer stall (trace still written)
    4  jacobian check exceedance (worst state dumped)
    5  montecarlo checkpoint with >5% failed trials (partial report written)
    6  unobservable state in crlb (null direction printed)
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, estimator, fisher, manifold, optimize, ranging, serialize
from .errors import (
    DescentStallError,
    ObservabilityError,
    ScenarioError,
    SingularGeometryError,
)
from .manifold import GroupMode, Pose, StateTuple
from .presets import PRESETS, preset
from .scenario import (
    Scenario,
    load_scenario,
    load_state_document,
    state_from_records,
    state_to_records,
    write_state_document,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_STALL = 3
EXIT_JACOBIAN = 4
EXIT_MC_FAILURES = 5
EXIT_UNOBSERVABLE = 6

THREADS_ENV = "FORMATION_OPT_THREADS"


@dataclass
class RunManifest:
    command: str
    scenario: str
    parameters: dict
    seed: int
    version: str
    outputs: list
    duration_s: float
    status: str = "ok"
    error: str = ""

    def write(self, out_dir: Path) -> None:
        serialize.write_json(
            out_dir / "manifest.json",
            {
                "command": self.command,
                "scenario": self.scenario,
                "parameters": self.parameters,
                "seed": self.seed,
                "version": self.version,
                "outputs": self.outputs,
                "duration_s": self.duration_s,
                "status": self.status,
                "error": self.error,
            },
        )


def _resolve_scenario(spec: str) -> Scenario:
    path = Path(spec)
    if path.exists():
        return load_scenario(path)
    if spec in PRESETS:
        return preset(spec)
    raise ScenarioError(
        f"scenario {spec!r} is neither a file nor a preset "
        f"(presets: {', '.join(sorted(PRESETS))})"
    )


def _resolve_threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _resolve_seed(args, scenario: Scenario) -> int:
    return args.seed if args.seed is not None else scenario.rng_seed


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_checkpoints(records, path) -> None:
    doc = {
        "mode": records[0].state.mode.value,
        "checkpoints": [
            {"iter": r.iteration, "state": state_to_records(r.state)} for r in records
        ],
    }
    serialize.write_json(path, doc)


def _load_checkpoints(path, scenario: Scenario):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    mode = GroupMode.from_string(doc["mode"])
    if mode is not scenario.mode:
        raise ScenarioError(
            f"checkpoint document mode {mode.value} does not match scenario mode {scenario.mode.value}"
        )
    states = []
    for entry in doc["checkpoints"]:
        states.append(
            state_from_records(entry["state"], mode, scenario.num_agents, "checkpoints")
        )
    if not states:
        raise ScenarioError("checkpoint document contains no states")
    return states


def cmd_optimize(args) -> int:
    start = time.perf_counter()
    scenario = _resolve_scenario(args.scenario)
    out = _out_dir(args)
    seed = _resolve_seed(args, scenario)
    manifest = RunManifest(
        command="optimize",
        scenario=args.scenario,
        parameters={"threads": _resolve_threads(args)},
        seed=seed,
        version=__version__,
        outputs=[],
        duration_s=0.0,
    )
    try:
        final_state, trace = optimize.descend(scenario)
    except DescentStallError as exc:
        optimize.write_trace_csv(exc.trace, out / "trace.csv")
        manifest.outputs = ["trace.csv"]
        manifest.status = "failed"
        manifest.error = str(exc)
        manifest.duration_s = time.perf_counter() - start
        manifest.write(out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STALL

    optimize.write_trace_csv(trace, out / "trace.csv")
    write_state_document(final_state, out / "final_formation.json")
    checkpoints = trace.checkpoints(args.checkpoints)
    _write_checkpoints(checkpoints, out / "checkpoints.json")
    ellipse_rows = []
    for record in checkpoints:
        for ellipse in fisher.crlb_ellipses(record.state, scenario):
            ellipse_rows.append((record.iteration, ellipse))
    fisher.write_ellipse_csv(ellipse_rows, out / "crlb_checkpoints.csv", checkpoint_column=True)
    manifest.outputs = ["trace.csv", "final_formation.json", "checkpoints.json", "crlb_checkpoints.csv"]
    manifest.duration_s = time.perf_counter() - start
    manifest.write(out)
    print(
        f"optimize: {len(trace) - 1} steps, final J_total "
        f"{trace[-1].cost_total:.6f} (J_est {trace[-1].cost_est:.6f})"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    start = time.perf_counter()
    scenario = _resolve_scenario(args.scenario)
    out = _out_dir(args)
    state = scenario.initial_state
    if args.state:
        state = load_state_document(args.state, scenario.mode, scenario.num_agents)
    est, col, total = optimize.cost_terms(state, scenario)
    info = fisher.fisher_information(state, scenario)
    positions = state.translation_stack()
    distances = {}
    for a in range(positions.shape[0]):
        for b in range(a + 1, positions.shape[0]):
            distances[f"{a + 1}-{b + 1}"] = float(np.linalg.norm(positions[a] - positions[b]))
    serialize.write_json(
        out / "evaluation.json",
        {
            "J_est": est,
            "J_col": col,
            "J_total": total,
            "fim_rank": info.rank,
            "fim_dim": info.dim,
            "log_det": info.log_det,
            "pairwise_distances": distances,
        },
    )
    manifest = RunManifest(
        command="evaluate",
        scenario=args.scenario,
        parameters={"state": args.state or ""},
        seed=_resolve_seed(args, scenario),
        version=__version__,
        outputs=["evaluation.json"],
        duration_s=time.perf_counter() - start,
    )
    manifest.write(out)
    print(f"evaluate: J_est {est}, J_col {col}, J_total {total}, rank {info.rank}/{info.dim}")
    return EXIT_OK


def _random_state(scenario: Scenario, rng: np.random.Generator) -> StateTuple:
    """Generic random state with all ranges comfortably away from zero."""
    mode = scenario.mode
    n = mode.ambient_dim
    for _ in range(100):
        poses = []
        for _agent in range(2, scenario.num_agents + 1):
            if mode is GroupMode.SE3:
                w = rng.uniform(-1.0, 1.0, size=3)
                w *= rng.uniform(0.0, 2.5) / max(np.linalg.norm(w), 1e-12)
                rot = manifold.rotation_exp(w, mode)
            else:
                rot = manifold.rotation_exp(np.array([rng.uniform(-2.5, 2.5)]), mode)
            poses.append(Pose(rot, rng.uniform(-4.0, 4.0, size=n)))
        state = StateTuple(tuple(poses), mode)
        if float(np.min(ranging.measurement_function(state, scenario))) > 0.05:
            return state
    raise RuntimeError("could not sample a state with non-degenerate ranges")


def cmd_check_jacobian(args) -> int:
    start = time.perf_counter()
    scenario = _resolve_scenario(args.scenario)
    out = _out_dir(args)
    seed = _resolve_seed(args, scenario)
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_state = None
    try:
        for _ in range(args.trials):
            state = _random_state(scenario, rng)
            analytic = ranging.stack_jacobian(state, scenario)
            if args.corrupt_sign:
                analytic = analytic.copy()
                analytic[0] = -analytic[0]
            numeric = ranging.finite_difference_jacobian(state, scenario, step=1e-6)
            rel = float(np.max(np.abs(analytic - numeric)) / np.max(np.abs(analytic)))
            if rel > worst:
                worst, worst_state = rel, state
    except SingularGeometryError as exc:
        print(f"error: singular geometry on edge {exc.edge}: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    passed = worst < args.tolerance
    serialize.write_json(
        out / "jacobian_report.json",
        {"trials": args.trials, "max_rel_error": worst, "tolerance": args.tolerance, "passed": passed},
    )
    outputs = ["jacobian_report.json"]
    if not passed and worst_state is not None:
        write_state_document(worst_state, out / "worst_state.json")
        outputs.append("worst_state.json")
    manifest = RunManifest(
        command="check-jacobian",
        scenario=args.scenario,
        parameters={"trials": args.trials, "tolerance": args.tolerance},
        seed=seed,
        version=__version__,
        outputs=outputs,
        duration_s=time.perf_counter() - start,
        status="ok" if passed else "failed",
        error="" if passed else f"max relative error {worst:.3e} exceeds {args.tolerance}",
    )
    manifest.write(out)
    print(f"check-jacobian: max relative error {worst:.3e} over {args.trials} states")
    return EXIT_OK if passed else EXIT_JACOBIAN


def cmd_estimate(args) -> int:
    start = time.perf_counter()
    scenario = _resolve_scenario(args.scenario)
    out = _out_dir(args)
    seed = _resolve_seed(args, scenario)
    rng = np.random.default_rng([seed, 0, 0])
    truth = scenario.initial_state
    measurement = ranging.synthesize(truth, scenario, rng)
    prior = estimator.AttitudePrior.perturbed(truth, args.prior_sigma, rng)
    guess_poses = []
    for k, pose in enumerate(truth.poses):
        jitter = args.jitter * rng.standard_normal(scenario.mode.ambient_dim)
        guess_poses.append(Pose(prior.means[k], pose.translation + jitter))
    estimate = estimator.gauss_newton(
        measurement, scenario, prior, StateTuple(tuple(guess_poses), scenario.mode)
    )
    err = estimator.state_tangent_error(truth, estimate)
    write_state_document(estimate, out / "estimate.json")
    serialize.write_json(
        out / "estimate_metrics.json",
        {
            "tangent_error": [float(v) for v in err],
            "tangent_error_norm": float(np.linalg.norm(err)),
            "squared_error": float(err @ err),
        },
    )
    manifest = RunManifest(
        command="estimate",
        scenario=args.scenario,
        parameters={"prior_sigma": args.prior_sigma, "jitter": args.jitter},
        seed=seed,
        version=__version__,
        outputs=["estimate.json", "estimate_metrics.json"],
        duration_s=time.perf_counter() - start,
    )
    manifest.write(out)
    print(f"estimate: tangent error norm {np.linalg.norm(err):.6f}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    start = time.perf_counter()
    scenario = _resolve_scenario(args.scenario)
    out = _out_dir(args)
    seed = _resolve_seed(args, scenario)
    states = _load_checkpoints(args.trace, scenario)
    threads = _resolve_threads(args)
    report = estimator.monte_carlo(
        states, scenario, prior_sigma=args.prior_sigma, trials=args.k, seed=seed, threads=threads
    )
    estimator.write_report_csv(report, out / "montecarlo.csv")
    failed = report.any_failed
    manifest = RunManifest(
        command="montecarlo",
        scenario=args.scenario,
        parameters={
            "trace": str(args.trace),
            "k": args.k,
            "prior_sigma": args.prior_sigma,
            "threads": threads,
        },
        seed=seed,
        version=__version__,
        outputs=["montecarlo.csv"],
        duration_s=time.perf_counter() - start,
        status="ok" if not failed else "failed",
        error="" if not failed else "a checkpoint exceeded the 5% trial-failure budget",
    )
    manifest.write(out)
    for c in report.checkpoints:
        print(
            f"montecarlo: checkpoint {c.index} J_total {c.cost_total:.4f} "
            f"MSE {c.mse:.6f} failed {c.trials_failed}/{c.trials}"
        )
    return EXIT_MC_FAILURES if failed else EXIT_OK


def cmd_crlb(args) -> int:
    start = time.perf_counter()
    scenario = _resolve_scenario(args.scenario)
    out = _out_dir(args)
    state = scenario.initial_state
    if args.state:
        state = load_state_document(args.state, scenario.mode, scenario.num_agents)
    try:
        ellipses = fisher.crlb_ellipses(state, scenario)
    except ObservabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNOBSERVABLE
    fisher.write_ellipse_csv(ellipses, out / "crlb_ellipses.csv")
    manifest = RunManifest(
        command="crlb",
        scenario=args.scenario,
        parameters={"state": args.state or ""},
        seed=_resolve_seed(args, scenario),
        version=__version__,
        outputs=["crlb_ellipses.csv"],
        duration_s=time.perf_counter() - start,
    )
    manifest.write(out)
    print(f"crlb: wrote {len(ellipses)} ellipses")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formationopt",
        description="Fisher-information-optimal formations for range-based relative pose estimation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--scenario", required=True, help="scenario file path or preset name")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--threads", type=int, default=None, help=f"worker cap (env {THREADS_ENV})")

    p = sub.add_parser("optimize", help="descend the total cost and write the trace")
    common(p)
    p.add_argument("--checkpoints", type=int, default=10, help="checkpoint count along the trace")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="report costs and observability at a state")
    common(p)
    p.add_argument("--state", default=None, help="state document (defaults to the initial state)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("check-jacobian", help="analytic vs finite-difference Jacobian check")
    common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--corrupt-sign", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check_jacobian)

    p = sub.add_parser("estimate", help="single synthesized-measurement estimation run")
    common(p)
    p.add_argument("--prior-sigma", type=float, default=0.08)
    p.add_argument("--jitter", type=float, default=estimator.TRANSLATION_JITTER)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("montecarlo", help="Monte-Carlo estimator validation at checkpoints")
    common(p)
    p.add_argument("--trace", required=True, help="checkpoints.json written by optimize")
    p.add_argument("--k", type=int, default=2000, help="trials per checkpoint")
    p.add_argument("--prior-sigma", type=float, default=0.08)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("crlb", help="CRLB position ellipses at a state")
    common(p)
    p.add_argument("--state", default=None, help="state document (defaults to the initial state)")
    p.set_defaults(func=cmd_crlb)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

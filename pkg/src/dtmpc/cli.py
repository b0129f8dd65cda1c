"""
Command-line interface for tube MPC experiments.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any

from .config import ConfigError, load_config, mpc_settings, task_config, validate_config
from .ddp import SolverSettings, solve
from .doc import FD_STEP, InnerSolveFailedError
from .experiments import (
    ALGORITHMS,
    DEFAULT_BUDGETS,
    DEFAULT_ROUTES,
    GRADCHECK_HORIZON,
    CampaignConfig,
    artifact_version,
    grad_precision_campaign,
    jacobian_trend_check,
    normalize_algorithm,
    route_agreement_checks,
    run_campaign,
    timing_campaign,
)
from .models import GradientRoute
from .output_formatter import ArtifactWriter, FileSavingError, SummaryFormatter
from .tasks import build_task
from .tube_mpc import DIVERGENCE_ERRORS, build_nominal_problem

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
DEFAULT_SYSTEM = "dubins"


def effective_config(args: argparse.Namespace) -> dict[str, Any]:
    """Config file contents with command-line overrides applied."""
    config = load_config(args.config) if args.config else {}
    overrides = {
        "system": args.system,
        "seed": args.seed,
        "trials": args.trials,
        "threads": args.threads,
        "algorithm": args.algo,
    }
    config.update({key: value for key, value in overrides.items() if value is not None})
    return validate_config(config)


def cmd_solve(config: dict[str, Any], out_dir: Path) -> int:
    """One nominal trajectory optimization; writes trajectory.csv and solver_stats.json."""
    system = config.get("system", DEFAULT_SYSTEM)
    seed = config.get("seed", 0)
    section = config.get("solve", {})
    cfg = task_config(system, config)
    if "horizon" in section:
        cfg = cfg.with_overrides({"horizon": section["horizon"]})
    try:
        settings = SolverSettings(
            budget=section.get("budget", 200),
            tol=section.get("tol", 1e-6),
            mode=section.get("mode", "gauss_newton"),
        )
    except ValueError as e:
        raise ConfigError(f"Invalid solve settings: {e}") from e

    try:
        task = build_task(cfg, seed=seed, trial=0)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    problem = build_nominal_problem(task, task.nominal_theta0(), task.x0)
    started = time.perf_counter()
    try:
        solution = solve(problem, settings=settings)
    except DIVERGENCE_ERRORS as e:
        logger.error(f"Solver failed: {e}")
        return EXIT_FAILURE
    wall_time = time.perf_counter() - started

    if not solution.converged:
        logger.warning(f"Solver stopped without converging after {solution.iterations} iterations")
    distance = task.distance_to_target(solution.xs[-1, : task.plant.n_x])
    logger.info(
        f"{system}: cost {solution.cost:.6g} after {solution.iterations} iterations, "
        f"final distance to target {distance:.3f}",
    )
    writer = ArtifactWriter(out_dir)
    writer.write_trajectory(solution.trajectory, n_plant=task.plant.n_x)
    writer.write_solver_stats(solution, wall_time)
    return EXIT_OK


def cmd_mpc(config: dict[str, Any], out_dir: Path) -> int:
    """Monte Carlo campaign; ``algorithm: both`` runs the paired NT/DT comparison."""
    system = config.get("system", DEFAULT_SYSTEM)
    algorithm = config.get("algorithm", "dt_mpc")
    try:
        algorithms = ALGORITHMS if algorithm == "both" else (normalize_algorithm(algorithm),)
        campaigns = [
            CampaignConfig(
                system=system,
                algorithm=name,
                n_trials=config.get("trials", 50),
                base_seed=config.get("seed", 0),
                threads=config.get("threads", 1),
                task=task_config(system, config),
                mpc=mpc_settings(config),
            )
            for name in algorithms
        ]
    except ValueError as e:
        raise ConfigError(str(e)) from e

    results = [run_campaign(campaign) for campaign in campaigns]
    logger.info(SummaryFormatter.format_campaign_summary(results))
    ArtifactWriter(out_dir).write_campaign(results)
    if any(result.infrastructure_errors for result in results):
        logger.error("Some trials failed with infrastructure errors")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_gradcheck(config: dict[str, Any], out_dir: Path) -> int:
    """Route agreement checks and the Jacobian error sweep; exit 1 if any check fails."""
    system = config.get("system", DEFAULT_SYSTEM)
    seed = config.get("seed", 0)
    section = config.get("gradcheck", {})
    cfg = task_config(system, config)
    horizon = section.get("horizon", GRADCHECK_HORIZON)
    fd_step = section.get("fd_step", FD_STEP)
    try:
        checks = route_agreement_checks(
            system,
            cfg,
            horizon=horizon,
            seed=seed,
            fd_step=fd_step,
            fd_tolerance=section.get("fd_tolerance", 1e-3),
            pdp_tolerance=section.get("pdp_tolerance", 1e-8),
            inject_bundle_error=section.get("inject_bundle_error", False),
        )
        table = grad_precision_campaign(
            system,
            section.get("budgets", DEFAULT_BUDGETS),
            cfg,
            horizon=horizon,
            seed=seed,
            fd_step=fd_step,
        )
    except (InnerSolveFailedError, *DIVERGENCE_ERRORS) as e:
        logger.error(f"Gradient check could not run: {e}")
        return EXIT_FAILURE
    except ValueError as e:
        raise ConfigError(str(e)) from e
    checks.append(jacobian_trend_check(table))

    logger.info(SummaryFormatter.format_gradcheck(checks))
    ArtifactWriter(out_dir).write_gradcheck(checks, table)
    failed = [check for check in checks if not check.passed]
    if failed:
        logger.error(f"{len(failed)} gradient check(s) failed")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_bench(config: dict[str, Any], out_dir: Path) -> int:
    """Per-route timing table ordered by mean time."""
    system = config.get("system", DEFAULT_SYSTEM)
    section = config.get("bench", {})
    try:
        routes = [GradientRoute.parse(name) for name in section.get("routes", [])] or list(
            DEFAULT_ROUTES,
        )
    except ValueError as e:
        raise ConfigError(f"Unknown gradient route: {e}") from e
    try:
        table = timing_campaign(
            system,
            routes,
            reps=section.get("reps", 100),
            cfg=task_config(system, config),
            horizon=section.get("horizon"),
            seed=config.get("seed", 0),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    logger.info(f"Timing on {system}:\n{table.to_string(index=False)}")
    ArtifactWriter(out_dir).write_timing(table)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "mpc": cmd_mpc,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Path to a JSON experiment configuration")
    common.add_argument("--out", default="results", help="Output directory (default: results)")
    common.add_argument("--seed", type=int, help="Base seed, overrides the config")
    common.add_argument("--trials", type=int, help="Number of Monte Carlo trials")
    common.add_argument("--system", help="dubins, quadrotor or robot_arm")
    common.add_argument("--algo", help="dt-mpc, nt-mpc or both")
    common.add_argument("--threads", type=int, help="Worker processes for campaigns")

    parser = argparse.ArgumentParser(
        description="Differentiable tube MPC experiments",
    )
    parser.add_argument(
        "--verbose",
        "-v",
        action="store_true",
        help="Enable verbose logging (DEBUG level)",
    )
    parser.add_argument(
        "--version",
        action="store_true",
        help="Show version and exit",
    )
    subparsers = parser.add_subparsers(dest="command")
    subparsers.add_parser("solve", parents=[common], help="Solve one nominal trajectory problem")
    subparsers.add_parser("mpc", parents=[common], help="Run a tube MPC campaign")
    subparsers.add_parser("gradcheck", parents=[common], help="Check hypergradient routes")
    subparsers.add_parser("bench", parents=[common], help="Time hypergradient routes")
    return parser


def main():
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args()

    # Configure logging
    log_level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(
        level=log_level,
        format="%(levelname)s: %(message)s",
    )

    if args.version:
        logger.info(artifact_version())
        sys.exit(EXIT_OK)

    if args.command is None:
        parser.error("a subcommand is required (solve, mpc, gradcheck, bench)")

    out_dir = Path(args.out)
    try:
        config = effective_config(args)
        writer = ArtifactWriter(out_dir)
        writer.write_manifest(args.command, config, config.get("seed", 0), artifact_version())
        code = COMMANDS[args.command](config, out_dir)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        code = EXIT_CONFIG_ERROR
    except FileSavingError as e:
        logger.error(f"Error writing results: {e}")
        code = EXIT_FAILURE
    sys.exit(code)


if __name__ == "__main__":
    main()

"""
Monte Carlo campaigns, gradient-precision sweeps, route agreement and timing.
"""

import logging
import time
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib.metadata import PackageNotFoundError, version
from typing import Any

import numpy as np
import pandas as pd

from .barrier import BarrierConfig, BarrierKind
from .ddp import SolverSettings, compute_derivatives, solve
from .doc import (
    FD_STEP,
    LossSpec,
    doc_gradient,
    fd_hypergradient,
    hypergradient,
    imitation_loss,
    jacobian_error_experiment,
)
from .finite_difference import relative_error
from .models import (
    GradientRoute,
    HessianMode,
    Solution,
    TrialOutcome,
    TrialResult,
)
from .problem import FixedInitialState, OCProblem, TrackingCost
from .tasks import SYSTEMS, SystemTask, TaskConfig, build_task, default_task_config
from .tube_mpc import MpcSettings, TubeRunner, build_nominal_problem

logger = logging.getLogger(__name__)

ALGORITHMS = ("nt_mpc", "dt_mpc")
DEFAULT_BUDGETS = (1, 2, 3, 5, 8, 12, 20, 30, 50)
DEFAULT_ROUTES = (
    GradientRoute.DOC_GAUSS_NEWTON,
    GradientRoute.DOC_FULL,
    GradientRoute.PDP,
    GradientRoute.FINITE_DIFFERENCE,
)
MIN_TIMING_REPS = 10
GRADCHECK_HORIZON = 20


def artifact_version() -> str:
    try:
        return version("dtmpc")
    except PackageNotFoundError:
        return "unknown"


def normalize_algorithm(name: str) -> str:
    """Accept ``dt-mpc``/``DT_MPC`` spellings."""
    normalized = name.strip().lower().replace("-", "_")
    if normalized not in ALGORITHMS:
        raise ValueError(f"Unknown algorithm '{name}', expected one of {ALGORITHMS}")
    return normalized


@dataclass(frozen=True)
class CampaignConfig:
    """Monte Carlo campaign of one algorithm on one system."""

    system: str
    algorithm: str = "dt_mpc"
    n_trials: int = 50
    base_seed: int = 0
    threads: int = 1
    task: TaskConfig | None = None
    mpc: MpcSettings = field(default_factory=MpcSettings)

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"Unknown system '{self.system}', expected one of {SYSTEMS}")
        object.__setattr__(self, "algorithm", normalize_algorithm(self.algorithm))
        if self.n_trials < 1:
            raise ValueError(f"A campaign needs at least one trial, got {self.n_trials}")
        if self.base_seed < 0:
            raise ValueError(f"Base seed must be non-negative, got {self.base_seed}")
        if self.threads < 1:
            raise ValueError(f"Thread count must be positive, got {self.threads}")
        if self.task is None:
            object.__setattr__(self, "task", default_task_config(self.system))
        elif self.task.system != self.system:
            raise ValueError(
                f"Task settings are for '{self.task.system}', campaign is for '{self.system}'",
            )

    @property
    def task_config(self) -> TaskConfig:
        assert self.task is not None
        return self.task

    @property
    def adapt(self) -> bool:
        return self.algorithm == "dt_mpc"

    def trial_keys(self) -> list[tuple[int, int]]:
        """(seed, trial) pairs; identical for both algorithms under the same base seed."""
        return [(self.base_seed + i, i) for i in range(self.n_trials)]

    def to_dict(self) -> dict[str, Any]:
        mpc = asdict(self.mpc)
        mpc["route"] = self.mpc.route.value
        mpc["loss_variant"] = self.mpc.loss_variant.value
        return {
            "system": self.system,
            "algorithm": self.algorithm,
            "n_trials": self.n_trials,
            "base_seed": self.base_seed,
            "threads": self.threads,
            "task": self.task_config.to_dict(),
            "mpc": mpc,
        }


@dataclass
class CampaignResult:
    """Aggregated outcome of a campaign."""

    config: CampaignConfig
    trials: list[TrialResult]
    version: str = field(default_factory=artifact_version)

    def _count(self, predicate: Callable[[TrialOutcome], bool]) -> int:
        return sum(1 for trial in self.trials if predicate(trial.outcome))

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    @property
    def success_rate(self) -> float:
        return self._count(lambda o: o is TrialOutcome.SUCCESS) / self.n_trials

    @property
    def violation_rate(self) -> float:
        return self._count(lambda o: o.is_violation) / self.n_trials

    @property
    def timeout_rate(self) -> float:
        return self._count(lambda o: o is TrialOutcome.TIMEOUT) / self.n_trials

    @property
    def infrastructure_errors(self) -> list[TrialResult]:
        return [trial for trial in self.trials if trial.error is not None]

    def outcome_counts(self) -> dict[str, int]:
        return {o.value: self._count(lambda x, o=o: x is o) for o in TrialOutcome}

    def step_time_stats(self) -> tuple[float, float]:
        """Mean and 95th percentile of the per-step wall time in seconds."""
        times = [t for trial in self.trials for t in trial.step_times]
        if not times:
            return 0.0, 0.0
        return float(np.mean(times)), float(np.percentile(times, 95))

    def summary_row(self) -> dict[str, Any]:
        mean, p95 = self.step_time_stats()
        return {
            "system": self.config.system,
            "algorithm": self.config.algorithm,
            "n_trials": self.n_trials,
            "success_rate": self.success_rate,
            "violation_rate": self.violation_rate,
            "timeout_rate": self.timeout_rate,
            "step_time_mean": mean,
            "step_time_p95": p95,
        }

    def to_dict(self, include_timing: bool = True) -> dict[str, Any]:
        """JSON-ready form without step logs; with ``include_timing`` off the result is reproducible."""
        data: dict[str, Any] = {
            "version": self.version,
            "config": self.config.to_dict(),
            "success_rate": self.success_rate,
            "violation_rate": self.violation_rate,
            "timeout_rate": self.timeout_rate,
            "outcome_counts": self.outcome_counts(),
            "trials": [
                {
                    "trial": t.trial,
                    "seed": t.seed,
                    "outcome": t.outcome.value,
                    "steps": t.steps,
                    "error": t.error,
                }
                for t in self.trials
            ],
        }
        if include_timing:
            mean, p95 = self.step_time_stats()
            data["step_time_mean"] = mean
            data["step_time_p95"] = p95
        return data


def _failed_trial(seed: int, trial: int, error: BaseException) -> TrialResult:
    logger.error(f"Trial {trial} (seed {seed}) failed: {type(error).__name__}: {error}")
    return TrialResult(
        trial=trial,
        seed=seed,
        outcome=TrialOutcome.DIVERGED,
        steps=0,
        error=f"{type(error).__name__}: {error}",
    )


def _run_trial(runner: TubeRunner, seed: int, trial: int) -> TrialResult:
    try:
        return runner(seed, trial)
    except Exception as e:
        return _failed_trial(seed, trial, e)


def run_campaign(cfg: CampaignConfig) -> CampaignResult:
    """
    Run all trials of a campaign and aggregate their outcomes.

    Trial ``i`` uses the key (base_seed + i, i), so a DT-MPC and an NT-MPC
    campaign with the same base seed see identical disturbances and task
    randomization. Trials run in a process pool when ``threads > 1``; results
    are ordered by trial index regardless of completion order.
    """
    runner = TubeRunner(cfg=cfg.task_config, settings=cfg.mpc, adapt=cfg.adapt)
    keys = cfg.trial_keys()
    logger.info(
        f"Running {cfg.n_trials} {cfg.algorithm} trials on {cfg.system} "
        f"with {cfg.threads} worker(s)",
    )

    if cfg.threads == 1:
        trials = [_run_trial(runner, seed, trial) for seed, trial in keys]
    else:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            futures = [(seed, trial, pool.submit(runner, seed, trial)) for seed, trial in keys]
            trials = []
            for seed, trial, future in futures:
                try:
                    trials.append(future.result())
                except Exception as e:
                    trials.append(_failed_trial(seed, trial, e))

    result = CampaignResult(config=cfg, trials=sorted(trials, key=lambda t: t.trial))
    logger.info(
        f"{cfg.system} {cfg.algorithm}: success {result.success_rate:.0%}, "
        f"violations {result.violation_rate:.0%}",
    )
    return result


def safety_invariant_violations(result: CampaignResult) -> list[tuple[int, int]]:
    """
    (trial, step) pairs where the true state left the safe set while its barrier stayed finite.

    Only meaningful for the unrelaxed barriers; relaxed campaigns return no pairs.
    """
    task = result.config.task_config
    barrier = BarrierConfig(kind=BarrierKind(task.barrier_kind), alpha=task.alpha)
    if barrier.is_relaxed():
        return []
    return [
        (trial.trial, record.t)
        for trial in result.trials
        for record in trial.log
        if record.h_true <= 0 and np.isfinite(record.barrier_true)
    ]


def _task_for(
    system: str,
    cfg: TaskConfig | None,
    horizon: int | None,
    seed: int,
) -> SystemTask:
    cfg = cfg or default_task_config(system)
    if cfg.system != system:
        raise ValueError(f"Task settings are for '{cfg.system}', expected '{system}'")
    if horizon is not None:
        cfg = cfg.with_overrides({"horizon": horizon})
    return build_task(cfg, seed=seed, trial=0)


def plant_problem(task: SystemTask) -> OCProblem:
    """Nominal reach problem on the plant alone, without the barrier state."""
    cfg = task.config
    feature = task.nominal_feature
    target = np.asarray(cfg.target)[: feature.n_e]
    cost = TrackingCost(
        feature=feature,
        layout=task.nominal_layout,
        ref_features=np.tile(target, (cfg.horizon + 1, 1)),
        ref_controls=np.zeros((cfg.horizon, task.plant.n_u)),
        terminal_weights=np.asarray(cfg.nominal_qf),
    )
    return OCProblem(
        task.plant,
        cost,
        FixedInitialState(task.x0),
        task.nominal_theta0(),
        cfg.horizon,
        task.bounds,
    )


def nominal_problem(
    system: str,
    cfg: TaskConfig | None = None,
    horizon: int | None = None,
    seed: int = 0,
) -> OCProblem:
    """
    Nominal trajectory-optimization problem of a system from its start state.

    The robot arm problem omits the barrier state so that its dynamics stay
    linear; the other systems carry the safety-embedded dynamics.
    """
    task = _task_for(system, cfg, horizon, seed)
    if system == "robot_arm":
        return plant_problem(task)
    return build_nominal_problem(task, task.nominal_theta0(), task.x0)


def grad_precision_campaign(
    system: str,
    budgets: Iterable[int] = DEFAULT_BUDGETS,
    cfg: TaskConfig | None = None,
    horizon: int | None = GRADCHECK_HORIZON,
    seed: int = 0,
    fd_step: float = FD_STEP,
) -> pd.DataFrame:
    """Jacobian error of the full and Gauss-Newton routes along an iteration-budget sweep."""
    problem = nominal_problem(system, cfg, horizon, seed)
    logger.info(f"Jacobian error sweep on {system} over budgets {list(budgets)}")
    table = jacobian_error_experiment(problem, list(budgets), fd_step=fd_step)
    table.insert(0, "system", system)
    return table


@dataclass(frozen=True)
class AgreementCheck:
    """One pass/fail comparison between two gradient estimates."""

    name: str
    system: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "system": self.system,
            "value": self.value,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def perturbed_weights(problem: OCProblem) -> np.ndarray:
    """Cost weights scaled by 1.25 and shifted by 0.1; barrier entries untouched."""
    if not isinstance(problem.cost, TrackingCost):
        raise TypeError("Weight perturbation needs a tracking cost")
    layout = problem.cost.layout
    theta = problem.theta.copy()
    for block in (layout.q, layout.r):
        theta[block] = 1.25 * theta[block] + 0.1
    return theta


def expert_loss(problem: OCProblem, settings: SolverSettings | None = None) -> LossSpec:
    """Imitation loss toward the solution at perturbed cost weights."""
    settings = settings or SolverSettings.tight()
    expert = solve(problem.with_theta(perturbed_weights(problem)), settings=settings)
    return imitation_loss(expert.trajectory)


def _corrupted_doc_gradient(problem: OCProblem, solution: Solution, loss: LossSpec) -> np.ndarray:
    traj = solution.trajectory
    bundle = compute_derivatives(problem, traj, HessianMode.FULL_NEWTON)
    bundle = replace(bundle, lag_xtheta=2.0 * bundle.lag_xtheta + 1.0)
    grad_x, grad_u = loss.gradient(traj)
    return doc_gradient(bundle, grad_x, grad_u).grad_theta


def route_agreement_checks(
    system: str,
    cfg: TaskConfig | None = None,
    horizon: int | None = GRADCHECK_HORIZON,
    seed: int = 0,
    fd_step: float = FD_STEP,
    fd_tolerance: float = 1e-3,
    pdp_tolerance: float = 1e-8,
    inject_bundle_error: bool = False,
) -> list[AgreementCheck]:
    """
    Compare doc_full against the finite-difference oracle and the PDP route.

    ``inject_bundle_error`` corrupts the derivative bundle of the doc_full
    route; used to exercise the failure path.

    Raises:
        InnerSolveFailedError: If a tight or perturbed solve does not converge
    """
    problem = nominal_problem(system, cfg, horizon, seed)
    tight = SolverSettings.tight()
    solution = solve(problem, settings=tight)
    loss = expert_loss(problem, tight)

    if inject_bundle_error:
        logger.warning("Injecting a corrupted derivative bundle into the doc_full route")
        doc = _corrupted_doc_gradient(problem, solution, loss)
    else:
        doc = hypergradient(problem, solution, loss, GradientRoute.DOC_FULL).grad_theta
    pdp = hypergradient(problem, solution, loss, GradientRoute.PDP).grad_theta
    fd = fd_hypergradient(problem, loss, fd_step, tight, init=solution.trajectory).grad_theta

    checks = [
        AgreementCheck("doc_full_vs_fd", system, relative_error(doc, fd), fd_tolerance),
        AgreementCheck("doc_full_vs_pdp", system, relative_error(doc, pdp), pdp_tolerance),
    ]
    for check in checks:
        logger.info(
            f"{system} {check.name}: {check.value:.3e} "
            f"(tol {check.tolerance:.0e}) {'ok' if check.passed else 'FAILED'}",
        )
    return checks


def jacobian_trend_check(table: pd.DataFrame) -> AgreementCheck:
    """
    Full-route Jacobian error must not grow as the iterate error shrinks.

    Rows are ordered from the loosest to the tightest iterate; the check value
    is the largest step-to-step increase of ``err_doc_full`` along that order,
    allowed up to twice the finite-difference noise floor.
    """
    ordered = table.sort_values(["iterate_error", "budget"], ascending=[False, True])
    errors = ordered["err_doc_full"].to_numpy(dtype=float)
    worst = float(np.diff(errors).max(initial=0.0))
    floor = float(ordered["err_fd_floor"].max())
    system = str(ordered["system"].iloc[0]) if "system" in ordered else ""
    return AgreementCheck(
        name="jacobian_error_trend",
        system=system,
        value=worst,
        tolerance=2.0 * floor,
    )


def _time_calls(fn: Callable[[], object], reps: int) -> tuple[float, float]:
    samples = []
    for _ in range(reps):
        started = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - started)
    millis = 1e3 * np.asarray(samples)
    return float(np.mean(millis)), float(np.std(millis))


def timing_campaign(
    system: str,
    routes: Iterable[GradientRoute] = DEFAULT_ROUTES,
    reps: int = 100,
    cfg: TaskConfig | None = None,
    horizon: int | None = None,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Mean and standard deviation of the wall time per hypergradient call.

    A ``solver_iteration`` row times one DDP iteration from the solved
    trajectory. Rows are sorted by ascending mean time.

    Returns:
        DataFrame with columns route, mean_ms, std_ms, reps
    """
    if reps < MIN_TIMING_REPS:
        raise ValueError(f"Timing needs at least {MIN_TIMING_REPS} repetitions, got {reps}")
    problem = nominal_problem(system, cfg, horizon, seed)
    settings = SolverSettings(budget=100, tol=1e-8)
    solution = solve(problem, settings=settings)
    loss = expert_loss(problem, settings)
    one_iteration = SolverSettings(budget=1, tol=0.0)

    rows = []
    mean, std = _time_calls(
        lambda: solve(problem, solution.trajectory, settings=one_iteration),
        reps,
    )
    rows.append({"route": "solver_iteration", "mean_ms": mean, "std_ms": std, "reps": reps})
    for route in routes:
        mean, std = _time_calls(
            lambda route=route: hypergradient(problem, solution, loss, route, quiet=True),
            reps,
        )
        rows.append({"route": route.value, "mean_ms": mean, "std_ms": std, "reps": reps})
        logger.info(f"{system} {route.value}: {mean:.3f} ms +- {std:.3f}")

    table = pd.DataFrame(rows, columns=["route", "mean_ms", "std_ms", "reps"])
    return table.sort_values("mean_ms", kind="stable").reset_index(drop=True)

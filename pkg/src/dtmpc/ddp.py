"""
DDP / iLQR trajectory optimizer with box control limits.

The solver alternates a Riccati backward pass with a clamped forward rollout,
uses a backtracking line search and Levenberg-Marquardt regularization, and
returns the Lagrange multipliers of the converged trajectory so that the
hypergradient routes in ``dtmpc.doc`` can reuse them.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .barrier import BarrierDomainError
from .dynamics import SingularAttitudeError
from .models import (
    BackwardPassResult,
    DerivativeBundle,
    HessianMode,
    Solution,
    Trajectory,
)
from .problem import OCProblem

logger = logging.getLogger(__name__)

# Rollout failures that reject a line-search candidate instead of aborting the solve
ROLLOUT_ERRORS = (BarrierDomainError, SingularAttitudeError)


class NotPositiveDefiniteError(Exception):
    """Exception raised when a regularized Q_uu block fails Cholesky factorization."""


class NonFiniteStateError(Exception):
    """Exception raised when a rollout produces a non-finite state."""


@dataclass(frozen=True)
class SolverSettings:
    """Iteration budget, convergence test and regularization schedule."""

    budget: int = 10
    tol: float = 1e-3
    mode: HessianMode = HessianMode.GAUSS_NEWTON
    relative_tol: bool = False
    kkt_tol: float = np.inf
    reg_init: float = 1e-6
    reg_min: float = 1e-9
    reg_max: float = 1e10
    reg_increase: float = 10.0
    reg_decrease: float = 2.0
    max_backtracks: int = 10

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", HessianMode(self.mode))
        if self.budget < 1:
            raise ValueError(f"Solver budget must be at least 1, got {self.budget}")
        if self.tol < 0:
            raise ValueError(f"Solver tolerance must be non-negative, got {self.tol}")
        if self.reg_init < 0:
            raise ValueError("Initial regularization must be non-negative")

    @classmethod
    def tight(cls) -> "SolverSettings":
        """Settings for reference solves used by the finite-difference oracles."""
        return cls(budget=200, tol=1e-10, mode=HessianMode.FULL_NEWTON, kkt_tol=1e-8)

    def step_sizes(self) -> list[float]:
        return [2.0**-i for i in range(self.max_backtracks + 1)]


def rollout(problem: OCProblem, us: np.ndarray) -> Trajectory:
    """
    Roll controls through the model from x0(theta).

    Raises:
        NonFiniteStateError: If a state becomes non-finite
    """
    us = np.asarray(us, dtype=float)
    if problem.bounds is not None:
        us = problem.bounds.clip(us)
    xs = np.empty((problem.horizon + 1, problem.n_x))
    xs[0] = problem.x0()
    for k in range(problem.horizon):
        xs[k + 1] = problem.model.step(xs[k], us[k], problem.theta)
        if not np.all(np.isfinite(xs[k + 1])):
            raise NonFiniteStateError(f"Rollout diverged at step {k + 1}")
    return Trajectory(xs, us)


def total_cost(problem: OCProblem, traj: Trajectory) -> float:
    return problem.trajectory_cost(traj)


def active_set(
    problem: OCProblem,
    us: np.ndarray,
    grad_u: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Controls at a bound and the strictly active subset.

    A component is active when it sits at a bound and the gradient pushes it
    outward; a zero gradient counts as inactive.
    """
    shape = us.shape
    if problem.bounds is None:
        none = np.zeros(shape, dtype=bool)
        return none, none.copy(), none.copy()
    at_lower = us <= problem.bounds.lower
    at_upper = us >= problem.bounds.upper
    active = (at_lower & (grad_u > 0)) | (at_upper & (grad_u < 0))
    return at_lower, at_upper, active


def _multipliers(f_x: np.ndarray, l_x: np.ndarray, phi_x: np.ndarray) -> np.ndarray:
    horizon = f_x.shape[0]
    lambdas = np.empty((horizon + 1, phi_x.size))
    lambdas[horizon] = phi_x
    for k in reversed(range(horizon)):
        lambdas[k] = l_x[k] + f_x[k].T @ lambdas[k + 1]
    return lambdas


def _first_order(problem: OCProblem, traj: Trajectory):
    """Dynamics Jacobians and cost gradients along a trajectory."""
    theta = problem.theta
    horizon, n, m = problem.horizon, problem.n_x, problem.n_u
    f_x = np.empty((horizon, n, n))
    f_u = np.empty((horizon, n, m))
    running = []
    for k in range(horizon):
        f_x[k], f_u[k] = problem.model.jacobians(traj.xs[k], traj.us[k], theta)
        running.append(problem.cost.running_derivatives(traj.xs[k], traj.us[k], k, theta))
    terminal = problem.cost.terminal_derivatives(traj.xs[-1], theta)
    return f_x, f_u, running, terminal


def compute_multipliers(problem: OCProblem, traj: Trajectory) -> np.ndarray:
    """lambda_N = phi_x and lambda_k = l_x + f_x^T lambda_{k+1}."""
    f_x, _, running, terminal = _first_order(problem, traj)
    l_x = np.array([rd.l_x for rd in running])
    return _multipliers(f_x, l_x, terminal.phi_x)


def compute_derivatives(
    problem: OCProblem,
    traj: Trajectory,
    mode: HessianMode = HessianMode.GAUSS_NEWTON,
) -> DerivativeBundle:
    """
    Assemble dynamics and Lagrangian derivatives along a trajectory.

    In full-Newton mode the multiplier-weighted second derivatives of the
    dynamics are added to the cost Hessians.
    """
    theta = problem.theta
    horizon, n, m, p = problem.horizon, problem.n_x, problem.n_u, problem.n_theta
    f_x, f_u, running, terminal = _first_order(problem, traj)
    f_theta = np.empty((horizon, n, p))
    l_x = np.array([rd.l_x for rd in running]).reshape(horizon, n)
    l_u = np.array([rd.l_u for rd in running]).reshape(horizon, m)
    lag_xx = np.array([rd.l_xx for rd in running]).reshape(horizon, n, n)
    lag_ux = np.array([rd.l_ux for rd in running]).reshape(horizon, m, n)
    lag_uu = np.array([rd.l_uu for rd in running]).reshape(horizon, m, m)
    lag_xtheta = np.array([rd.l_xtheta for rd in running]).reshape(horizon, n, p)
    lag_utheta = np.array([rd.l_utheta for rd in running]).reshape(horizon, m, p)
    lambdas = _multipliers(f_x, l_x, terminal.phi_x)

    for k in range(horizon):
        f_theta[k] = problem.model.param_jacobian(traj.xs[k], traj.us[k], theta)
        if mode is HessianMode.FULL_NEWTON:
            terms = problem.model.lagrangian_hessians(
                traj.xs[k],
                traj.us[k],
                theta,
                lambdas[k + 1],
            )
            lag_xx[k] += terms.xx
            lag_ux[k] += terms.ux
            lag_uu[k] += terms.uu
            lag_xtheta[k] += terms.xtheta
            lag_utheta[k] += terms.utheta

    lag_xx = 0.5 * (lag_xx + lag_xx.transpose(0, 2, 1))
    lag_uu = 0.5 * (lag_uu + lag_uu.transpose(0, 2, 1))
    grad_u = l_u + np.einsum("kij,ki->kj", f_u, lambdas[1:])
    at_lower, at_upper, active = active_set(problem, traj.us, grad_u)

    return DerivativeBundle(
        mode=mode,
        f_x=f_x,
        f_u=f_u,
        f_theta=f_theta,
        l_x=l_x,
        l_u=l_u,
        lag_xx=lag_xx,
        lag_ux=lag_ux,
        lag_uu=lag_uu,
        lag_xtheta=lag_xtheta,
        lag_utheta=lag_utheta,
        phi_x=terminal.phi_x,
        phi_xx=0.5 * (terminal.phi_xx + terminal.phi_xx.T),
        phi_xtheta=terminal.phi_xtheta,
        xi_theta=problem.initial.jacobian(theta),
        lambdas=lambdas,
        at_lower=at_lower,
        at_upper=at_upper,
        active=active,
    )


def riccati_step(
    q_x: np.ndarray,
    q_u: np.ndarray,
    q_xx: np.ndarray,
    q_ux: np.ndarray,
    q_uu: np.ndarray,
    free: np.ndarray,
    reg: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    One step of the Riccati recursion restricted to the free controls.

    ``q_u`` may be a vector or a matrix with one column per parameter; the
    feedforward term and V_x take the same trailing shape.

    Returns:
        Tuple (k, K, V_x, V_xx); rows of k and K for fixed controls are zero

    Raises:
        NotPositiveDefiniteError: If Q_uu + reg I on the free block is not positive definite
    """
    k = np.zeros_like(q_u, dtype=float)
    feedback = np.zeros_like(q_ux, dtype=float)
    idx = np.flatnonzero(free)
    if idx.size:
        block = q_uu[np.ix_(idx, idx)] + reg * np.eye(idx.size)
        try:
            factor = cho_factor(block)
        except (LinAlgError, ValueError) as e:
            raise NotPositiveDefiniteError(
                f"Q_uu not positive definite with regularization {reg:.1e}",
            ) from e
        k[idx] = -cho_solve(factor, q_u[idx])
        feedback[idx] = -cho_solve(factor, q_ux[idx])
    v_x = q_x + q_ux.T @ k
    v_xx = q_xx + q_ux.T @ feedback
    return k, feedback, v_x, 0.5 * (v_xx + v_xx.T)


def backward_pass(bundle: DerivativeBundle, reg: float) -> BackwardPassResult:
    """
    Riccati sweep from the terminal cost to step 0.

    Controls clamped at a bound whose Q_u pushes further outward are held
    fixed in the feedforward and feedback gains.

    Raises:
        NotPositiveDefiniteError: If any regularized Q_uu fails factorization
    """
    if reg < 0:
        raise ValueError(f"Regularization must be non-negative, got {reg}")
    horizon, n, m = bundle.horizon, bundle.n_x, bundle.n_u
    feedforward = np.zeros((horizon, m))
    feedback = np.zeros((horizon, m, n))
    v_x = np.zeros((horizon + 1, n))
    v_xx = np.zeros((horizon + 1, n, n))
    v_x[horizon] = bundle.phi_x
    v_xx[horizon] = bundle.phi_xx
    expected_linear = 0.0
    expected_quadratic = 0.0
    needed_regularization = False

    for k in reversed(range(horizon)):
        f_x, f_u = bundle.f_x[k], bundle.f_u[k]
        q_x = bundle.l_x[k] + f_x.T @ v_x[k + 1]
        q_u = bundle.l_u[k] + f_u.T @ v_x[k + 1]
        q_xx = bundle.lag_xx[k] + f_x.T @ v_xx[k + 1] @ f_x
        q_ux = bundle.lag_ux[k] + f_u.T @ v_xx[k + 1] @ f_x
        q_uu = bundle.lag_uu[k] + f_u.T @ v_xx[k + 1] @ f_u
        q_uu = 0.5 * (q_uu + q_uu.T)
        clamped = (bundle.at_upper[k] & (q_u < 0)) | (bundle.at_lower[k] & (q_u > 0))
        free = ~clamped

        if np.any(free):
            block = q_uu[np.ix_(free, free)]
            needed_regularization |= bool(np.linalg.eigvalsh(block).min() <= 0)

        k_ff, k_fb, v_x[k], v_xx[k] = riccati_step(q_x, q_u, q_xx, q_ux, q_uu, free, reg)
        feedforward[k] = k_ff
        feedback[k] = k_fb
        expected_linear += float(k_ff @ q_u)
        expected_quadratic += 0.5 * float(k_ff @ q_uu @ k_ff)

    return BackwardPassResult(
        feedforward=feedforward,
        feedback=feedback,
        v_x=v_x,
        v_xx=v_xx,
        expected_linear=expected_linear,
        expected_quadratic=expected_quadratic,
        needed_regularization=needed_regularization,
    )


def forward_pass(
    problem: OCProblem,
    traj: Trajectory,
    gains: BackwardPassResult,
    step_size: float,
) -> Trajectory:
    """
    Roll out u_k = u_k + a k_k + K_k (x_k - x_k_old), clamped to the bounds.

    Raises:
        NonFiniteStateError: If the rollout diverges
    """
    if not 0.0 <= step_size <= 1.0:
        raise ValueError(f"Step size must lie in [0, 1], got {step_size}")
    xs = np.empty_like(traj.xs)
    us = np.empty_like(traj.us)
    xs[0] = problem.x0()
    for k in range(problem.horizon):
        u = (
            traj.us[k]
            + step_size * gains.feedforward[k]
            + gains.feedback[k] @ (xs[k] - traj.xs[k])
        )
        us[k] = problem.bounds.clip(u) if problem.bounds is not None else u
        xs[k + 1] = problem.model.step(xs[k], us[k], problem.theta)
        if not np.all(np.isfinite(xs[k + 1])):
            raise NonFiniteStateError(f"Forward pass diverged at step {k + 1}")
    return Trajectory(xs, us)


def kkt_residual(problem: OCProblem, solution: Solution) -> float:
    """
    First-order optimality residual of a solution.

    Maximum stationarity violation |l_u + f_u^T lambda_{k+1}| over inactive
    control components plus the maximum violation of the multiplier recursion.
    """
    traj = solution.trajectory
    f_x, f_u, running, terminal = _first_order(problem, traj)
    lambdas = solution.lambdas
    l_u = np.array([rd.l_u for rd in running]).reshape(problem.horizon, problem.n_u)
    grad_u = l_u + np.einsum("kij,ki->kj", f_u, lambdas[1:])
    _, _, active = active_set(problem, traj.us, grad_u)
    stationarity = float(np.max(np.abs(np.where(active, 0.0, grad_u)), initial=0.0))

    recursion = float(np.max(np.abs(lambdas[-1] - terminal.phi_x)))
    for k in range(problem.horizon):
        residual = lambdas[k] - running[k].l_x - f_x[k].T @ lambdas[k + 1]
        recursion = max(recursion, float(np.max(np.abs(residual))))
    return stationarity + recursion


def _initial_trajectory(problem: OCProblem, init: Trajectory | np.ndarray | None) -> Trajectory:
    """Roll the warm start; fall back to holding controls if it is unusable."""
    if init is None:
        return rollout(problem, problem.zero_controls())
    us = init.us if isinstance(init, Trajectory) else np.asarray(init, dtype=float)
    if us.shape != (problem.horizon, problem.n_u):
        raise ValueError(
            f"Warm start has shape {us.shape}, expected {(problem.horizon, problem.n_u)}",
        )
    try:
        return rollout(problem, us)
    except (NonFiniteStateError, *ROLLOUT_ERRORS) as e:
        logger.warning(f"Warm start unusable ({e}); restarting from hold controls")
        return rollout(problem, problem.zero_controls())


def _make_solution(
    problem: OCProblem,
    traj: Trajectory,
    cost: float,
    iterations: int,
    converged: bool,
    reg: float,
    budget: int,
) -> Solution:
    lambdas = compute_multipliers(problem, traj)
    draft = Solution(traj.xs, traj.us, lambdas, cost, iterations, converged, 0.0)
    return Solution(
        xs=traj.xs,
        us=traj.us,
        lambdas=lambdas,
        cost=cost,
        iterations=iterations,
        converged=converged,
        kkt_residual=kkt_residual(problem, draft),
        reg=reg,
        budget_exhausted=not converged and iterations >= budget,
    )


def _stationary(problem: OCProblem, traj: Trajectory, settings: SolverSettings) -> bool:
    if not np.isfinite(settings.kkt_tol):
        return True
    lambdas = compute_multipliers(problem, traj)
    draft = Solution(traj.xs, traj.us, lambdas, 0.0, 0, False, 0.0)
    return kkt_residual(problem, draft) <= settings.kkt_tol


def solve(
    problem: OCProblem,
    init: Trajectory | np.ndarray | None = None,
    budget: int | None = None,
    tol: float | None = None,
    settings: SolverSettings | None = None,
) -> Solution:
    """
    Optimize a trajectory within an iteration budget.

    Every backward-pass attempt counts as one iteration. Convergence is
    declared when the accepted cost decrease drops below ``tol`` (and, if
    configured, the KKT residual is below ``kkt_tol``). Running out of budget
    is not an error: the best iterate is returned with ``budget_exhausted``.

    Args:
        problem: Problem to solve
        init: Warm start; only its controls are used
        budget: Iteration budget, overrides ``settings.budget``
        tol: Convergence tolerance, overrides ``settings.tol``
        settings: Solver settings

    Returns:
        Solution with multipliers and convergence metadata
    """
    settings = settings or SolverSettings()
    budget = settings.budget if budget is None else budget
    tol = settings.tol if tol is None else tol
    if budget < 1:
        raise ValueError(f"Solver budget must be at least 1, got {budget}")

    traj = _initial_trajectory(problem, init)
    cost = total_cost(problem, traj)
    if not np.isfinite(cost):
        raise NonFiniteStateError("Initial trajectory has non-finite cost")

    reg = settings.reg_init
    iterations = 0
    converged = False
    bundle = None
    while iterations < budget:
        iterations += 1
        if bundle is None:
            bundle = compute_derivatives(problem, traj, settings.mode)
        try:
            gains = backward_pass(bundle, reg)
        except NotPositiveDefiniteError:
            reg *= settings.reg_increase
            logger.debug(f"iter {iterations}: backward pass failed, reg -> {reg:.1e}")
            if reg > settings.reg_max:
                logger.warning("Regularization exceeded its limit; stopping")
                break
            continue

        threshold = tol * max(1.0, abs(cost)) if settings.relative_tol else tol
        slack = 1e-13 * max(1.0, abs(cost))
        accepted = None
        for step_size in settings.step_sizes():
            try:
                candidate = forward_pass(problem, traj, gains, step_size)
            except (NonFiniteStateError, *ROLLOUT_ERRORS):
                continue
            candidate_cost = total_cost(problem, candidate)
            if np.isfinite(candidate_cost) and candidate_cost <= cost + slack:
                accepted = (step_size, candidate, candidate_cost)
                break

        if accepted is None:
            if abs(gains.expected_improvement(1.0)) < threshold and _stationary(
                problem,
                traj,
                settings,
            ):
                converged = True
                break
            reg *= settings.reg_increase
            logger.debug(f"iter {iterations}: line search failed, reg -> {reg:.1e}")
            if reg > settings.reg_max:
                logger.warning("Regularization exceeded its limit; stopping")
                break
            continue

        step_size, traj, new_cost = accepted
        decrease = cost - new_cost
        cost = new_cost
        bundle = None
        if step_size == 1.0:
            reg = max(reg / settings.reg_decrease, settings.reg_min)
        logger.debug(
            f"iter {iterations}: cost {cost:.10g}, decrease {decrease:.3e}, "
            f"step {step_size:g}, reg {reg:.1e}",
        )
        if decrease < threshold and _stationary(problem, traj, settings):
            converged = True
            break

    solution = _make_solution(problem, traj, cost, iterations, converged, reg, budget)
    if solution.budget_exhausted:
        logger.debug(f"Budget of {budget} iterations exhausted at cost {cost:.6g}")
    return solution

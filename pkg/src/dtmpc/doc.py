"""
Hypergradients of an upper-level loss through a trajectory-optimization solve.

Routes:
    doc_full          loss-driven Riccati sweep plus a gradient-accumulating
                      forward pass, full Lagrangian Hessian
    doc_gauss_newton  same sweep with the second-order dynamics terms dropped
    pdp               full solution Jacobian d z*/d theta, then contraction
    finite_difference central differences of L(solve(theta))
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .ddp import (
    NotPositiveDefiniteError,
    SolverSettings,
    compute_derivatives,
    riccati_step,
    solve,
)
from .finite_difference import central_difference
from .models import (
    DeltaZ,
    DerivativeBundle,
    DocBackwardOutput,
    GradientRoute,
    HessianMode,
    Hypergradient,
    Solution,
    SolutionJacobian,
    Trajectory,
)
from .problem import OCProblem

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
STATIONARITY_THRESHOLD = 1e-2
REGULARIZATION_LADDER = (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


class InnerSolveFailedError(Exception):
    """Exception raised when a perturbed inner solve does not converge."""


@dataclass(frozen=True)
class LossSpec:
    """Upper-level loss on a trajectory and its per-step gradients."""

    value: Callable[[Trajectory], float]
    gradient: Callable[[Trajectory], tuple[np.ndarray, np.ndarray]]


def imitation_loss(expert: Trajectory) -> LossSpec:
    """Squared distance to a demonstration trajectory."""

    def value(traj: Trajectory) -> float:
        return float(np.sum((traj.xs - expert.xs) ** 2) + np.sum((traj.us - expert.us) ** 2))

    def gradient(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
        return 2.0 * (traj.xs - expert.xs), 2.0 * (traj.us - expert.us)

    return LossSpec(value=value, gradient=gradient)


def _q_blocks(bundle: DerivativeBundle, k: int, v_xx_next: np.ndarray):
    f_x, f_u = bundle.f_x[k], bundle.f_u[k]
    q_xx = bundle.lag_xx[k] + f_x.T @ v_xx_next @ f_x
    q_ux = bundle.lag_ux[k] + f_u.T @ v_xx_next @ f_x
    q_uu = bundle.lag_uu[k] + f_u.T @ v_xx_next @ f_u
    return q_xx, q_ux, 0.5 * (q_uu + q_uu.T)


def doc_backward(
    bundle: DerivativeBundle,
    grad_x: np.ndarray,
    grad_u: np.ndarray,
    reg: float = 0.0,
) -> DocBackwardOutput:
    """
    Riccati sweep driven by the loss gradient instead of the cost gradient.

    Args:
        bundle: Derivatives at the solution
        grad_x: Loss gradient per state, shape (N+1, n)
        grad_u: Loss gradient per control, shape (N, m)
        reg: Regularization added to Q_uu

    Returns:
        Loss-driven value gradients, V_xx and the gains

    Raises:
        NotPositiveDefiniteError: If a Q_uu block fails factorization
    """
    horizon, n, m = bundle.horizon, bundle.n_x, bundle.n_u
    v_x_tilde = np.zeros((horizon + 1, n))
    v_xx = np.zeros((horizon + 1, n, n))
    k_tilde = np.zeros((horizon, m))
    feedback = np.zeros((horizon, m, n))
    v_x_tilde[horizon] = grad_x[horizon]
    v_xx[horizon] = bundle.phi_xx

    for k in reversed(range(horizon)):
        q_x = grad_x[k] + bundle.f_x[k].T @ v_x_tilde[k + 1]
        q_u = grad_u[k] + bundle.f_u[k].T @ v_x_tilde[k + 1]
        q_xx, q_ux, q_uu = _q_blocks(bundle, k, v_xx[k + 1])
        k_tilde[k], feedback[k], v_x_tilde[k], v_xx[k] = riccati_step(
            q_x,
            q_u,
            q_xx,
            q_ux,
            q_uu,
            ~bundle.active[k],
            reg,
        )
    return DocBackwardOutput(v_x_tilde=v_x_tilde, v_xx=v_xx, k_tilde=k_tilde, feedback=feedback)


def doc_forward(
    bundle: DerivativeBundle,
    bp: DocBackwardOutput,
    store_delta_z: bool = False,
) -> Hypergradient:
    """
    Roll the variation forward and accumulate the parameter gradient.

    Only the current variation is kept unless ``store_delta_z`` is set. The
    route of the result follows the Hessian mode of ``bundle``.
    """
    horizon = bundle.horizon
    dx = np.zeros(bundle.n_x)
    dlam = bp.v_x_tilde[0]
    grad = bundle.xi_theta.T @ dlam
    stored = None
    if store_delta_z:
        stored = DeltaZ(
            dx=np.zeros((horizon + 1, bundle.n_x)),
            du=np.zeros((horizon, bundle.n_u)),
            dlam=np.zeros((horizon + 1, bundle.n_x)),
        )
        stored.dlam[0] = dlam

    for k in range(horizon):
        du = bp.k_tilde[k] + bp.feedback[k] @ dx
        du[bundle.active[k]] = 0.0
        dx_next = bundle.f_x[k] @ dx + bundle.f_u[k] @ du
        dlam = bp.v_x_tilde[k + 1] + bp.v_xx[k + 1] @ dx_next
        grad = (
            grad
            + bundle.lag_xtheta[k].T @ dx
            + bundle.lag_utheta[k].T @ du
            + bundle.f_theta[k].T @ dlam
        )
        if stored is not None:
            stored.du[k] = du
            stored.dx[k + 1] = dx_next
            stored.dlam[k + 1] = dlam
        dx = dx_next

    grad = grad + bundle.phi_xtheta.T @ dx
    route = (
        GradientRoute.DOC_FULL
        if bundle.mode is HessianMode.FULL_NEWTON
        else GradientRoute.DOC_GAUSS_NEWTON
    )
    return Hypergradient(grad_theta=grad, route=route, delta_z=stored)


def _with_regularization(fn: Callable[[float], object]):
    """Call ``fn(reg)`` with increasing regularization until Q_uu factors."""
    error = None
    for reg in REGULARIZATION_LADDER:
        try:
            result = fn(reg)
        except NotPositiveDefiniteError as e:
            error = e
            continue
        if reg > 0:
            logger.debug(f"Gradient sweep needed regularization {reg:.0e}")
        return result
    raise NotPositiveDefiniteError("Q_uu not positive definite at the solution") from error


def doc_gradient(
    bundle: DerivativeBundle,
    grad_x: np.ndarray,
    grad_u: np.ndarray,
    store_delta_z: bool = False,
) -> Hypergradient:
    """Backward and forward DOC sweeps on a prepared bundle."""
    bp = _with_regularization(lambda reg: doc_backward(bundle, grad_x, grad_u, reg))
    return doc_forward(bundle, bp, store_delta_z=store_delta_z)


def pdp_jacobian(
    problem: OCProblem,
    solution: Solution,
    mode: HessianMode = HessianMode.FULL_NEWTON,
) -> SolutionJacobian:
    """
    Full sensitivity of the solution to theta by a matrix Riccati recursion.

    Raises:
        NotPositiveDefiniteError: If a Q_uu block fails factorization
    """
    bundle = compute_derivatives(problem, solution.trajectory, mode)
    return _with_regularization(lambda reg: _pdp_sweeps(bundle, reg))


def _pdp_sweeps(bundle: DerivativeBundle, reg: float) -> SolutionJacobian:
    horizon, n, m, p = bundle.horizon, bundle.n_x, bundle.n_u, bundle.n_theta
    v_xtheta = bundle.phi_xtheta.copy()
    v_xx = bundle.phi_xx.copy()
    ff = np.zeros((horizon, m, p))
    fb = np.zeros((horizon, m, n))

    for k in reversed(range(horizon)):
        carry = v_xx @ bundle.f_theta[k] + v_xtheta
        q_xtheta = bundle.lag_xtheta[k] + bundle.f_x[k].T @ carry
        q_utheta = bundle.lag_utheta[k] + bundle.f_u[k].T @ carry
        q_xx, q_ux, q_uu = _q_blocks(bundle, k, v_xx)
        ff[k], fb[k], v_xtheta, v_xx = riccati_step(
            q_xtheta,
            q_utheta,
            q_xx,
            q_ux,
            q_uu,
            ~bundle.active[k],
            reg,
        )

    dx = np.zeros((horizon + 1, n, p))
    du = np.zeros((horizon, m, p))
    dx[0] = bundle.xi_theta
    for k in range(horizon):
        du[k] = ff[k] + fb[k] @ dx[k]
        du[k][bundle.active[k]] = 0.0
        dx[k + 1] = bundle.f_x[k] @ dx[k] + bundle.f_u[k] @ du[k] + bundle.f_theta[k]
    return SolutionJacobian(dx=dx, du=du)


def _solve_at(
    problem: OCProblem,
    theta: np.ndarray,
    settings: SolverSettings,
    init: Trajectory | None,
) -> Solution:
    solution = solve(problem.with_theta(theta), init, settings=settings)
    if not solution.converged:
        raise InnerSolveFailedError(
            f"Inner solve did not converge after {solution.iterations} iterations "
            f"(kkt {solution.kkt_residual:.2e})",
        )
    return solution


def fd_hypergradient(
    problem: OCProblem,
    loss: LossSpec,
    step: float = FD_STEP,
    settings: SolverSettings | None = None,
    init: Trajectory | None = None,
) -> Hypergradient:
    """
    Central differences of L(solve(theta)) over each theta component.

    Raises:
        InnerSolveFailedError: If a perturbed solve does not converge
    """
    if step <= 0:
        raise ValueError(f"Finite-difference step must be positive, got {step}")
    settings = settings or SolverSettings.tight()

    def objective(theta: np.ndarray) -> float:
        return loss.value(_solve_at(problem, theta, settings, init).trajectory)

    grad = central_difference(objective, problem.theta, step)
    return Hypergradient(grad_theta=grad, route=GradientRoute.FINITE_DIFFERENCE)


def fd_solution_jacobian(
    problem: OCProblem,
    step: float = FD_STEP,
    settings: SolverSettings | None = None,
    init: Trajectory | None = None,
) -> SolutionJacobian:
    """Central-difference estimate of d z*/d theta."""
    settings = settings or SolverSettings.tight()
    horizon, n, m = problem.horizon, problem.n_x, problem.n_u

    def stacked(theta: np.ndarray) -> np.ndarray:
        solution = _solve_at(problem, theta, settings, init)
        return np.concatenate([solution.xs.ravel(), solution.us.ravel()])

    jac = central_difference(stacked, problem.theta, step)
    split = (horizon + 1) * n
    return SolutionJacobian(
        dx=jac[:split].reshape(horizon + 1, n, -1),
        du=jac[split:].reshape(horizon, m, -1),
    )


def hypergradient(
    problem: OCProblem,
    solution: Solution,
    loss: LossSpec,
    route: GradientRoute = GradientRoute.DOC_FULL,
    store_delta_z: bool = False,
    fd_step: float = FD_STEP,
    fd_settings: SolverSettings | None = None,
    quiet: bool = False,
) -> Hypergradient:
    """
    Gradient of ``loss`` with respect to ``problem.theta`` at ``solution``.

    Iterates that are not stationary are accepted with a warning (debug level
    when ``quiet``); the gradient error grows with the distance to the optimum.
    """
    if solution.kkt_residual > STATIONARITY_THRESHOLD:
        log = logger.debug if quiet else logger.warning
        log(
            f"Hypergradient at non-stationary iterate (kkt {solution.kkt_residual:.2e})",
        )
    traj = solution.trajectory

    if route.is_doc:
        mode = (
            HessianMode.FULL_NEWTON if route is GradientRoute.DOC_FULL else HessianMode.GAUSS_NEWTON
        )
        bundle = compute_derivatives(problem, traj, mode)
        grad_x, grad_u = loss.gradient(traj)
        return doc_gradient(bundle, grad_x, grad_u, store_delta_z=store_delta_z)

    if route is GradientRoute.PDP:
        grad_x, grad_u = loss.gradient(traj)
        jac = pdp_jacobian(problem, solution, HessianMode.FULL_NEWTON)
        return Hypergradient(grad_theta=jac.contract(grad_x, grad_u), route=route)

    return fd_hypergradient(problem, loss, fd_step, fd_settings, init=traj)


def jacobian_error_experiment(
    problem: OCProblem,
    iter_grid: list[int],
    init: Trajectory | None = None,
    fd_step: float = FD_STEP,
    settings: SolverSettings | None = None,
) -> pd.DataFrame:
    """
    Solution-Jacobian error of the full and Gauss-Newton routes along a budget sweep.

    The ground truth is a finite-difference Jacobian around a tight solve; the
    noise floor is the disagreement between two finite-difference step sizes.

    Returns:
        DataFrame with columns budget, iterate_error, err_doc_full,
        err_gauss_newton, err_fd_floor
    """
    tight = settings or SolverSettings.tight()
    reference = solve(problem, init, settings=tight)
    if not reference.converged:
        raise InnerSolveFailedError("Reference solve did not converge")
    truth = fd_solution_jacobian(problem, fd_step, tight, init=reference.trajectory).stacked()
    coarse = fd_solution_jacobian(problem, 10 * fd_step, tight, init=reference.trajectory)
    floor = float(np.linalg.norm(truth - coarse.stacked()))
    z_ref = np.concatenate([reference.xs.ravel(), reference.us.ravel()])

    rows = []
    for budget in sorted(iter_grid):
        sweep = SolverSettings(budget=budget, tol=0.0, mode=HessianMode.GAUSS_NEWTON)
        iterate = solve(problem, init, settings=sweep)
        z = np.concatenate([iterate.xs.ravel(), iterate.us.ravel()])
        full = pdp_jacobian(problem, iterate, HessianMode.FULL_NEWTON).stacked()
        gauss_newton = pdp_jacobian(problem, iterate, HessianMode.GAUSS_NEWTON).stacked()
        rows.append(
            {
                "budget": budget,
                "iterate_error": float(np.linalg.norm(z - z_ref)),
                "err_doc_full": float(np.linalg.norm(full - truth)),
                "err_gauss_newton": float(np.linalg.norm(gauss_newton - truth)),
                "err_fd_floor": floor,
            },
        )
        logger.debug(f"budget {budget}: {rows[-1]}")
    return pd.DataFrame(
        rows,
        columns=["budget", "iterate_error", "err_doc_full", "err_gauss_newton", "err_fd_floor"],
    )

"""Shared builders for the numerical tests."""

import numpy as np

from dtmpc.dynamics import LinearModel
from dtmpc.models import ControlBounds
from dtmpc.problem import FixedInitialState, IdentityFeature, OCProblem, ParameterLayout, TrackingCost


def lq_problem(
    n_x: int = 3,
    n_u: int = 2,
    horizon: int = 8,
    seed: int = 0,
    bounds: ControlBounds | None = None,
) -> OCProblem:
    """Random stable linear-quadratic tracking problem; theta = [q, r, q_b, gamma, alpha]."""
    rng = np.random.default_rng(seed)
    a = np.eye(n_x) + 0.1 * rng.standard_normal((n_x, n_x))
    b = 0.5 * rng.standard_normal((n_x, n_u))
    layout = ParameterLayout(n_q=n_x, n_u=n_u)
    theta = layout.pack(
        rng.uniform(0.5, 2.0, n_x),
        rng.uniform(0.5, 2.0, n_u),
        0.0,
        0.0,
        0.0,
    )
    cost = TrackingCost(
        feature=IdentityFeature(n_x),
        layout=layout,
        ref_features=rng.standard_normal((horizon + 1, n_x)),
        ref_controls=np.zeros((horizon, n_u)),
    )
    x0 = rng.standard_normal(n_x)
    return OCProblem(LinearModel(a, b), cost, FixedInitialState(x0), theta, horizon, bounds)


def _lq_matrices(problem: OCProblem):
    model = problem.model
    horizon, n, m = problem.horizon, problem.n_x, problem.n_u
    x0 = problem.x0()
    phi = np.zeros(((horizon + 1) * n,))
    gamma = np.zeros(((horizon + 1) * n, horizon * m))
    power = np.eye(n)
    for k in range(horizon + 1):
        phi[k * n : (k + 1) * n] = power @ x0
        for i in range(k):
            block = np.linalg.matrix_power(model.a, k - 1 - i) @ model.b
            gamma[k * n : (k + 1) * n, i * m : (i + 1) * m] = block
        power = model.a @ power
    return phi, gamma


def lq_dense_solution(problem: OCProblem) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Unconstrained optimum of an LQ tracking problem by one dense solve.

    Returns:
        Tuple (xs, us, hessian, weights) with the reduced Hessian in the
        stacked controls and the stacked state weights
    """
    layout = problem.cost.layout
    cost = problem.cost
    horizon, n, m = problem.horizon, problem.n_x, problem.n_u
    phi, gamma = _lq_matrices(problem)
    weights = np.tile(problem.theta[layout.q], horizon + 1)
    r_diag = np.tile(problem.theta[layout.r], horizon)
    offset = phi - cost.ref_features.ravel()
    hessian = gamma.T @ (weights[:, None] * gamma) + np.diag(r_diag)
    us = np.linalg.solve(hessian, -gamma.T @ (weights * offset))
    xs = phi + gamma @ us
    return xs.reshape(horizon + 1, n), us.reshape(horizon, m), hessian, weights


def lq_dense_jacobian(problem: OCProblem) -> tuple[np.ndarray, np.ndarray]:
    """d xs / d theta and d us / d theta of the unconstrained LQ optimum."""
    layout = problem.cost.layout
    cost = problem.cost
    horizon, n, m, p = problem.horizon, problem.n_x, problem.n_u, problem.n_theta
    phi, gamma = _lq_matrices(problem)
    xs, us, hessian, _ = lq_dense_solution(problem)
    us_flat = us.ravel()
    offset = xs.ravel() - cost.ref_features.ravel()

    du = np.zeros((horizon * m, p))
    for j in range(n):
        selector = np.tile(np.eye(n)[j], horizon + 1)
        rhs = gamma.T @ (selector * offset)
        du[:, layout.q.start + j] = -np.linalg.solve(hessian, rhs)
    for j in range(m):
        selector = np.tile(np.eye(m)[j], horizon)
        du[:, layout.r.start + j] = -np.linalg.solve(hessian, selector * us_flat)
    dx = gamma @ du
    return dx.reshape(horizon + 1, n, p), du.reshape(horizon, m, p)

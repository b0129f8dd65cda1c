"""
Barrier functions, discrete barrier states and the safety-embedded system.

The barrier state b follows

    b_{k+1} = S(f(x_k, u_k)) - gamma * (S(x_k) - b_k),

where S(x) is the sum of the barrier values B(h_j(x)) over all constraint
components of the safety function. The embedded model propagates (x, b) and
exposes gamma and alpha as entries of theta.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dynamics import (
    DynamicsModel,
    SafetyFunction,
    SecondOrderTerms,
    theta_size,
)
from .problem import InitialCondition

logger = logging.getLogger(__name__)


class BarrierDomainError(Exception):
    """Exception raised when an unrelaxed barrier is evaluated outside the safe set."""


class BarrierKind(Enum):
    """Barrier function family."""

    INVERSE = "inverse"
    LOG = "log"
    RELAXED_INVERSE = "relaxed_inverse"


@dataclass(frozen=True)
class BarrierConfig:
    """Barrier type and its parameters."""

    kind: BarrierKind = BarrierKind.RELAXED_INVERSE
    alpha: float = 0.0
    gamma: float = 0.0
    q_b: float = 1.0

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", BarrierKind(self.kind))
        if not -1.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [-1, 1], got {self.gamma}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.q_b < 0:
            raise ValueError(f"q_b must be non-negative, got {self.q_b}")

    def is_relaxed(self, alpha: float | None = None) -> bool:
        alpha = self.alpha if alpha is None else alpha
        return self.kind is BarrierKind.RELAXED_INVERSE and alpha > 0


@dataclass(frozen=True)
class BarrierTerms:
    """Barrier value and derivatives, elementwise over constraint values."""

    value: np.ndarray
    d_zeta: np.ndarray
    d2_zeta: np.ndarray
    d_alpha: np.ndarray
    d2_alpha_zeta: np.ndarray


def barrier_terms(kind: BarrierKind, zeta: np.ndarray, alpha: float = 0.0) -> BarrierTerms:
    """
    Evaluate the barrier family on an array of constraint values.

    Raises:
        BarrierDomainError: If an unrelaxed barrier meets zeta <= 0
    """
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    relaxed = kind is BarrierKind.RELAXED_INVERSE and alpha > 0
    below = zeta < alpha if relaxed else np.zeros(zeta.shape, dtype=bool)
    if not relaxed and np.any(zeta <= 0):
        raise BarrierDomainError(f"Barrier evaluated at non-positive value {zeta.min():.6g}")

    zero = np.zeros_like(zeta)
    safe = np.where(below, 1.0, zeta)
    if kind is BarrierKind.LOG:
        value, d_zeta, d2_zeta = -np.log(safe), -1.0 / safe, 1.0 / safe**2
    else:
        value, d_zeta, d2_zeta = 1.0 / safe, -1.0 / safe**2, 2.0 / safe**3
    d_alpha, d2_alpha_zeta = zero.copy(), zero.copy()

    if relaxed and np.any(below):
        s = zeta[below] - alpha
        value[below] = 1.0 / alpha - s / alpha**2 + s**2 / alpha**3
        d_zeta[below] = -1.0 / alpha**2 + 2.0 * s / alpha**3
        d2_zeta[below] = 2.0 / alpha**3
        d_alpha[below] = -3.0 * s**2 / alpha**4
        d2_alpha_zeta[below] = -6.0 * s / alpha**4

    return BarrierTerms(value, d_zeta, d2_zeta, d_alpha, d2_alpha_zeta)


def barrier_value(cfg: BarrierConfig, zeta: float, alpha: float | None = None) -> float:
    """B(zeta) for the configured barrier."""
    alpha = cfg.alpha if alpha is None else alpha
    return float(barrier_terms(cfg.kind, np.array([zeta]), alpha).value[0])


@dataclass(frozen=True)
class AggregatedBarrier:
    """S(x) = sum_j B(h_j(x)) with gradients in x and alpha."""

    value: float
    gradient: np.ndarray
    d_alpha: float
    gradient_alpha: np.ndarray
    hessian: np.ndarray | None = None


def aggregate_barrier(
    h: SafetyFunction,
    cfg: BarrierConfig,
    x: np.ndarray,
    alpha: float | None = None,
    with_gradient: bool = True,
    with_hessian: bool = False,
) -> AggregatedBarrier:
    """
    Sum the barrier over all safety components.

    The Hessian is the chain rule
    sum_j B''(h_j) grad h_j grad h_j^T + B'(h_j) hess h_j.
    """
    alpha = cfg.alpha if alpha is None else alpha
    components = h.components(x)
    if components.size == 0:
        zeros = np.zeros(h.n_x)
        hessian = np.zeros((h.n_x, h.n_x)) if with_hessian else None
        return AggregatedBarrier(0.0, zeros, 0.0, zeros, hessian)
    terms = barrier_terms(cfg.kind, components, alpha)
    if not with_gradient and not with_hessian:
        return AggregatedBarrier(float(terms.value.sum()), np.empty(0), float(terms.d_alpha.sum()), np.empty(0))
    jac = h.component_jacobian(x)
    hessian = None
    if with_hessian:
        hessian = jac.T @ (terms.d2_zeta[:, None] * jac)
        hessian += np.tensordot(terms.d_zeta, h.component_hessians(x), axes=1)
    return AggregatedBarrier(
        value=float(terms.value.sum()),
        gradient=jac.T @ terms.d_zeta,
        d_alpha=float(terms.d_alpha.sum()),
        gradient_alpha=jac.T @ terms.d2_alpha_zeta,
        hessian=hessian,
    )


def init_barrier_state(h: SafetyFunction, cfg: BarrierConfig, x0: np.ndarray) -> float:
    """b_0 consistent with the plant state."""
    return aggregate_barrier(h, cfg, x0, with_gradient=False).value


def true_barrier_value(h: SafetyFunction, cfg: BarrierConfig, x: np.ndarray) -> float:
    """Aggregated barrier of a state, inf where the unrelaxed barrier is undefined."""
    try:
        return init_barrier_state(h, cfg, x)
    except BarrierDomainError:
        return np.inf


def dbas_step(
    cfg: BarrierConfig,
    h: SafetyFunction,
    f: DynamicsModel,
    x: np.ndarray,
    u: np.ndarray,
    b: float,
) -> float:
    """Next barrier state S(f(x, u)) - gamma (S(x) - b)."""
    s_next = init_barrier_state(h, cfg, f.step(x, u))
    if cfg.gamma == 0.0:
        return s_next
    return s_next - cfg.gamma * (init_barrier_state(h, cfg, x) - b)


class SafetyEmbeddedModel(DynamicsModel):
    """Plant dynamics augmented with one aggregated barrier state."""

    def __init__(
        self,
        plant: DynamicsModel,
        safety: SafetyFunction,
        cfg: BarrierConfig,
        gamma_index: int | None = None,
        alpha_index: int | None = None,
    ):
        if safety.n_x != plant.n_x:
            raise ValueError("Safety function and plant disagree on the state dimension")
        self.plant = plant
        self.safety = safety
        self.cfg = cfg
        self.gamma_index = gamma_index
        self.alpha_index = alpha_index
        self.n_x = plant.n_x + 1
        self.n_u = plant.n_u
        self.dt = plant.dt
        self.theta_dependencies = tuple(
            index for index in (gamma_index, alpha_index) if index is not None
        )

    def _gamma(self, theta: np.ndarray | None) -> float:
        if theta is None or self.gamma_index is None:
            return self.cfg.gamma
        return float(theta[self.gamma_index])

    def _alpha(self, theta: np.ndarray | None) -> float:
        if theta is None or self.alpha_index is None:
            return self.cfg.alpha
        return float(theta[self.alpha_index])

    def hold_control(self):
        return self.plant.hold_control()

    def step(self, x, u, theta=None):
        plant_x, b = x[:-1], x[-1]
        x_next = self.plant.step(plant_x, u, theta)
        alpha = self._alpha(theta)
        s_next = aggregate_barrier(self.safety, self.cfg, x_next, alpha, with_gradient=False)
        gamma = self._gamma(theta)
        b_next = s_next.value
        if gamma != 0.0:
            s_now = aggregate_barrier(self.safety, self.cfg, plant_x, alpha, with_gradient=False)
            b_next -= gamma * (s_now.value - b)
        return np.append(x_next, b_next)

    def jacobians(self, x, u, theta=None):
        n = self.plant.n_x
        plant_x = x[:-1]
        alpha, gamma = self._alpha(theta), self._gamma(theta)
        f_x, f_u = self.plant.jacobians(plant_x, u, theta)
        x_next = self.plant.step(plant_x, u, theta)
        s_next = aggregate_barrier(self.safety, self.cfg, x_next, alpha)
        s_now = aggregate_barrier(self.safety, self.cfg, plant_x, alpha)

        jac_x = np.zeros((n + 1, n + 1))
        jac_x[:n, :n] = f_x
        jac_x[n, :n] = s_next.gradient @ f_x - gamma * s_now.gradient
        jac_x[n, n] = gamma
        jac_u = np.zeros((n + 1, self.n_u))
        jac_u[:n] = f_u
        jac_u[n] = s_next.gradient @ f_u
        return jac_x, jac_u

    def param_jacobian(self, x, u, theta):
        n = self.plant.n_x
        f_theta = np.zeros((n + 1, theta_size(theta)))
        if theta is None or not self.theta_dependencies:
            return f_theta
        plant_x, b = x[:-1], x[-1]
        alpha, gamma = self._alpha(theta), self._gamma(theta)
        x_next = self.plant.step(plant_x, u, theta)
        s_now = aggregate_barrier(self.safety, self.cfg, plant_x, alpha, with_gradient=False)
        if self.gamma_index is not None:
            f_theta[n, self.gamma_index] = -(s_now.value - b)
        if self.alpha_index is not None:
            s_next = aggregate_barrier(self.safety, self.cfg, x_next, alpha, with_gradient=False)
            f_theta[n, self.alpha_index] = s_next.d_alpha - gamma * s_now.d_alpha
        return f_theta

    def lagrangian_hessians(self, x, u, theta, lam):
        n, m = self.plant.n_x, self.n_u
        n_theta = theta_size(theta)
        plant_x = x[:-1]
        lam_b = float(lam[n])
        alpha, gamma = self._alpha(theta), self._gamma(theta)

        plant_lam = lam[:n]
        s_next = s_now = None
        if lam_b != 0.0:
            x_next = self.plant.step(plant_x, u, theta)
            s_next = aggregate_barrier(self.safety, self.cfg, x_next, alpha, with_hessian=True)
            s_now = aggregate_barrier(self.safety, self.cfg, plant_x, alpha, with_hessian=True)
            # S(f(x, u)) curves through f as well: lam_b grad S(x+) joins the plant multiplier
            plant_lam = plant_lam + lam_b * s_next.gradient
        plant_terms = self.plant.lagrangian_hessians(plant_x, u, theta, plant_lam)

        xx = np.zeros((n + 1, n + 1))
        ux = np.zeros((m, n + 1))
        xtheta = np.zeros((n + 1, n_theta))
        xx[:n, :n] = plant_terms.xx
        ux[:, :n] = plant_terms.ux
        uu = plant_terms.uu.copy()
        xtheta[:n] = plant_terms.xtheta
        utheta = plant_terms.utheta.copy()
        if s_next is None or s_now is None:
            return SecondOrderTerms(xx=xx, ux=ux, uu=uu, xtheta=xtheta, utheta=utheta)

        f_x, f_u = self.plant.jacobians(plant_x, u, theta)
        hess_next, hess_now = s_next.hessian, s_now.hessian
        assert hess_next is not None and hess_now is not None
        xx[:n, :n] += lam_b * (f_x.T @ hess_next @ f_x - gamma * hess_now)
        ux[:, :n] += lam_b * (f_u.T @ hess_next @ f_x)
        uu += lam_b * (f_u.T @ hess_next @ f_u)

        if theta is not None:
            if self.gamma_index is not None:
                xtheta[:n, self.gamma_index] -= lam_b * s_now.gradient
                xtheta[n, self.gamma_index] += lam_b
            if self.alpha_index is not None:
                xtheta[:n, self.alpha_index] += lam_b * (
                    s_next.gradient_alpha @ f_x - gamma * s_now.gradient_alpha
                )
                utheta[:, self.alpha_index] += lam_b * (s_next.gradient_alpha @ f_u)

        return SecondOrderTerms(xx=xx, ux=ux, uu=uu, xtheta=xtheta, utheta=utheta)


def augment(
    f: DynamicsModel,
    h: SafetyFunction,
    cfg: BarrierConfig,
    gamma_index: int | None = None,
    alpha_index: int | None = None,
) -> SafetyEmbeddedModel:
    """Safety-embedded version of ``f``; gamma/alpha read from theta when indexed."""
    return SafetyEmbeddedModel(f, h, cfg, gamma_index=gamma_index, alpha_index=alpha_index)


class EmbeddedInitialState(InitialCondition):
    """Initial condition (x_0, S_alpha(x_0)) of the safety-embedded system."""

    def __init__(
        self,
        x0: np.ndarray,
        safety: SafetyFunction,
        cfg: BarrierConfig,
        alpha_index: int | None = None,
    ):
        self.x0 = np.asarray(x0, dtype=float)
        self.safety = safety
        self.cfg = cfg
        self.alpha_index = alpha_index

    def _alpha(self, theta: np.ndarray) -> float:
        if self.alpha_index is None:
            return self.cfg.alpha
        return float(theta[self.alpha_index])

    def value(self, theta):
        agg = aggregate_barrier(self.safety, self.cfg, self.x0, self._alpha(theta), with_gradient=False)
        return np.append(self.x0, agg.value)

    def jacobian(self, theta):
        jac = np.zeros((self.x0.size + 1, np.size(theta)))
        if self.alpha_index is not None:
            agg = aggregate_barrier(
                self.safety,
                self.cfg,
                self.x0,
                self._alpha(theta),
                with_gradient=False,
            )
            jac[-1, self.alpha_index] = agg.d_alpha
        return jac

"""
Parameterized finite-horizon optimal control problems.

A problem bundles dynamics, running/terminal cost, an initial-condition map
xi(theta), the parameter vector theta, the horizon and optional control
bounds. Controller parameter vectors share one layout:
``[q_diag, r_diag, q_b, gamma, alpha]``.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import DynamicsModel, arm_point_derivatives
from .models import ControlBounds, Trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParameterLayout:
    """Index map of a controller parameter vector."""

    n_q: int
    n_u: int

    @property
    def q(self) -> slice:
        return slice(0, self.n_q)

    @property
    def r(self) -> slice:
        return slice(self.n_q, self.n_q + self.n_u)

    @property
    def q_b(self) -> int:
        return self.n_q + self.n_u

    @property
    def gamma(self) -> int:
        return self.n_q + self.n_u + 1

    @property
    def alpha(self) -> int:
        return self.n_q + self.n_u + 2

    @property
    def size(self) -> int:
        return self.n_q + self.n_u + 3

    def names(self) -> list[str]:
        return [
            *(f"q{i}" for i in range(self.n_q)),
            *(f"r{i}" for i in range(self.n_u)),
            "q_b",
            "gamma",
            "alpha",
        ]

    def pack(
        self,
        q_diag: np.ndarray,
        r_diag: np.ndarray,
        q_b: float,
        gamma: float,
        alpha: float,
    ) -> np.ndarray:
        theta = np.empty(self.size)
        theta[self.q] = q_diag
        theta[self.r] = r_diag
        theta[self.q_b] = q_b
        theta[self.gamma] = gamma
        theta[self.alpha] = alpha
        return theta


class InitialCondition(ABC):
    """Initial-state map xi(theta)."""

    @abstractmethod
    def value(self, theta: np.ndarray) -> np.ndarray:
        """x_0."""

    @abstractmethod
    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        """d x_0 / d theta, shape (n_x, n_theta)."""


class FixedInitialState(InitialCondition):
    """Initial state independent of theta."""

    def __init__(self, x0: np.ndarray):
        self.x0 = np.asarray(x0, dtype=float)

    def value(self, theta):
        return self.x0.copy()

    def jacobian(self, theta):
        return np.zeros((self.x0.size, np.size(theta)))


class FeatureMap(ABC):
    """Smooth map from plant state to the coordinates a cost tracks."""

    n_x: int
    n_e: int
    is_linear: bool = False

    @abstractmethod
    def value(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def jacobian(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def hessian(self, x: np.ndarray) -> np.ndarray:
        """Array (n_e, n_x, n_x)."""


class IdentityFeature(FeatureMap):
    is_linear = True

    def __init__(self, n_x: int):
        self.n_x = n_x
        self.n_e = n_x

    def value(self, x):
        return np.asarray(x, dtype=float).copy()

    def jacobian(self, x):
        return np.eye(self.n_x)

    def hessian(self, x):
        return np.zeros((self.n_x, self.n_x, self.n_x))


class EndEffectorFeature(FeatureMap):
    """Arm end-effector position as a function of the 12-state."""

    n_x = 12
    n_e = 3

    def _derivatives(self, x):
        return arm_point_derivatives(x[:6], link=2, fraction=1.0)

    def value(self, x):
        return self._derivatives(x)[0]

    def jacobian(self, x):
        jac = np.zeros((3, 12))
        jac[:, :6] = self._derivatives(x)[1]
        return jac

    def hessian(self, x):
        hess = np.zeros((3, 12, 12))
        hess[:, :6, :6] = self._derivatives(x)[2]
        return hess


@dataclass(frozen=True)
class RunningDerivatives:
    l_x: np.ndarray
    l_u: np.ndarray
    l_xx: np.ndarray
    l_ux: np.ndarray
    l_uu: np.ndarray
    l_xtheta: np.ndarray
    l_utheta: np.ndarray


@dataclass(frozen=True)
class TerminalDerivatives:
    phi_x: np.ndarray
    phi_xx: np.ndarray
    phi_xtheta: np.ndarray


class CostFunction(ABC):
    """Running cost l(x, u, k, theta) and terminal cost phi(x, theta)."""

    @abstractmethod
    def running(self, x: np.ndarray, u: np.ndarray, k: int, theta: np.ndarray) -> float: ...

    @abstractmethod
    def running_derivatives(
        self,
        x: np.ndarray,
        u: np.ndarray,
        k: int,
        theta: np.ndarray,
    ) -> RunningDerivatives: ...

    @abstractmethod
    def terminal(self, x: np.ndarray, theta: np.ndarray) -> float: ...

    @abstractmethod
    def terminal_derivatives(self, x: np.ndarray, theta: np.ndarray) -> TerminalDerivatives: ...


class TrackingCost(CostFunction):
    """
    Weighted tracking of a feature and control reference plus a barrier penalty.

    l = ||e(x) - e_ref_k||^2_Q + ||u - u_ref_k||^2_R + q_b b^2
    phi = ||e(x_N) - e_ref_N||^2_{Q_f} + q_b b_N^2

    Q, R and q_b are read from theta. Q_f is either fixed (``terminal_weights``)
    or equal to Q. When ``has_barrier`` is set the last state coordinate is the
    barrier state b.
    """

    def __init__(
        self,
        feature: FeatureMap,
        layout: ParameterLayout,
        ref_features: np.ndarray,
        ref_controls: np.ndarray,
        terminal_weights: np.ndarray | None = None,
        has_barrier: bool = False,
    ):
        self.feature = feature
        self.layout = layout
        self.ref_features = np.asarray(ref_features, dtype=float)
        self.ref_controls = np.asarray(ref_controls, dtype=float)
        self.terminal_weights = (
            None if terminal_weights is None else np.asarray(terminal_weights, dtype=float)
        )
        self.has_barrier = has_barrier
        if layout.n_q != feature.n_e:
            raise ValueError(
                f"Layout tracks {layout.n_q} coordinates but the feature has {feature.n_e}",
            )
        if self.ref_features.shape[0] != self.ref_controls.shape[0] + 1:
            raise ValueError("Feature reference must be one step longer than controls")

    @property
    def n_plant(self) -> int:
        return self.feature.n_x

    @property
    def n_x(self) -> int:
        return self.feature.n_x + int(self.has_barrier)

    def _barrier(self, x: np.ndarray) -> float:
        return float(x[self.n_plant]) if self.has_barrier else 0.0

    def running(self, x, u, k, theta):
        lay = self.layout
        d = self.feature.value(x[: self.n_plant]) - self.ref_features[k]
        du = u - self.ref_controls[k]
        cost = d @ (theta[lay.q] * d) + du @ (theta[lay.r] * du)
        return float(cost + theta[lay.q_b] * self._barrier(x) ** 2)

    def terminal(self, x, theta):
        lay = self.layout
        d = self.feature.value(x[: self.n_plant]) - self.ref_features[-1]
        return float(d @ (self._terminal_q(theta) * d) + theta[lay.q_b] * self._barrier(x) ** 2)

    def _terminal_q(self, theta: np.ndarray) -> np.ndarray:
        if self.terminal_weights is not None:
            return self.terminal_weights
        return theta[self.layout.q]

    def _state_terms(
        self,
        x: np.ndarray,
        reference: np.ndarray,
        weights: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gradient, Hessian and weight-sensitivity of ||e(x) - ref||^2_W."""
        xp = x[: self.n_plant]
        d = self.feature.value(xp) - reference
        jac = self.feature.jacobian(xp)
        grad = 2.0 * jac.T @ (weights * d)
        hess = 2.0 * jac.T @ (weights[:, None] * jac)
        if not self.feature.is_linear:
            hess += 2.0 * np.einsum("i,ijk->jk", weights * d, self.feature.hessian(xp))
        sensitivity = 2.0 * jac.T * d[None, :]
        return grad, hess, sensitivity

    def running_derivatives(self, x, u, k, theta):
        lay = self.layout
        n, n_hat, m = self.n_plant, self.n_x, u.size
        grad, hess, sensitivity = self._state_terms(x, self.ref_features[k], theta[lay.q])
        du = u - self.ref_controls[k]
        r = theta[lay.r]

        l_x = np.zeros(n_hat)
        l_xx = np.zeros((n_hat, n_hat))
        l_xtheta = np.zeros((n_hat, theta.size))
        l_x[:n] = grad
        l_xx[:n, :n] = hess
        l_xtheta[:n, lay.q] = sensitivity
        if self.has_barrier:
            b = x[n]
            l_x[n] = 2.0 * theta[lay.q_b] * b
            l_xx[n, n] = 2.0 * theta[lay.q_b]
            l_xtheta[n, lay.q_b] = 2.0 * b

        l_utheta = np.zeros((m, theta.size))
        l_utheta[:, lay.r] = np.diag(2.0 * du)
        return RunningDerivatives(
            l_x=l_x,
            l_u=2.0 * r * du,
            l_xx=l_xx,
            l_ux=np.zeros((m, n_hat)),
            l_uu=np.diag(2.0 * r),
            l_xtheta=l_xtheta,
            l_utheta=l_utheta,
        )

    def terminal_derivatives(self, x, theta):
        lay = self.layout
        n, n_hat = self.n_plant, self.n_x
        grad, hess, sensitivity = self._state_terms(
            x,
            self.ref_features[-1],
            self._terminal_q(theta),
        )
        phi_x = np.zeros(n_hat)
        phi_xx = np.zeros((n_hat, n_hat))
        phi_xtheta = np.zeros((n_hat, theta.size))
        phi_x[:n] = grad
        phi_xx[:n, :n] = hess
        if self.terminal_weights is None:
            phi_xtheta[:n, lay.q] = sensitivity
        if self.has_barrier:
            b = x[n]
            phi_x[n] = 2.0 * theta[lay.q_b] * b
            phi_xx[n, n] = 2.0 * theta[lay.q_b]
            phi_xtheta[n, lay.q_b] = 2.0 * b
        return TerminalDerivatives(phi_x=phi_x, phi_xx=phi_xx, phi_xtheta=phi_xtheta)

    def reference_vjp(
        self,
        xs: np.ndarray,
        delta_xs: np.ndarray,
        delta_us: np.ndarray,
        theta: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        Pull a solution variation back onto the reference trajectory.

        Returns the mixed second derivatives of the cost with respect to the
        references, applied to (delta_x, delta_u): one (N+1, n_e) array for
        the feature reference and one (N, n_u) array for the control reference.
        """
        lay = self.layout
        horizon = delta_us.shape[0]
        grad_ref_x = np.zeros((horizon + 1, self.feature.n_e))
        for k in range(horizon + 1):
            weights = theta[lay.q] if k < horizon else self._terminal_q(theta)
            jac = self.feature.jacobian(xs[k, : self.n_plant])
            grad_ref_x[k] = -2.0 * weights * (jac @ delta_xs[k, : self.n_plant])
        grad_ref_u = -2.0 * theta[lay.r][None, :] * delta_us
        return grad_ref_x, grad_ref_u


@dataclass(frozen=True)
class OCProblem:
    """Parameterized optimal control problem."""

    model: DynamicsModel
    cost: CostFunction
    initial: InitialCondition
    theta: np.ndarray
    horizon: int
    bounds: ControlBounds | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"Horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.bounds is not None and self.bounds.n_u != self.model.n_u:
            raise ValueError("Control bounds do not match the model control dimension")

    @property
    def n_x(self) -> int:
        return self.model.n_x

    @property
    def n_u(self) -> int:
        return self.model.n_u

    @property
    def n_theta(self) -> int:
        return int(self.theta.size)

    def with_theta(self, theta: np.ndarray) -> "OCProblem":
        return replace(self, theta=np.asarray(theta, dtype=float))

    def x0(self) -> np.ndarray:
        return self.initial.value(self.theta)

    def trajectory_cost(self, traj: Trajectory) -> float:
        total = sum(
            self.cost.running(traj.xs[k], traj.us[k], k, self.theta)
            for k in range(self.horizon)
        )
        return float(total + self.cost.terminal(traj.xs[-1], self.theta))

    def zero_controls(self) -> np.ndarray:
        return np.tile(self.model.hold_control(), (self.horizon, 1))

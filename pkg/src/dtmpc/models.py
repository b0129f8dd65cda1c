"""
Data models shared by the solver, gradient and MPC layers.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np


class HessianMode(Enum):
    """Which Lagrangian Hessian a derivative bundle carries."""

    GAUSS_NEWTON = "gauss_newton"
    FULL_NEWTON = "full_newton"


class GradientRoute(Enum):
    """Hypergradient computation route."""

    DOC_FULL = "doc_full"
    DOC_GAUSS_NEWTON = "doc_gauss_newton"
    PDP = "pdp"
    FINITE_DIFFERENCE = "finite_difference"

    @classmethod
    def parse(cls, name: str) -> "GradientRoute":
        """Parse a route name, accepting ``fd`` and dashes."""
        normalized = name.strip().lower().replace("-", "_")
        if normalized == "fd":
            return cls.FINITE_DIFFERENCE
        return cls(normalized)

    @property
    def is_doc(self) -> bool:
        return self in (GradientRoute.DOC_FULL, GradientRoute.DOC_GAUSS_NEWTON)


class LossVariant(Enum):
    """Tube tracking loss variants."""

    FULL_STATE = "full_state"
    POSITION_ONLY = "position_only"


class TrialOutcome(Enum):
    """Terminal outcome of one MPC trial."""

    SUCCESS = "success"
    VIOLATION = "violation"
    TIMEOUT = "timeout"
    DIVERGED = "diverged"

    @property
    def is_violation(self) -> bool:
        """Diverged trials count as safety violations."""
        return self in (TrialOutcome.VIOLATION, TrialOutcome.DIVERGED)


@dataclass(frozen=True)
class ControlBounds:
    """Box constraints on the control vector."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("Control bounds must be 1-D arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError(f"Control bounds need lower < upper, got {lower} / {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def symmetric(cls, limits: Any) -> "ControlBounds":
        """Create bounds [-limits, limits]."""
        limits = np.asarray(limits, dtype=float)
        return cls(lower=-limits, upper=limits)

    @property
    def n_u(self) -> int:
        return int(self.lower.size)

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)


@dataclass(frozen=True)
class DisturbanceConfig:
    """Uniform additive disturbance ranges with a counter-based stream key."""

    lower: np.ndarray
    upper: np.ndarray
    seed: int = 0
    trial: int = 0

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape:
            raise ValueError("Disturbance ranges must have equal shapes")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("Disturbance ranges must be finite")
        if np.any(lower > upper):
            raise ValueError("Disturbance ranges need lower <= upper")
        if self.seed < 0 or self.trial < 0:
            raise ValueError("Disturbance seed and trial index must be non-negative")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def zero(cls, n_x: int) -> "DisturbanceConfig":
        return cls(lower=np.zeros(n_x), upper=np.zeros(n_x))

    def for_trial(self, seed: int, trial: int) -> "DisturbanceConfig":
        return replace(self, seed=seed, trial=trial)

    def scaled(self, factor: float) -> "DisturbanceConfig":
        return replace(self, lower=self.lower * factor, upper=self.upper * factor)


@dataclass(frozen=True)
class Trajectory:
    """State/control sequence x_0..x_N, u_0..u_{N-1}."""

    xs: np.ndarray
    us: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        us = np.asarray(self.us, dtype=float)
        if xs.ndim != 2 or us.ndim != 2 or xs.shape[0] != us.shape[0] + 1:
            raise ValueError(
                f"Trajectory needs xs (N+1, n) and us (N, m), got {xs.shape} and {us.shape}",
            )
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "us", us)

    @property
    def horizon(self) -> int:
        return int(self.us.shape[0])

    def shifted_controls(self) -> np.ndarray:
        """Controls shifted by one step, last control repeated."""
        if self.horizon == 0:
            return self.us.copy()
        return np.vstack([self.us[1:], self.us[-1:]])


@dataclass(frozen=True)
class Solution:
    """Solver output: trajectory, multipliers and convergence metadata."""

    xs: np.ndarray
    us: np.ndarray
    lambdas: np.ndarray
    cost: float
    iterations: int
    converged: bool
    kkt_residual: float
    reg: float = 0.0
    budget_exhausted: bool = False

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.xs, self.us)

    def stats(self) -> dict[str, Any]:
        """Scalar metadata for logs and JSON reports."""
        return {
            "cost": float(self.cost),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "kkt_residual": float(self.kkt_residual),
            "reg": float(self.reg),
            "budget_exhausted": bool(self.budget_exhausted),
        }


@dataclass(frozen=True)
class DerivativeBundle:
    """
    Per-step derivatives of dynamics and Lagrangian along a trajectory.

    Shapes use N steps, n states, m controls and p parameters. In
    Gauss-Newton mode the ``lag_*`` blocks are pure cost Hessians; in
    full-Newton mode they include the multiplier-weighted second-order
    dynamics terms.
    """

    mode: HessianMode
    f_x: np.ndarray  # (N, n, n)
    f_u: np.ndarray  # (N, n, m)
    f_theta: np.ndarray  # (N, n, p)
    l_x: np.ndarray  # (N, n)
    l_u: np.ndarray  # (N, m)
    lag_xx: np.ndarray  # (N, n, n)
    lag_ux: np.ndarray  # (N, m, n)
    lag_uu: np.ndarray  # (N, m, m)
    lag_xtheta: np.ndarray  # (N, n, p)
    lag_utheta: np.ndarray  # (N, m, p)
    phi_x: np.ndarray  # (n,)
    phi_xx: np.ndarray  # (n, n)
    phi_xtheta: np.ndarray  # (n, p)
    xi_theta: np.ndarray  # (n, p)
    lambdas: np.ndarray  # (N+1, n)
    at_lower: np.ndarray  # (N, m) bool
    at_upper: np.ndarray  # (N, m) bool
    active: np.ndarray  # (N, m) bool

    @property
    def horizon(self) -> int:
        return int(self.f_x.shape[0])

    @property
    def n_x(self) -> int:
        return int(self.phi_x.shape[0])

    @property
    def n_u(self) -> int:
        return int(self.f_u.shape[2])

    @property
    def n_theta(self) -> int:
        return int(self.xi_theta.shape[1])


@dataclass(frozen=True)
class BackwardPassResult:
    """Gains and value-function derivatives from one Riccati sweep."""

    feedforward: np.ndarray  # (N, m)
    feedback: np.ndarray  # (N, m, n)
    v_x: np.ndarray  # (N+1, n)
    v_xx: np.ndarray  # (N+1, n, n)
    expected_linear: float
    expected_quadratic: float
    needed_regularization: bool

    def expected_improvement(self, step_size: float) -> float:
        """Predicted cost change for a given line-search step (negative is better)."""
        return step_size * self.expected_linear + step_size**2 * self.expected_quadratic


@dataclass(frozen=True)
class DocBackwardOutput:
    """Loss-driven value recursion: tilde-V_x, V_xx and the gains."""

    v_x_tilde: np.ndarray  # (N+1, n)
    v_xx: np.ndarray  # (N+1, n, n)
    k_tilde: np.ndarray  # (N, m)
    feedback: np.ndarray  # (N, m, n)


@dataclass(frozen=True)
class DeltaZ:
    """Stored solution of the implicit linear system."""

    dx: np.ndarray  # (N+1, n)
    du: np.ndarray  # (N, m)
    dlam: np.ndarray  # (N+1, n)


@dataclass(frozen=True)
class Hypergradient:
    """Gradient of an upper-level loss with respect to theta."""

    grad_theta: np.ndarray
    route: GradientRoute
    delta_z: DeltaZ | None = None

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.grad_theta))


@dataclass(frozen=True)
class SolutionJacobian:
    """Sensitivities dx_k/dtheta and du_k/dtheta of a solution."""

    dx: np.ndarray  # (N+1, n, p)
    du: np.ndarray  # (N, m, p)

    def stacked(self) -> np.ndarray:
        """All rows stacked into one (N+1)n + Nm by p matrix."""
        n_theta = self.dx.shape[2]
        return np.vstack([self.dx.reshape(-1, n_theta), self.du.reshape(-1, n_theta)])

    def contract(self, grad_x: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
        """Chain rule with per-step loss gradients."""
        return np.einsum("kip,ki->p", self.dx, grad_x) + np.einsum(
            "kip,ki->p",
            self.du,
            grad_u,
        )


@dataclass
class StepRecord:
    """One MPC step of a trial log."""

    t: int
    u_applied: np.ndarray
    x_true: np.ndarray
    x_nominal: np.ndarray
    loss_value: float
    grad_norms: tuple[float, float] | None
    nominal_stats: dict[str, Any]
    ancillary_stats: dict[str, Any]
    h_true: float
    barrier_true: float
    wall_time: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "u_applied": self.u_applied.tolist(),
            "x_true": self.x_true.tolist(),
            "x_nominal": self.x_nominal.tolist(),
            "loss_value": self.loss_value,
            "grad_norms": list(self.grad_norms) if self.grad_norms is not None else None,
            "nominal": self.nominal_stats,
            "ancillary": self.ancillary_stats,
            "h_true": self.h_true,
            "barrier_true": self.barrier_true if np.isfinite(self.barrier_true) else None,
            "wall_time": self.wall_time,
        }


@dataclass
class TrialResult:
    """Outcome and log of a single trial."""

    trial: int
    seed: int
    outcome: TrialOutcome
    steps: int
    log: list[StepRecord] = field(default_factory=list)
    error: str | None = None

    @property
    def step_times(self) -> list[float]:
        return [record.wall_time for record in self.log]

    def to_dict(self, include_timing: bool = True) -> dict[str, Any]:
        records = [record.to_dict() for record in self.log]
        if not include_timing:
            for record in records:
                record.pop("wall_time", None)
        return {
            "trial": self.trial,
            "seed": self.seed,
            "outcome": self.outcome.value,
            "steps": self.steps,
            "error": self.error,
            "log": records,
        }

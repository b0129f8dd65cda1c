"""
Two-layer tube MPC with online parameter adaptation.

The nominal layer plans a disturbance-free, safety-embedded trajectory to the
target; the ancillary layer tracks it from the true state. In the adaptive
variant both parameter vectors follow projected (Nesterov) gradient descent
on the tube tracking loss, with gradients from the hypergradient engine.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .barrier import (
    BarrierDomainError,
    EmbeddedInitialState,
    augment,
    true_barrier_value,
)
from .ddp import NonFiniteStateError, NotPositiveDefiniteError, SolverSettings, solve
from .doc import InnerSolveFailedError, LossSpec, hypergradient
from .dynamics import SingularAttitudeError, sample_disturbance
from .models import (
    DeltaZ,
    GradientRoute,
    Hypergradient,
    LossVariant,
    Solution,
    StepRecord,
    Trajectory,
    TrialOutcome,
    TrialResult,
)
from .problem import IdentityFeature, OCProblem, ParameterLayout, TrackingCost
from .tasks import SystemTask, TaskConfig, build_task

logger = logging.getLogger(__name__)

R_FLOOR = 1e-4
PARAMETER_GROUPS = ("q", "r", "q_b", "gamma", "alpha")

# Failures of the controlled system; anything else is an infrastructure error
DIVERGENCE_ERRORS = (
    NonFiniteStateError,
    NotPositiveDefiniteError,
    BarrierDomainError,
    SingularAttitudeError,
)


class HorizonMismatchError(Exception):
    """Exception raised when trajectories compared by the tube loss differ in length."""


@dataclass
class ControllerParams:
    """Controller parameter vector with its adaptation mask and projection box."""

    layout: ParameterLayout
    theta: np.ndarray
    frozen_mask: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.frozen_mask = np.asarray(self.frozen_mask, dtype=bool)
        if self.theta.size != self.layout.size or self.frozen_mask.size != self.layout.size:
            raise ValueError("Parameter vector and mask must match the layout")

    @classmethod
    def from_vector(
        cls,
        layout: ParameterLayout,
        theta: np.ndarray,
        frozen: tuple[str, ...] = (),
    ) -> "ControllerParams":
        """Create parameters with whole groups (q, r, q_b, gamma, alpha, all) frozen."""
        mask = np.zeros(layout.size, dtype=bool)
        for group in frozen:
            if group == "all":
                mask[:] = True
            elif group in PARAMETER_GROUPS:
                mask[getattr(layout, group)] = True
            else:
                raise ValueError(f"Unknown parameter group '{group}'")
        return cls(layout=layout, theta=np.asarray(theta, dtype=float).copy(), frozen_mask=mask)

    def to_vector(self) -> np.ndarray:
        return self.theta.copy()

    @property
    def q_diag(self) -> np.ndarray:
        return self.theta[self.layout.q]

    @property
    def r_diag(self) -> np.ndarray:
        return self.theta[self.layout.r]

    @property
    def q_b(self) -> float:
        return float(self.theta[self.layout.q_b])

    @property
    def gamma(self) -> float:
        return float(self.theta[self.layout.gamma])

    @property
    def alpha(self) -> float:
        return float(self.theta[self.layout.alpha])

    @property
    def fully_frozen(self) -> bool:
        return bool(np.all(self.frozen_mask))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lay = self.layout
        lower = np.zeros(lay.size)
        upper = np.full(lay.size, np.inf)
        lower[lay.r] = R_FLOOR
        upper[lay.q_b] = 1.0
        lower[lay.gamma] = -1.0
        upper[lay.gamma] = 1.0
        return lower, upper

    def project(self, theta: np.ndarray) -> np.ndarray:
        """Clip to Q >= 0, R >= 1e-4, q_b in [0, 1], gamma in [-1, 1], alpha >= 0."""
        lower, upper = self.bounds()
        return np.clip(theta, lower, upper)

    def is_feasible(self) -> bool:
        lower, upper = self.bounds()
        return bool(np.all(self.theta >= lower) and np.all(self.theta <= upper))


@dataclass(frozen=True)
class MpcSettings:
    """Budget split, learning rule and gradient route of the tube controller."""

    eta: float = 1e-2
    momentum: float = 0.9
    nesterov: bool = True
    solver_budget: int = 10
    gradient_reserve: int = 1
    tol: float = 1e-3
    route: GradientRoute = GradientRoute.DOC_GAUSS_NEWTON
    loss_variant: LossVariant = LossVariant.FULL_STATE

    def __post_init__(self):
        if isinstance(self.route, str):
            object.__setattr__(self, "route", GradientRoute.parse(self.route))
        if isinstance(self.loss_variant, str):
            object.__setattr__(self, "loss_variant", LossVariant(self.loss_variant))
        if self.eta < 0:
            raise ValueError(f"Learning rate must be non-negative, got {self.eta}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"Momentum must lie in [0, 1), got {self.momentum}")
        if not 0 <= self.gradient_reserve < self.solver_budget:
            raise ValueError("Gradient reserve must leave at least one solver iteration")

    def solver_settings(self, adapt: bool) -> SolverSettings:
        budget = self.solver_budget - self.gradient_reserve if adapt else self.solver_budget
        return SolverSettings(budget=budget, tol=self.tol)


@dataclass
class TubeMpcState:
    """Mutable per-trial state of both layers."""

    task: SystemTask
    settings: MpcSettings
    nominal: ControllerParams
    ancillary: ControllerParams
    x_nominal: np.ndarray
    x_true: np.ndarray
    velocity_nominal: np.ndarray
    velocity_ancillary: np.ndarray
    nominal_warm: np.ndarray | None = None
    ancillary_warm: np.ndarray | None = None
    t: int = 0

    @classmethod
    def initial(cls, task: SystemTask, settings: MpcSettings) -> "TubeMpcState":
        cfg = task.config
        if settings.loss_variant is LossVariant.POSITION_ONLY and not task.position_indices:
            raise ValueError(f"position_only loss is undefined for {cfg.system}")
        barrier_groups = () if cfg.adapt_barrier else ("gamma", "alpha")
        nominal_frozen = (*barrier_groups, *cfg.nominal_frozen) if cfg.adapt_nominal else ("all",)
        nominal = ControllerParams.from_vector(
            task.nominal_layout,
            task.nominal_theta0(),
            frozen=nominal_frozen,
        )
        ancillary = ControllerParams.from_vector(
            task.ancillary_layout,
            task.ancillary_theta0(),
            frozen=barrier_groups,
        )
        return cls(
            task=task,
            settings=settings,
            nominal=nominal,
            ancillary=ancillary,
            x_nominal=task.x0.copy(),
            x_true=task.x0.copy(),
            velocity_nominal=np.zeros(nominal.layout.size),
            velocity_ancillary=np.zeros(ancillary.layout.size),
        )


def build_nominal_problem(task: SystemTask, theta: np.ndarray, x_bar: np.ndarray) -> OCProblem:
    """Safety-embedded reach problem from the nominal state."""
    layout = task.nominal_layout
    cfg = task.config
    horizon = cfg.horizon
    feature = task.nominal_feature
    target = np.asarray(cfg.target)[: feature.n_e]
    model = augment(
        task.plant,
        task.safety,
        task.barrier,
        gamma_index=layout.gamma,
        alpha_index=layout.alpha,
    )
    cost = TrackingCost(
        feature=feature,
        layout=layout,
        ref_features=np.tile(target, (horizon + 1, 1)),
        ref_controls=np.zeros((horizon, task.plant.n_u)),
        terminal_weights=np.asarray(cfg.nominal_qf),
        has_barrier=True,
    )
    initial = EmbeddedInitialState(x_bar, task.safety, task.barrier, alpha_index=layout.alpha)
    return OCProblem(model, cost, initial, theta, horizon, task.bounds)


def build_ancillary_problem(
    task: SystemTask,
    theta: np.ndarray,
    x_true: np.ndarray,
    reference: Trajectory,
) -> OCProblem:
    """
    Safety-embedded tracking problem of a nominal trajectory from the true state.

    Raises:
        HorizonMismatchError: If the reference is shorter than the horizon
    """
    horizon = task.config.horizon
    if reference.horizon < horizon:
        raise HorizonMismatchError(
            f"Reference covers {reference.horizon} steps, horizon is {horizon}",
        )
    layout = task.ancillary_layout
    n = task.plant.n_x
    model = augment(
        task.plant,
        task.safety,
        task.barrier,
        gamma_index=layout.gamma,
        alpha_index=layout.alpha,
    )
    cost = TrackingCost(
        feature=IdentityFeature(n),
        layout=layout,
        ref_features=reference.xs[: horizon + 1, :n],
        ref_controls=reference.us[:horizon],
        has_barrier=True,
    )
    initial = EmbeddedInitialState(x_true, task.safety, task.barrier, alpha_index=layout.alpha)
    return OCProblem(model, cost, initial, theta, horizon, task.bounds)


def nominal_step(state: TubeMpcState, adapt: bool = True) -> Solution:
    """Solve the nominal problem from x_bar_t, warm-started from the shifted previous plan."""
    problem = build_nominal_problem(state.task, state.nominal.theta, state.x_nominal)
    return solve(problem, state.nominal_warm, settings=state.settings.solver_settings(adapt))


def ancillary_step(state: TubeMpcState, reference: Trajectory, adapt: bool = True) -> Solution:
    """Solve the tracking problem from x_t; its first control is applied to the plant."""
    problem = build_ancillary_problem(state.task, state.ancillary.theta, state.x_true, reference)
    warm = state.ancillary_warm if state.ancillary_warm is not None else reference.us
    return solve(problem, warm, settings=state.settings.solver_settings(adapt))


@dataclass(frozen=True)
class TubeLoss:
    """Tube tracking loss value and its gradients."""

    value: float
    grad_x: np.ndarray
    grad_u: np.ndarray
    grad_reference_x: np.ndarray


def dt_mpc_loss(
    tau_star: Trajectory,
    tau_bar: Trajectory,
    variant: LossVariant = LossVariant.FULL_STATE,
    n_plant: int | None = None,
    position_indices: tuple[int, ...] | None = None,
) -> TubeLoss:
    """
    Squared deviation of the ancillary trajectory from the nominal plus its barrier states.

    Both trajectories carry the barrier state as their last coordinate unless
    ``n_plant`` equals the state dimension. ``position_only`` compares only
    ``position_indices``.

    Raises:
        HorizonMismatchError: If the trajectories differ in length
    """
    if tau_star.xs.shape != tau_bar.xs.shape or tau_star.us.shape != tau_bar.us.shape:
        raise HorizonMismatchError(
            f"Trajectories differ: {tau_star.xs.shape} vs {tau_bar.xs.shape}",
        )
    n_state = tau_star.xs.shape[1]
    n_plant = n_state - 1 if n_plant is None else n_plant
    if variant is LossVariant.POSITION_ONLY:
        if not position_indices:
            raise ValueError("position_only loss needs position indices")
        idx = list(position_indices)
    else:
        idx = list(range(n_plant))

    deviation = tau_star.xs[:, idx] - tau_bar.xs[:, idx]
    grad_x = np.zeros_like(tau_star.xs)
    grad_reference_x = np.zeros_like(tau_bar.xs)
    grad_x[:, idx] = 2.0 * deviation
    grad_reference_x[:, idx] = -2.0 * deviation
    value = float(np.sum(deviation**2))
    if n_plant < n_state:
        barrier = tau_star.xs[:, n_plant:]
        value += float(np.sum(barrier**2))
        grad_x[:, n_plant:] = 2.0 * barrier
    return TubeLoss(
        value=value,
        grad_x=grad_x,
        grad_u=np.zeros_like(tau_star.us),
        grad_reference_x=grad_reference_x,
    )


def _tube_loss(state: TubeMpcState, tau_star: Trajectory, tau_bar: Trajectory) -> TubeLoss:
    task = state.task
    return dt_mpc_loss(
        tau_star,
        tau_bar,
        state.settings.loss_variant,
        n_plant=task.plant.n_x,
        position_indices=task.position_indices,
    )


def tube_loss_spec(state: TubeMpcState, reference: Trajectory) -> LossSpec:
    """Tube loss of an ancillary trajectory against a fixed nominal reference."""

    def value(traj: Trajectory) -> float:
        return _tube_loss(state, traj, reference).value

    def gradient(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
        loss = _tube_loss(state, traj, reference)
        return loss.grad_x, loss.grad_u

    return LossSpec(value=value, gradient=gradient)


def ancillary_gradient(
    state: TubeMpcState,
    problem: OCProblem,
    solution: Solution,
    reference: Trajectory,
    store_delta_z: bool,
    route: GradientRoute | None = None,
) -> Hypergradient:
    """Hypergradient of the tube loss with respect to the ancillary parameters."""
    return hypergradient(
        problem,
        solution,
        tube_loss_spec(state, reference),
        route or state.settings.route,
        store_delta_z=store_delta_z,
        quiet=True,
    )


def nominal_gradient(
    state: TubeMpcState,
    nominal: Solution,
    ancillary_problem: OCProblem,
    ancillary: Solution,
    delta_z: DeltaZ,
) -> np.ndarray:
    """
    Hypergradient of the tube loss with respect to the nominal parameters.

    The loss reaches the nominal plan directly and through the ancillary
    tracking reference; the reference contribution is the ancillary variation
    ``delta_z`` pulled back through the tracking cost.
    """
    task = state.task
    n = task.plant.n_x
    tau_bar = nominal.trajectory
    loss = _tube_loss(state, ancillary.trajectory, tau_bar)
    cost = ancillary_problem.cost
    pulled_x, pulled_u = cost.reference_vjp(
        ancillary.xs,
        delta_z.dx,
        delta_z.du,
        ancillary_problem.theta,
    )
    grad_x = loss.grad_reference_x.copy()
    grad_x[:, :n] += pulled_x
    grad_u = pulled_u

    def value(traj: Trajectory) -> float:
        problem = build_ancillary_problem(task, state.ancillary.theta, state.x_true, traj)
        resolved = solve(problem, ancillary.us, settings=SolverSettings.tight())
        return _tube_loss(state, resolved.trajectory, traj).value

    spec = LossSpec(value=value, gradient=lambda traj: (grad_x, grad_u))
    problem = build_nominal_problem(task, state.nominal.theta, state.x_nominal)
    return hypergradient(problem, nominal, spec, state.settings.route, quiet=True).grad_theta


def _descend(
    params: ControllerParams,
    velocity: np.ndarray,
    grad: np.ndarray | None,
    settings: MpcSettings,
) -> None:
    if grad is None or params.fully_frozen:
        return
    if not np.all(np.isfinite(grad)):
        logger.warning("Skipping parameter update with non-finite gradient")
        return
    free = ~params.frozen_mask
    velocity[free] = settings.momentum * velocity[free] + grad[free]
    direction = grad + settings.momentum * velocity if settings.nesterov else velocity
    theta = params.theta.copy()
    theta[free] -= settings.eta * direction[free]
    params.theta = params.project(theta)


def adapt_parameters(
    state: TubeMpcState,
    grads: tuple[np.ndarray | None, np.ndarray | None],
) -> TubeMpcState:
    """Projected momentum step on both parameter vectors; frozen entries are untouched."""
    grad_nominal, grad_ancillary = grads
    _descend(state.nominal, state.velocity_nominal, grad_nominal, state.settings)
    _descend(state.ancillary, state.velocity_ancillary, grad_ancillary, state.settings)
    return state


def _classify(task: SystemTask, x: np.ndarray) -> TrialOutcome | None:
    if not np.all(np.isfinite(x)):
        return TrialOutcome.DIVERGED
    if not task.safety.is_safe(x):
        return TrialOutcome.VIOLATION
    if task.reached(x):
        return TrialOutcome.SUCCESS
    return None


def tube_gradients(
    state: TubeMpcState,
    nominal: Solution,
    ancillary: Solution,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Hypergradients (nominal, ancillary) of the tube loss; None for a fully frozen layer."""
    task = state.task
    reference = nominal.trajectory
    anc_problem = build_ancillary_problem(task, state.ancillary.theta, state.x_true, reference)
    adapt_nominal = not state.nominal.fully_frozen
    route = state.settings.route
    grad_ancillary = None
    delta_z = None
    if not state.ancillary.fully_frozen or (adapt_nominal and route.is_doc):
        result = ancillary_gradient(state, anc_problem, ancillary, reference, adapt_nominal)
        grad_ancillary = result.grad_theta
        delta_z = result.delta_z
    grad_nominal = None
    if adapt_nominal:
        if delta_z is None:
            # pdp and fd routes do not produce a variation; take it from a DOC sweep
            full = ancillary_gradient(
                state,
                anc_problem,
                ancillary,
                reference,
                store_delta_z=True,
                route=GradientRoute.DOC_FULL,
            )
            delta_z = full.delta_z
        grad_nominal = nominal_gradient(state, nominal, anc_problem, ancillary, delta_z)
    return grad_nominal, grad_ancillary


def _run_tube_mpc(
    task: SystemTask,
    settings: MpcSettings,
    adapt: bool,
    seed: int,
    trial: int,
) -> TrialResult:
    state = TubeMpcState.initial(task, settings)
    plant = task.plant
    log: list[StepRecord] = []
    outcome = TrialOutcome.TIMEOUT

    for t in range(task.config.sim_steps):
        state.t = t
        status = _classify(task, state.x_true)
        if status is not None:
            outcome = status
            break
        started = time.perf_counter()
        try:
            nominal = nominal_step(state, adapt)
            ancillary = ancillary_step(state, nominal.trajectory, adapt)
            loss = _tube_loss(state, ancillary.trajectory, nominal.trajectory)
            grad_norms = None
            if adapt and (nominal.converged or ancillary.converged):
                try:
                    grads = tube_gradients(state, nominal, ancillary)
                except (NotPositiveDefiniteError, InnerSolveFailedError) as e:
                    logger.warning(f"t={t}: gradient unavailable ({e}); parameters kept")
                else:
                    adapt_parameters(state, grads)
                    grad_norms = tuple(
                        float(np.linalg.norm(g)) if g is not None else 0.0 for g in grads
                    )
            u = ancillary.us[0]
            state.x_true = plant.step(state.x_true, u) + sample_disturbance(task.disturbance, t)
            state.x_nominal = plant.step(state.x_nominal, nominal.us[0])
        except DIVERGENCE_ERRORS as e:
            logger.info(f"Trial {trial} diverged at t={t}: {e}")
            outcome = TrialOutcome.DIVERGED
            break

        state.nominal_warm = nominal.trajectory.shifted_controls()
        state.ancillary_warm = ancillary.trajectory.shifted_controls()
        log.append(
            StepRecord(
                t=t,
                u_applied=u.copy(),
                x_true=state.x_true.copy(),
                x_nominal=state.x_nominal.copy(),
                loss_value=loss.value,
                grad_norms=grad_norms,
                nominal_stats=nominal.stats(),
                ancillary_stats=ancillary.stats(),
                h_true=task.safety.h(state.x_true) if np.all(np.isfinite(state.x_true)) else -np.inf,
                barrier_true=true_barrier_value(task.safety, task.barrier, state.x_true),
                wall_time=time.perf_counter() - started,
            ),
        )
    else:
        outcome = _classify(task, state.x_true) or TrialOutcome.TIMEOUT

    logger.info(
        f"{task.config.system} {'dt' if adapt else 'nt'}-mpc trial {trial}: "
        f"{outcome.value} after {len(log)} steps",
    )
    return TrialResult(trial=trial, seed=seed, outcome=outcome, steps=len(log), log=log)


def run_dt_mpc(
    cfg: TaskConfig,
    seed: int = 0,
    trial: int = 0,
    settings: MpcSettings | None = None,
) -> TrialResult:
    """Adaptive tube MPC trial; the seed/trial key fixes disturbances and randomized task parts."""
    task = build_task(cfg, seed, trial)
    return _run_tube_mpc(task, settings or MpcSettings(), True, seed, trial)


def run_nt_mpc(
    cfg: TaskConfig,
    seed: int = 0,
    trial: int = 0,
    settings: MpcSettings | None = None,
) -> TrialResult:
    """Non-adaptive baseline: both layers get the full iteration budget."""
    task = build_task(cfg, seed, trial)
    return _run_tube_mpc(task, settings or MpcSettings(), False, seed, trial)


@dataclass
class TubeRunner:
    """Runs trials of one algorithm with fixed task and controller settings."""

    cfg: TaskConfig
    settings: MpcSettings = field(default_factory=MpcSettings)
    adapt: bool = True

    def __call__(self, seed: int, trial: int) -> TrialResult:
        run = run_dt_mpc if self.adapt else run_nt_mpc
        return run(self.cfg, seed, trial, self.settings)

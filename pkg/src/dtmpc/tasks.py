"""
Benchmark tasks: per-system defaults and construction of a task instance.
"""

import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Any

import numpy as np

from .barrier import BarrierConfig, BarrierKind
from .dynamics import (
    ArmLinkPoints,
    DubinsModel,
    DynamicsModel,
    Obstacle,
    QuadrotorModel,
    RobotArmModel,
    SafetyFunction,
    StatePosition,
    arm_forward_kinematics,
    quadrotor_obstacle_field,
    start_rng,
)
from .models import ControlBounds, DisturbanceConfig
from .problem import EndEffectorFeature, FeatureMap, IdentityFeature, ParameterLayout

logger = logging.getLogger(__name__)

SYSTEMS = ("dubins", "quadrotor", "robot_arm")

DUBINS_OBSTACLES = (
    ((5.0, 5.4), 1.0),
    ((3.0, 7.5), 1.0),
    ((7.5, 3.0), 0.8),
)
ARM_OBSTACLES = (
    ((1.0, 0.0), 0.5),
    ((1.0, 1.5), 0.5),
    ((1.0, -1.5), 0.5),
    ((2.0, -2.0), 0.5),
    ((2.0, 2.0), 0.5),
)


@dataclass(frozen=True)
class TaskConfig:
    """Experiment settings of one benchmark system."""

    system: str
    dt: float
    horizon: int
    sim_steps: int
    target: tuple[float, ...]
    success_radius: float
    control_lower: tuple[float, ...]
    control_upper: tuple[float, ...]
    disturbance_lower: tuple[float, ...]
    disturbance_upper: tuple[float, ...]
    nominal_q: tuple[float, ...]
    nominal_r: tuple[float, ...]
    nominal_qf: tuple[float, ...]
    nominal_qb: float = 1.0
    x0: tuple[float, ...] | None = None
    ancillary_q: float = 1.0
    ancillary_r: float = 1.0
    ancillary_qb: float = 1.0
    barrier_kind: str = "relaxed_inverse"
    alpha: float = 0.0
    gamma: float = 0.0
    adapt_nominal: bool = False
    adapt_barrier: bool = False
    nominal_frozen: tuple[str, ...] = ()
    n_random_obstacles: int = 30
    workspace: tuple[float, float] | None = None
    start_clearance: float = 0.05
    loss_variant: str = "full_state"

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"Unknown system '{self.system}', expected one of {SYSTEMS}")
        if self.dt <= 0 or self.horizon < 1 or self.sim_steps < 1:
            raise ValueError("dt, horizon and sim_steps must be positive")
        for name in (
            "target",
            "control_lower",
            "control_upper",
            "disturbance_lower",
            "disturbance_upper",
            "nominal_q",
            "nominal_r",
            "nominal_qf",
            "x0",
            "workspace",
        ):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in value))
        object.__setattr__(self, "nominal_frozen", tuple(str(group) for group in self.nominal_frozen))

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    def with_overrides(self, overrides: dict[str, Any]) -> "TaskConfig":
        unknown = set(overrides) - self.field_names()
        if unknown:
            raise ValueError(f"Unknown task settings: {sorted(unknown)}")
        return replace(self, **overrides)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def default_task_config(system: str) -> TaskConfig:
    """Published experiment settings for ``system``."""
    if system == "dubins":
        return TaskConfig(
            system="dubins",
            dt=0.01,
            horizon=50,
            sim_steps=300,
            x0=(0.0, 0.0, math.pi / 4),
            target=(10.0, 10.0, math.pi / 4),
            success_radius=0.25,
            control_lower=(-10.0, -math.pi),
            control_upper=(10.0, math.pi),
            disturbance_lower=(-0.05,) * 3,
            disturbance_upper=(0.05,) * 3,
            nominal_q=(1.0, 1.0, 0.0),
            nominal_r=(1.0, 1.0),
            nominal_qf=(1000.0, 1000.0, 1000.0),
            nominal_qb=1.0,
        )
    if system == "quadrotor":
        return TaskConfig(
            system="quadrotor",
            dt=0.02,
            horizon=50,
            sim_steps=300,
            x0=(0.0,) * 12,
            target=(10.0, 10.0, 10.0) + (0.0,) * 9,
            success_radius=0.5,
            control_lower=(0.0, -10.0, -10.0, -10.0),
            control_upper=(50.0, 10.0, 10.0, 10.0),
            disturbance_lower=(-0.01,) * 6 + (-0.1,) * 6,
            disturbance_upper=(0.01,) * 6 + (0.1,) * 6,
            nominal_q=(1.0,) * 12,
            nominal_r=(1.0,) * 4,
            nominal_qf=(1000.0,) * 12,
            nominal_qb=1.0,
            workspace=(-2.0, 12.0),
        )
    if system == "robot_arm":
        return TaskConfig(
            system="robot_arm",
            dt=0.02,
            horizon=50,
            sim_steps=400,
            target=(2.0, 0.0, 1.0),
            success_radius=0.25,
            control_lower=(-10.0,) * 6,
            control_upper=(10.0,) * 6,
            disturbance_lower=(-0.01,) * 6 + (-0.1,) * 6,
            disturbance_upper=(0.01,) * 6 + (0.1,) * 6,
            nominal_q=(100.0,) * 3,
            nominal_r=(100.0,) * 6,
            nominal_qf=(10000.0,) * 3,
            nominal_qb=1e-3,
            ancillary_qb=1e-3,
            adapt_nominal=True,
            nominal_frozen=("q", "r"),
        )
    raise ValueError(f"Unknown system '{system}', expected one of {SYSTEMS}")


@dataclass
class SystemTask:
    """A task instance: plant, safe set, start state and parameter layouts."""

    config: TaskConfig
    plant: DynamicsModel
    safety: SafetyFunction
    bounds: ControlBounds
    disturbance: DisturbanceConfig
    x0: np.ndarray
    nominal_feature: FeatureMap
    position_indices: tuple[int, ...]

    @property
    def barrier(self) -> BarrierConfig:
        cfg = self.config
        return BarrierConfig(
            kind=BarrierKind(cfg.barrier_kind),
            alpha=cfg.alpha,
            gamma=cfg.gamma,
            q_b=cfg.nominal_qb,
        )

    @property
    def nominal_layout(self) -> ParameterLayout:
        return ParameterLayout(n_q=self.nominal_feature.n_e, n_u=self.plant.n_u)

    @property
    def ancillary_layout(self) -> ParameterLayout:
        return ParameterLayout(n_q=self.plant.n_x, n_u=self.plant.n_u)

    @property
    def target(self) -> np.ndarray:
        return np.asarray(self.config.target)

    def nominal_theta0(self) -> np.ndarray:
        cfg = self.config
        return self.nominal_layout.pack(
            np.asarray(cfg.nominal_q),
            np.asarray(cfg.nominal_r),
            cfg.nominal_qb,
            cfg.gamma,
            cfg.alpha,
        )

    def ancillary_theta0(self) -> np.ndarray:
        cfg = self.config
        layout = self.ancillary_layout
        return layout.pack(
            np.full(layout.n_q, cfg.ancillary_q),
            np.full(layout.n_u, cfg.ancillary_r),
            cfg.ancillary_qb,
            cfg.gamma,
            cfg.alpha,
        )

    def distance_to_target(self, x: np.ndarray) -> float:
        if self.config.system == "robot_arm":
            end_effector, _ = arm_forward_kinematics(x[:6])
            return float(np.linalg.norm(end_effector - self.target))
        idx = list(self.position_indices)
        return float(np.linalg.norm(x[idx] - self.target[idx]))

    def reached(self, x: np.ndarray) -> bool:
        return self.distance_to_target(x) <= self.config.success_radius

    def describe(self) -> dict[str, Any]:
        return {
            "system": self.config.system,
            "x0": self.x0.tolist(),
            "target": list(self.config.target),
            "safety": self.safety.describe(),
        }


def _obstacles(spec: tuple[tuple[tuple[float, ...], float], ...]) -> list[Obstacle]:
    return [Obstacle(center=np.array(center), radius=radius) for center, radius in spec]


def sample_arm_start(
    safety: SafetyFunction,
    seed: int,
    trial: int,
    min_clearance: float = 0.05,
    max_draws: int = 100_000,
) -> np.ndarray:
    """Random joint angles in [-pi, pi] with the whole arm above the plane and clear of obstacles."""
    rng = start_rng(seed, trial)
    for _ in range(max_draws):
        x = np.concatenate([rng.uniform(-math.pi, math.pi, size=6), np.zeros(6)])
        if safety.h(x) > min_clearance:
            return x
    raise RuntimeError("Could not sample a feasible arm configuration")


def build_task(cfg: TaskConfig, seed: int = 0, trial: int = 0) -> SystemTask:
    """
    Instantiate the task of ``cfg.system`` for one (seed, trial) key.

    The seed only affects randomized parts: the quadrotor obstacle field, the
    arm start configuration and the disturbance stream.
    """
    disturbance = DisturbanceConfig(
        lower=np.asarray(cfg.disturbance_lower),
        upper=np.asarray(cfg.disturbance_upper),
        seed=seed,
        trial=trial,
    )
    bounds = ControlBounds(np.asarray(cfg.control_lower), np.asarray(cfg.control_upper))

    plant: DynamicsModel
    if cfg.system == "dubins":
        plant = DubinsModel(dt=cfg.dt)
        safety = SafetyFunction(
            point_map=StatePosition(3, (0, 1)),
            obstacles=_obstacles(DUBINS_OBSTACLES),
            description="dubins circular obstacles",
        )
        x0 = np.asarray(cfg.x0)
        feature: FeatureMap = IdentityFeature(3)
        positions: tuple[int, ...] = (0, 1)
    elif cfg.system == "quadrotor":
        plant = QuadrotorModel(dt=cfg.dt)
        x0 = np.asarray(cfg.x0)
        obstacles = quadrotor_obstacle_field(
            seed,
            trial,
            n_random=cfg.n_random_obstacles,
            keep_clear=(tuple(x0[:3]), cfg.target[:3]),
        )
        lower = upper = None
        if cfg.workspace is not None:
            lower = np.full(3, cfg.workspace[0])
            upper = np.full(3, cfg.workspace[1])
        safety = SafetyFunction(
            point_map=StatePosition(12, (0, 1, 2)),
            obstacles=obstacles,
            lower=lower,
            upper=upper,
            description="quadrotor spherical obstacle field",
        )
        feature = IdentityFeature(12)
        positions = (0, 1, 2)
    else:
        plant = RobotArmModel(dt=cfg.dt)
        safety = SafetyFunction(
            point_map=ArmLinkPoints(),
            obstacles=_obstacles(ARM_OBSTACLES),
            lower=np.array([-np.inf, -np.inf, 0.0]),
            description="arm cylinders and ground plane",
        )
        if cfg.x0 is not None:
            x0 = np.asarray(cfg.x0)
        else:
            x0 = sample_arm_start(safety, seed, trial, cfg.start_clearance)
        feature = EndEffectorFeature()
        # joint angles are not workspace positions
        positions = ()

    if not safety.is_safe(x0):
        raise ValueError(f"Start state of {cfg.system} is not in the safe set")
    logger.debug(f"Built {cfg.system} task for seed {seed}, trial {trial}")
    return SystemTask(
        config=cfg,
        plant=plant,
        safety=safety,
        bounds=bounds,
        disturbance=disturbance,
        x0=x0,
        nominal_feature=feature,
        position_indices=positions,
    )

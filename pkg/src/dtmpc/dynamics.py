"""
Discrete-time dynamics models, safety functions and disturbance sampling.

All models integrate with explicit Euler. Jacobians are analytic. The
multiplier-weighted second derivatives used by full-Newton bundles are
analytic for the Dubins vehicle and the (linear) arm, and central
differences of the analytic Jacobians otherwise.

Arm convention: angles are ordered (yaw_1, pitch_1, yaw_2, pitch_2, yaw_3,
pitch_3) and give the absolute orientation of each link. A link with yaw y
and pitch p points along (cos p cos y, cos p sin y, sin p), so all-zero
angles stretch the arm along +x with the end effector at (3.5, 0, 0).
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .finite_difference import HESSIAN_STEP, central_difference
from .models import DisturbanceConfig

logger = logging.getLogger(__name__)

GRAVITY = 9.81
SINGULARITY_MARGIN = 1e-3
ARM_LINK_LENGTHS = (1.0, 1.5, 1.0)
ARM_LINK_SAMPLES = (0.25, 0.5, 0.75, 1.0)

# Leading entries of the counter-based RNG keys
DISTURBANCE_STREAM = 0
FIELD_STREAM = 1
START_STREAM = 2


class SingularAttitudeError(Exception):
    """Exception raised when the quadrotor pitch reaches the Euler-angle singularity."""


def theta_size(theta: np.ndarray | None) -> int:
    return 0 if theta is None else int(np.size(theta))


@dataclass(frozen=True)
class SecondOrderTerms:
    """Second derivatives of lambda^T f(x, u, theta)."""

    xx: np.ndarray
    ux: np.ndarray
    uu: np.ndarray
    xtheta: np.ndarray
    utheta: np.ndarray

    @classmethod
    def zeros(cls, n_x: int, n_u: int, n_theta: int) -> "SecondOrderTerms":
        return cls(
            xx=np.zeros((n_x, n_x)),
            ux=np.zeros((n_u, n_x)),
            uu=np.zeros((n_u, n_u)),
            xtheta=np.zeros((n_x, n_theta)),
            utheta=np.zeros((n_u, n_theta)),
        )


class DynamicsModel(ABC):
    """Discrete-time model x_{k+1} = f(x_k, u_k, theta)."""

    n_x: int
    n_u: int
    dt: float
    # theta entries the model reads; everything else has a zero f_theta column
    theta_dependencies: tuple[int, ...] = ()

    @abstractmethod
    def step(
        self,
        x: np.ndarray,
        u: np.ndarray,
        theta: np.ndarray | None = None,
    ) -> np.ndarray:
        """Next state."""

    @abstractmethod
    def jacobians(
        self,
        x: np.ndarray,
        u: np.ndarray,
        theta: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Return (f_x, f_u)."""

    def param_jacobian(
        self,
        x: np.ndarray,
        u: np.ndarray,
        theta: np.ndarray | None,
    ) -> np.ndarray:
        """Return f_theta, shape (n_x, n_theta)."""
        return np.zeros((self.n_x, theta_size(theta)))

    def hold_control(self) -> np.ndarray:
        """Control that keeps the model at rest."""
        return np.zeros(self.n_u)

    def lagrangian_hessians(
        self,
        x: np.ndarray,
        u: np.ndarray,
        theta: np.ndarray | None,
        lam: np.ndarray,
    ) -> SecondOrderTerms:
        """Second derivatives of lam^T f by central differences of the Jacobians."""
        n_x = self.n_x

        def gradient(z: np.ndarray, params: np.ndarray | None = theta) -> np.ndarray:
            f_x, f_u = self.jacobians(z[:n_x], z[n_x:], params)
            return np.concatenate([f_x.T @ lam, f_u.T @ lam])

        z = np.concatenate([x, u])
        hess = central_difference(gradient, z, HESSIAN_STEP)
        hess = 0.5 * (hess + hess.T)

        cross = np.zeros((z.size, theta_size(theta)))
        if theta is not None:
            for j in self.theta_dependencies:

                def shifted(value: np.ndarray, j: int = j) -> np.ndarray:
                    params = theta.copy()
                    params[j] = value[0]
                    return gradient(z, params)

                cross[:, j] = central_difference(shifted, theta[j : j + 1], HESSIAN_STEP)[
                    :,
                    0,
                ]

        return SecondOrderTerms(
            xx=hess[:n_x, :n_x],
            ux=hess[n_x:, :n_x],
            uu=hess[n_x:, n_x:],
            xtheta=cross[:n_x],
            utheta=cross[n_x:],
        )


class LinearModel(DynamicsModel):
    """Time-invariant linear model x' = A x + B u."""

    def __init__(self, a: np.ndarray, b: np.ndarray, dt: float = 1.0):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.a.shape[0] != self.a.shape[1] or self.b.shape[0] != self.a.shape[0]:
            raise ValueError(f"Incompatible shapes A{self.a.shape}, B{self.b.shape}")
        self.n_x = self.a.shape[0]
        self.n_u = self.b.shape[1]
        self.dt = dt

    def step(self, x, u, theta=None):
        return self.a @ x + self.b @ u

    def jacobians(self, x, u, theta=None):
        return self.a.copy(), self.b.copy()

    def lagrangian_hessians(self, x, u, theta, lam):
        return SecondOrderTerms.zeros(self.n_x, self.n_u, theta_size(theta))


# ---------------------------------------------------------------------------
# Dubins vehicle
# ---------------------------------------------------------------------------


def step_dubins(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Unicycle step: state (px, py, yaw), control (v, omega)."""
    yaw = x[2]
    v, omega = u[0], u[1]
    return np.array(
        [
            x[0] + dt * v * np.cos(yaw),
            x[1] + dt * v * np.sin(yaw),
            yaw + dt * omega,
        ],
    )


class DubinsModel(DynamicsModel):
    """Planar unicycle."""

    n_x = 3
    n_u = 2

    def __init__(self, dt: float = 0.01):
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.dt = dt

    def step(self, x, u, theta=None):
        return step_dubins(x, u, self.dt)

    def jacobians(self, x, u, theta=None):
        dt = self.dt
        cos_yaw, sin_yaw = np.cos(x[2]), np.sin(x[2])
        v = u[0]
        f_x = np.eye(3)
        f_x[0, 2] = -dt * v * sin_yaw
        f_x[1, 2] = dt * v * cos_yaw
        f_u = np.array([[dt * cos_yaw, 0.0], [dt * sin_yaw, 0.0], [0.0, dt]])
        return f_x, f_u

    def lagrangian_hessians(self, x, u, theta, lam):
        dt = self.dt
        cos_yaw, sin_yaw = np.cos(x[2]), np.sin(x[2])
        terms = SecondOrderTerms.zeros(3, 2, theta_size(theta))
        terms.xx[2, 2] = -dt * u[0] * (lam[0] * cos_yaw + lam[1] * sin_yaw)
        terms.ux[0, 2] = dt * (lam[1] * cos_yaw - lam[0] * sin_yaw)
        return terms


# ---------------------------------------------------------------------------
# Quadrotor
# ---------------------------------------------------------------------------


def _skew(a: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def _check_attitude(x: np.ndarray) -> None:
    if abs(x[4]) >= np.pi / 2 - SINGULARITY_MARGIN:
        raise SingularAttitudeError(f"Pitch {x[4]:.6f} rad is at the Euler singularity")


def _euler_rate_matrix(roll: float, pitch: float) -> np.ndarray:
    """Maps body rates to Euler-angle rates."""
    sr, cr = np.sin(roll), np.cos(roll)
    tp, cp = np.tan(pitch), np.cos(pitch)
    return np.array(
        [
            [1.0, sr * tp, cr * tp],
            [0.0, cr, -sr],
            [0.0, sr / cp, cr / cp],
        ],
    )


def _thrust_axis(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Third column of the body-to-world rotation."""
    sr, cr = np.sin(roll), np.cos(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    sy, cy = np.sin(yaw), np.cos(yaw)
    return np.array([cr * sp * cy + sr * sy, cr * sp * sy - sr * cy, cr * cp])


def _quadrotor_rates(
    x: np.ndarray,
    u: np.ndarray,
    mass: float,
    inertia: np.ndarray,
) -> np.ndarray:
    roll, pitch, yaw = x[3:6]
    velocity = x[6:9]
    omega = x[9:12]
    thrust, torque = u[0], u[1:4]

    euler_rates = _euler_rate_matrix(roll, pitch) @ omega
    acceleration = thrust / mass * _thrust_axis(roll, pitch, yaw)
    acceleration[2] -= GRAVITY
    angular_acceleration = (torque - np.cross(omega, inertia * omega)) / inertia
    return np.concatenate([velocity, euler_rates, acceleration, angular_acceleration])


def step_quadrotor(
    x: np.ndarray,
    u: np.ndarray,
    dt: float,
    mass: float = 1.0,
    inertia: np.ndarray | None = None,
) -> np.ndarray:
    """
    12-state quadrotor step.

    State: position (3), roll/pitch/yaw (3), world-frame velocity (3), body
    rates (3). Control: collective thrust and three body moments.

    Raises:
        SingularAttitudeError: If the pitch is within the singularity margin
    """
    _check_attitude(x)
    inertia = np.ones(3) if inertia is None else np.asarray(inertia, dtype=float)
    return x + dt * _quadrotor_rates(x, u, mass, inertia)


class QuadrotorModel(DynamicsModel):
    """Euler-angle quadrotor with diagonal inertia."""

    n_x = 12
    n_u = 4

    def __init__(self, dt: float = 0.02, mass: float = 1.0, inertia=(1.0, 1.0, 1.0)):
        if dt <= 0 or mass <= 0:
            raise ValueError("dt and mass must be positive")
        self.dt = dt
        self.mass = mass
        self.inertia = np.asarray(inertia, dtype=float)

    def step(self, x, u, theta=None):
        return step_quadrotor(x, u, self.dt, self.mass, self.inertia)

    def hold_control(self):
        return np.array([self.mass * GRAVITY, 0.0, 0.0, 0.0])

    def jacobians(self, x, u, theta=None):
        _check_attitude(x)
        roll, pitch, yaw = x[3:6]
        omega = x[9:12]
        thrust = u[0]
        sr, cr = np.sin(roll), np.cos(roll)
        sp, cp, tp = np.sin(pitch), np.cos(pitch), np.tan(pitch)
        sy, cy = np.sin(yaw), np.cos(yaw)

        a = np.zeros((12, 12))
        b = np.zeros((12, 4))
        a[0:3, 6:9] = np.eye(3)

        a[3:6, 9:12] = _euler_rate_matrix(roll, pitch)
        w_roll = np.array(
            [[0.0, cr * tp, -sr * tp], [0.0, -sr, -cr], [0.0, cr / cp, -sr / cp]],
        )
        w_pitch = np.array(
            [
                [0.0, sr / cp**2, cr / cp**2],
                [0.0, 0.0, 0.0],
                [0.0, sr * sp / cp**2, cr * sp / cp**2],
            ],
        )
        a[3:6, 3] = w_roll @ omega
        a[3:6, 4] = w_pitch @ omega

        scale = thrust / self.mass
        a[6:9, 3] = scale * np.array(
            [-sr * sp * cy + cr * sy, -sr * sp * sy - cr * cy, -sr * cp],
        )
        a[6:9, 4] = scale * np.array([cr * cp * cy, cr * cp * sy, -cr * sp])
        a[6:9, 5] = scale * np.array([-cr * sp * sy + sr * cy, cr * sp * cy + sr * sy, 0.0])
        b[6:9, 0] = _thrust_axis(roll, pitch, yaw) / self.mass

        inertia = self.inertia
        gyroscopic = _skew(omega) @ np.diag(inertia) - _skew(inertia * omega)
        a[9:12, 9:12] = -gyroscopic / inertia[:, None]
        b[9:12, 1:4] = np.diag(1.0 / inertia)

        return np.eye(12) + self.dt * a, self.dt * b


# ---------------------------------------------------------------------------
# Robot arm
# ---------------------------------------------------------------------------


def step_robot_arm(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Joint-space double integrator: angles (6) and rates (6)."""
    return np.concatenate([x[:6] + dt * x[6:], x[6:] + dt * u])


class RobotArmModel(DynamicsModel):
    """Six-joint double integrator."""

    n_x = 12
    n_u = 6

    def __init__(self, dt: float = 0.02):
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.dt = dt

    def step(self, x, u, theta=None):
        return step_robot_arm(x, u, self.dt)

    def jacobians(self, x, u, theta=None):
        f_x = np.eye(12)
        f_x[:6, 6:] = self.dt * np.eye(6)
        f_u = np.zeros((12, 6))
        f_u[6:, :] = self.dt * np.eye(6)
        return f_x, f_u

    def lagrangian_hessians(self, x, u, theta, lam):
        return SecondOrderTerms.zeros(12, 6, theta_size(theta))


def _link_direction(
    yaw: float,
    pitch: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit link direction with its derivatives in (yaw, pitch)."""
    sy, cy = np.sin(yaw), np.cos(yaw)
    sp, cp = np.sin(pitch), np.cos(pitch)
    direction = np.array([cp * cy, cp * sy, sp])
    jac = np.array([[-cp * sy, -sp * cy], [cp * cy, -sp * sy], [0.0, cp]])
    hess = np.zeros((3, 2, 2))
    hess[:, 0, 0] = [-cp * cy, -cp * sy, 0.0]
    hess[:, 0, 1] = [sp * sy, -sp * cy, 0.0]
    hess[:, 1, 0] = hess[:, 0, 1]
    hess[:, 1, 1] = [-cp * cy, -cp * sy, -sp]
    return direction, jac, hess


def arm_forward_kinematics(
    angles: np.ndarray,
    link_lengths: tuple[float, ...] = ARM_LINK_LENGTHS,
    samples: tuple[float, ...] = ARM_LINK_SAMPLES,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """
    End effector and sampled link points of the three-link arm.

    Args:
        angles: (yaw_1, pitch_1, ..., yaw_3, pitch_3)
        link_lengths: Link lengths from the base outwards
        samples: Fractions along each link at which points are returned

    Returns:
        Tuple of end-effector position and the list of link points, link by link
    """
    joint = np.zeros(3)
    points = []
    for i, length in enumerate(link_lengths):
        direction, _, _ = _link_direction(angles[2 * i], angles[2 * i + 1])
        for s in samples:
            points.append(joint + s * length * direction)
        joint = joint + length * direction
    return joint, points


def arm_point_derivatives(
    angles: np.ndarray,
    link: int,
    fraction: float,
    link_lengths: tuple[float, ...] = ARM_LINK_LENGTHS,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position, Jacobian (3, 6) and Hessian (3, 6, 6) of a point on a link."""
    point = np.zeros(3)
    jac = np.zeros((3, 6))
    hess = np.zeros((3, 6, 6))
    for j in range(link + 1):
        weight = link_lengths[j] * (fraction if j == link else 1.0)
        direction, d_jac, d_hess = _link_direction(angles[2 * j], angles[2 * j + 1])
        block = slice(2 * j, 2 * j + 2)
        point += weight * direction
        jac[:, block] += weight * d_jac
        hess[:, block, block] += weight * d_hess
    return point, jac, hess


# ---------------------------------------------------------------------------
# Safety functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Obstacle:
    """
    Ball obstacle.

    A center with fewer coordinates than the checked points only constrains
    the leading coordinates, so a 2-D center in 3-D space is a vertical
    cylinder.
    """

    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        if center.ndim != 1 or center.size == 0:
            raise ValueError("Obstacle center must be a non-empty vector")
        if self.radius <= 0:
            raise ValueError(f"Obstacle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", center)

    def clearance(self, point: np.ndarray) -> float:
        offset = point[: self.center.size] - self.center
        return float(offset @ offset - self.radius**2)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "radius": float(self.radius)}


def obstacle_h(position: np.ndarray, obstacles: list[Obstacle]) -> float:
    """Smallest squared-distance clearance ||p - c||^2 - r^2 over the obstacles."""
    if not obstacles:
        return np.inf
    return min(obstacle.clearance(position) for obstacle in obstacles)


class PointMap(ABC):
    """Points of the body that are checked against the safe set."""

    n_x: int

    @abstractmethod
    def points(self, x: np.ndarray) -> np.ndarray:
        """Array (P, d)."""

    @abstractmethod
    def point_jacobians(self, x: np.ndarray) -> np.ndarray:
        """Array (P, d, n_x)."""

    @abstractmethod
    def point_hessians(self, x: np.ndarray) -> np.ndarray:
        """Array (P, d, n_x, n_x)."""


class StatePosition(PointMap):
    """A single point read straight from state coordinates."""

    def __init__(self, n_x: int, indices: tuple[int, ...]):
        self.n_x = n_x
        self.indices = tuple(indices)
        self._selection = np.zeros((1, len(indices), n_x))
        for row, index in enumerate(self.indices):
            self._selection[0, row, index] = 1.0

    def points(self, x):
        return x[list(self.indices)][None, :]

    def point_jacobians(self, x):
        return self._selection

    def point_hessians(self, x):
        return np.zeros((1, len(self.indices), self.n_x, self.n_x))


class ArmLinkPoints(PointMap):
    """Sampled points along the arm links."""

    n_x = 12

    def __init__(self, samples: tuple[float, ...] = ARM_LINK_SAMPLES):
        self.samples = tuple(samples)

    def points(self, x):
        _, points = arm_forward_kinematics(x[:6], samples=self.samples)
        return np.array(points)

    def _derivatives(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n_points = len(ARM_LINK_LENGTHS) * len(self.samples)
        jacobians = np.zeros((n_points, 3, 12))
        hessians = np.zeros((n_points, 3, 12, 12))
        row = 0
        for link in range(len(ARM_LINK_LENGTHS)):
            for fraction in self.samples:
                _, jac, hess = arm_point_derivatives(x[:6], link, fraction)
                jacobians[row, :, :6] = jac
                hessians[row, :, :6, :6] = hess
                row += 1
        return jacobians, hessians

    def point_jacobians(self, x):
        return self._derivatives(x)[0]

    def point_hessians(self, x):
        return self._derivatives(x)[1]


@dataclass
class SafetyFunction:
    """
    Safe set {x : h(x) > 0} built from obstacle clearances and point bounds.

    Each (point, obstacle) pair and each finite (point, coordinate) bound is
    one constraint component; h is their minimum.
    """

    point_map: PointMap
    obstacles: list[Obstacle] = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    description: str = ""

    def components(self, x: np.ndarray) -> np.ndarray:
        points = self.point_map.points(x)
        values = []
        for point in points:
            values.extend(obstacle.clearance(point) for obstacle in self.obstacles)
            values.extend(self._bound_values(point))
        return np.asarray(values, dtype=float)

    def _bound_values(self, point: np.ndarray) -> list[float]:
        values = []
        for i, coordinate in enumerate(point):
            if self.lower is not None and np.isfinite(self.lower[i]):
                values.append(coordinate - self.lower[i])
            if self.upper is not None and np.isfinite(self.upper[i]):
                values.append(self.upper[i] - coordinate)
        return values

    def component_jacobian(self, x: np.ndarray) -> np.ndarray:
        points = self.point_map.points(x)
        point_jacs = self.point_map.point_jacobians(x)
        rows = []
        for point, jac in zip(points, point_jacs, strict=True):
            for obstacle in self.obstacles:
                k = obstacle.center.size
                rows.append(2.0 * (point[:k] - obstacle.center) @ jac[:k])
            for i in range(point.size):
                if self.lower is not None and np.isfinite(self.lower[i]):
                    rows.append(jac[i])
                if self.upper is not None and np.isfinite(self.upper[i]):
                    rows.append(-jac[i])
        if not rows:
            return np.zeros((0, self.point_map.n_x))
        return np.vstack(rows)

    def component_hessians(self, x: np.ndarray) -> np.ndarray:
        """Second derivatives of every component, shape (C, n_x, n_x), in component order."""
        points = self.point_map.points(x)
        point_jacs = self.point_map.point_jacobians(x)
        point_hessians = self.point_map.point_hessians(x)
        blocks = []
        for point, jac, hess in zip(points, point_jacs, point_hessians, strict=True):
            for obstacle in self.obstacles:
                k = obstacle.center.size
                offset = point[:k] - obstacle.center
                blocks.append(2.0 * (jac[:k].T @ jac[:k] + np.tensordot(offset, hess[:k], axes=1)))
            for i in range(point.size):
                if self.lower is not None and np.isfinite(self.lower[i]):
                    blocks.append(hess[i])
                if self.upper is not None and np.isfinite(self.upper[i]):
                    blocks.append(-hess[i])
        n = self.point_map.n_x
        if not blocks:
            return np.zeros((0, n, n))
        return np.array(blocks)

    @property
    def n_x(self) -> int:
        return self.point_map.n_x

    def h(self, x: np.ndarray) -> float:
        values = self.components(x)
        return float(values.min()) if values.size else np.inf

    def grad_h(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the active (minimal) component."""
        values = self.components(x)
        if values.size == 0:
            return np.zeros(self.n_x)
        return self.component_jacobian(x)[int(np.argmin(values))]

    def is_safe(self, x: np.ndarray) -> bool:
        return self.h(x) > 0.0

    def describe(self) -> dict:
        return {
            "description": self.description,
            "obstacles": [obstacle.to_dict() for obstacle in self.obstacles],
            "lower": None if self.lower is None else self.lower.tolist(),
            "upper": None if self.upper is None else self.upper.tolist(),
        }


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


def sample_disturbance(cfg: DisturbanceConfig, t: int) -> np.ndarray:
    """Uniform disturbance keyed by (seed, trial, t); no generator state is shared."""
    rng = np.random.default_rng([DISTURBANCE_STREAM, cfg.seed, cfg.trial, t])
    return rng.uniform(cfg.lower, cfg.upper)


def quadrotor_obstacle_field(
    seed: int,
    trial: int,
    n_random: int = 30,
    extent: tuple[float, float] = (0.0, 10.0),
    radii: tuple[float, float] = (0.5, 1.5),
    keep_clear: tuple[tuple[float, ...], ...] = ((0.0, 0.0, 0.0), (10.0, 10.0, 10.0)),
    clearance: float = 0.5,
    max_draws: int = 100_000,
) -> list[Obstacle]:
    """
    Random spherical obstacles plus the fixed sphere at (5, 5, 5).

    Spheres that would cover a keep-clear point (start or target) are redrawn.
    """
    rng = np.random.default_rng([FIELD_STREAM, seed, trial])
    protected = [np.asarray(point, dtype=float) for point in keep_clear]
    obstacles = [Obstacle(center=np.array([5.0, 5.0, 5.0]), radius=1.5)]
    draws = 0
    while len(obstacles) < n_random + 1:
        draws += 1
        if draws > max_draws:
            raise RuntimeError("Could not place obstacles away from start and target")
        center = rng.uniform(extent[0], extent[1], size=3)
        radius = float(rng.uniform(radii[0], radii[1]))
        if any(np.linalg.norm(point - center) <= radius + clearance for point in protected):
            continue
        obstacles.append(Obstacle(center=center, radius=radius))
    logger.debug(f"Placed {len(obstacles)} obstacles after {draws} draws (seed {seed}, trial {trial})")
    return obstacles


def start_rng(seed: int, trial: int) -> np.random.Generator:
    """Generator for per-trial initial conditions."""
    return np.random.default_rng([START_STREAM, seed, trial])

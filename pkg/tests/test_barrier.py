"""Unit tests for barrier.py."""

import numpy as np
import pytest

from dtmpc.barrier import (
    BarrierConfig,
    BarrierDomainError,
    BarrierKind,
    EmbeddedInitialState,
    aggregate_barrier,
    augment,
    barrier_terms,
    barrier_value,
    dbas_step,
    init_barrier_state,
    true_barrier_value,
)
from dtmpc.dynamics import (
    ArmLinkPoints,
    DubinsModel,
    Obstacle,
    RobotArmModel,
    SafetyFunction,
    StatePosition,
)
from dtmpc.finite_difference import central_difference

GAMMA_INDEX = 0
ALPHA_INDEX = 1


def dubins_safety() -> SafetyFunction:
    return SafetyFunction(
        point_map=StatePosition(3, (0, 1)),
        obstacles=[
            Obstacle(center=np.array([6.0, 5.0]), radius=1.0),
            Obstacle(center=np.array([2.0, 1.0]), radius=0.5),
        ],
    )


def embedded_model(kind: BarrierKind = BarrierKind.RELAXED_INVERSE):
    cfg = BarrierConfig(kind=kind, alpha=1.5, gamma=0.3)
    return augment(
        DubinsModel(dt=0.05),
        dubins_safety(),
        cfg,
        gamma_index=GAMMA_INDEX,
        alpha_index=ALPHA_INDEX,
    )


def arm_embedded_model():
    safety = SafetyFunction(
        point_map=ArmLinkPoints(),
        obstacles=[
            Obstacle(center=np.array([1.0, 0.0]), radius=0.5),
            Obstacle(center=np.array([2.0, 2.0]), radius=0.5),
        ],
        lower=np.array([-np.inf, -np.inf, 0.0]),
    )
    cfg = BarrierConfig(kind=BarrierKind.RELAXED_INVERSE, alpha=0.3, gamma=0.4)
    return augment(
        RobotArmModel(dt=0.02),
        safety,
        cfg,
        gamma_index=GAMMA_INDEX,
        alpha_index=ALPHA_INDEX,
    )


class TestBarrierFunctions:
    """Tests for the scalar barrier family."""

    def test_inverse(self):
        """Test value and derivatives of 1/zeta."""
        terms = barrier_terms(BarrierKind.INVERSE, np.array([2.0]))
        assert terms.value[0] == pytest.approx(0.5)
        assert terms.d_zeta[0] == pytest.approx(-0.25)
        assert terms.d2_zeta[0] == pytest.approx(0.25)

    def test_log(self):
        """Test value and derivatives of -log(zeta)."""
        terms = barrier_terms(BarrierKind.LOG, np.array([np.e]))
        assert terms.value[0] == pytest.approx(-1.0)
        assert terms.d_zeta[0] == pytest.approx(-1.0 / np.e)
        assert terms.d2_zeta[0] == pytest.approx(np.exp(-2.0))

    def test_relaxed_matches_inverse_above_alpha(self):
        """Test that relaxation leaves values above alpha unchanged."""
        zeta = np.array([2.0, 3.0])
        relaxed = barrier_terms(BarrierKind.RELAXED_INVERSE, zeta, alpha=1.0)
        plain = barrier_terms(BarrierKind.INVERSE, zeta)
        np.testing.assert_allclose(relaxed.value, plain.value)
        np.testing.assert_array_equal(relaxed.d_alpha, [0.0, 0.0])

    def test_relaxed_quadratic_branch(self):
        """Test the quadratic extension below alpha, including negative values."""
        terms = barrier_terms(BarrierKind.RELAXED_INVERSE, np.array([0.5, -1.0]), alpha=1.0)
        np.testing.assert_allclose(terms.value, [1.75, 7.0])
        np.testing.assert_allclose(terms.d2_zeta, [2.0, 2.0])

    def test_relaxed_continuity_at_alpha(self):
        """Test value and slope continuity at zeta = alpha."""
        alpha, eps = 0.8, 1e-7
        below = barrier_terms(BarrierKind.RELAXED_INVERSE, np.array([alpha - eps]), alpha)
        above = barrier_terms(BarrierKind.RELAXED_INVERSE, np.array([alpha + eps]), alpha)
        assert below.value[0] == pytest.approx(above.value[0], rel=1e-6)
        assert below.d_zeta[0] == pytest.approx(above.d_zeta[0], rel=1e-5)

    def test_alpha_derivatives(self):
        """Test d/dalpha and d2/dalpha dzeta against central differences."""
        zeta = np.array([0.2, 0.9, 2.0])
        alpha = 1.2
        terms = barrier_terms(BarrierKind.RELAXED_INVERSE, zeta, alpha)
        fd_alpha = central_difference(
            lambda a: barrier_terms(BarrierKind.RELAXED_INVERSE, zeta, a[0]).value,
            np.array([alpha]),
        )
        np.testing.assert_allclose(terms.d_alpha, fd_alpha[:, 0], atol=1e-6)
        fd_mixed = central_difference(
            lambda a: barrier_terms(BarrierKind.RELAXED_INVERSE, zeta, a[0]).d_zeta,
            np.array([alpha]),
        )
        np.testing.assert_allclose(terms.d2_alpha_zeta, fd_mixed[:, 0], atol=1e-5)

    def test_domain_error(self):
        """Test that unrelaxed barriers reject non-positive values."""
        with pytest.raises(BarrierDomainError):
            barrier_terms(BarrierKind.INVERSE, np.array([1.0, 0.0]))
        with pytest.raises(BarrierDomainError):
            barrier_terms(BarrierKind.LOG, np.array([-0.1]))
        with pytest.raises(BarrierDomainError):
            barrier_terms(BarrierKind.RELAXED_INVERSE, np.array([-0.1]), alpha=0.0)

    def test_barrier_value(self):
        """Test the scalar convenience wrapper."""
        cfg = BarrierConfig(kind=BarrierKind.INVERSE)
        assert barrier_value(cfg, 4.0) == pytest.approx(0.25)


class TestBarrierConfig:
    """Tests for BarrierConfig."""

    def test_kind_from_string(self):
        """Test conversion of a kind name."""
        cfg = BarrierConfig(kind="log")
        assert cfg.kind is BarrierKind.LOG
        assert not cfg.is_relaxed()

    def test_is_relaxed(self):
        """Test that relaxation needs a positive alpha."""
        assert not BarrierConfig(alpha=0.0).is_relaxed()
        assert BarrierConfig(alpha=0.5).is_relaxed()
        assert BarrierConfig(alpha=0.0).is_relaxed(alpha=0.1)

    @pytest.mark.parametrize(
        "kwargs",
        [{"gamma": 1.5}, {"gamma": -2.0}, {"alpha": -0.1}, {"q_b": -1.0}],
    )
    def test_invalid(self, kwargs):
        """Test parameter validation."""
        with pytest.raises(ValueError):
            BarrierConfig(**kwargs)


class TestAggregateBarrier:
    """Tests for the aggregated barrier and the barrier state."""

    def test_sum_over_components(self):
        """Test that S(x) sums the component barriers."""
        safety = dubins_safety()
        cfg = BarrierConfig(kind=BarrierKind.INVERSE)
        x = np.array([5.0, 4.0, 0.0])
        expected = sum(1.0 / value for value in safety.components(x))
        assert init_barrier_state(safety, cfg, x) == pytest.approx(expected)

    def test_gradients(self):
        """Test the state gradient and its alpha derivative."""
        safety = dubins_safety()
        cfg = BarrierConfig(kind=BarrierKind.RELAXED_INVERSE, alpha=1.5)
        x = np.array([5.0, 4.0, 0.2])
        agg = aggregate_barrier(safety, cfg, x)
        fd = central_difference(
            lambda z: aggregate_barrier(safety, cfg, z, with_gradient=False).value,
            x,
        )
        np.testing.assert_allclose(agg.gradient, fd, atol=1e-6)
        fd_alpha = central_difference(
            lambda a: aggregate_barrier(safety, cfg, x, alpha=a[0]).gradient,
            np.array([1.5]),
        )
        np.testing.assert_allclose(agg.gradient_alpha, fd_alpha[:, 0], atol=1e-5)

    def test_hessian(self):
        """Test the aggregated Hessian against differences of the gradient."""
        safety = dubins_safety()
        cfg = BarrierConfig(kind=BarrierKind.RELAXED_INVERSE, alpha=1.5)
        x = np.array([5.0, 4.0, 0.2])
        agg = aggregate_barrier(safety, cfg, x, with_hessian=True)
        fd = central_difference(lambda z: aggregate_barrier(safety, cfg, z).gradient, x, 1e-5)
        np.testing.assert_allclose(agg.hessian, fd, atol=1e-5)
        assert aggregate_barrier(safety, cfg, x).hessian is None

    def test_no_constraints(self):
        """Test that an empty safety function contributes nothing."""
        safety = SafetyFunction(point_map=StatePosition(3, (0, 1)))
        agg = aggregate_barrier(safety, BarrierConfig(), np.zeros(3))
        assert agg.value == 0.0
        np.testing.assert_array_equal(agg.gradient, np.zeros(3))

    def test_true_barrier_value_outside(self):
        """Test that an undefined barrier value reports infinity."""
        cfg = BarrierConfig(kind=BarrierKind.INVERSE)
        inside_obstacle = np.array([6.0, 5.0, 0.0])
        assert true_barrier_value(dubins_safety(), cfg, inside_obstacle) == np.inf

    def test_dbas_step_matches_model(self):
        """Test the standalone barrier update against the embedded model."""
        safety = dubins_safety()
        plant = DubinsModel(dt=0.05)
        cfg = BarrierConfig(kind=BarrierKind.RELAXED_INVERSE, alpha=1.5, gamma=0.3)
        model = augment(plant, safety, cfg)
        x, u, b = np.array([5.0, 4.0, 0.2]), np.array([1.0, 0.5]), 0.7
        expected = model.step(np.append(x, b), u)[-1]
        assert dbas_step(cfg, safety, plant, x, u, b) == pytest.approx(expected)


class TestSafetyEmbeddedModel:
    """Tests for the safety-embedded dynamics."""

    x = np.array([5.0, 4.0, 0.2, 0.7])
    u = np.array([1.0, 0.5])
    theta = np.array([0.3, 1.5])

    def test_dimensions(self):
        """Test that the embedding adds one state."""
        model = embedded_model()
        assert (model.n_x, model.n_u) == (4, 2)
        assert model.theta_dependencies == (GAMMA_INDEX, ALPHA_INDEX)

    def test_state_mismatch(self):
        """Test that the safety function must match the plant."""
        safety = SafetyFunction(point_map=StatePosition(5, (0, 1)))
        with pytest.raises(ValueError):
            augment(DubinsModel(), safety, BarrierConfig())

    def test_jacobians(self):
        """Test state and control Jacobians against central differences."""
        model = embedded_model()
        jac_x, jac_u = model.jacobians(self.x, self.u, self.theta)
        fd_x = central_difference(lambda z: model.step(z, self.u, self.theta), self.x)
        fd_u = central_difference(lambda v: model.step(self.x, v, self.theta), self.u)
        np.testing.assert_allclose(jac_x, fd_x, atol=1e-6)
        np.testing.assert_allclose(jac_u, fd_u, atol=1e-6)

    def test_param_jacobian(self):
        """Test the gamma and alpha columns against central differences."""
        model = embedded_model()
        f_theta = model.param_jacobian(self.x, self.u, self.theta)
        fd = central_difference(lambda th: model.step(self.x, self.u, th), self.theta)
        np.testing.assert_allclose(f_theta, fd, atol=1e-6)
        np.testing.assert_array_equal(f_theta[:3], np.zeros((3, 2)))

    def test_param_jacobian_without_indices(self):
        """Test that a model with fixed gamma and alpha does not depend on theta."""
        model = augment(DubinsModel(), dubins_safety(), BarrierConfig(alpha=1.0))
        f_theta = model.param_jacobian(self.x, self.u, np.ones(4))
        np.testing.assert_array_equal(f_theta, np.zeros((4, 4)))

    def test_lagrangian_hessians(self):
        """Test the second-order terms against differences of the Jacobians."""
        model = embedded_model()
        lam = np.array([0.4, -0.2, 0.3, 1.1])
        terms = model.lagrangian_hessians(self.x, self.u, self.theta, lam)

        fd_xtheta = central_difference(
            lambda th: model.jacobians(self.x, self.u, th)[0].T @ lam,
            self.theta,
        )
        fd_utheta = central_difference(
            lambda th: model.jacobians(self.x, self.u, th)[1].T @ lam,
            self.theta,
        )
        np.testing.assert_allclose(terms.xtheta, fd_xtheta, atol=1e-5)
        np.testing.assert_allclose(terms.utheta, fd_utheta, atol=1e-5)

        fd_xx = central_difference(
            lambda z: model.jacobians(z, self.u, self.theta)[0].T @ lam,
            self.x,
            1e-5,
        )
        np.testing.assert_allclose(terms.xx, 0.5 * (fd_xx + fd_xx.T), atol=1e-4)

    def test_arm_lagrangian_hessians(self):
        """Test the forward-kinematics curvature of the arm barrier state."""
        model = arm_embedded_model()
        rng = np.random.default_rng(11)
        x = np.concatenate([rng.uniform(0.2, 1.2, 6), rng.uniform(-0.5, 0.5, 6), [2.0]])
        u = rng.uniform(-1.0, 1.0, 6)
        theta = np.array([0.4, 0.3])
        lam = np.concatenate([rng.uniform(-1.0, 1.0, 12), [0.8]])
        terms = model.lagrangian_hessians(x, u, theta, lam)

        fd_xx = central_difference(lambda z: model.jacobians(z, u, theta)[0].T @ lam, x, 1e-5)
        fd_ux = central_difference(lambda z: model.jacobians(z, u, theta)[1].T @ lam, x, 1e-5)
        fd_uu = central_difference(lambda v: model.jacobians(x, v, theta)[1].T @ lam, u, 1e-5)
        np.testing.assert_allclose(terms.xx, 0.5 * (fd_xx + fd_xx.T), rtol=1e-4, atol=1e-4)
        np.testing.assert_allclose(terms.ux, fd_ux, rtol=1e-4, atol=1e-4)
        np.testing.assert_allclose(terms.uu, fd_uu, rtol=1e-4, atol=1e-4)
        assert np.abs(terms.xx[:6, :6]).max() > 0.0

    def test_hessians_without_barrier_multiplier(self):
        """Test that a zero barrier multiplier leaves only the plant terms."""
        model = arm_embedded_model()
        x = np.concatenate([np.full(6, 0.5), np.zeros(6), [1.0]])
        lam = np.concatenate([np.ones(12), [0.0]])
        terms = model.lagrangian_hessians(x, np.zeros(6), np.array([0.4, 0.3]), lam)
        np.testing.assert_array_equal(terms.xx, np.zeros((13, 13)))
        np.testing.assert_array_equal(terms.xtheta, np.zeros((13, 2)))

    def test_initial_state(self):
        """Test the embedded initial condition and its alpha column."""
        safety = dubins_safety()
        cfg = BarrierConfig(kind=BarrierKind.RELAXED_INVERSE, alpha=1.5)
        initial = EmbeddedInitialState(self.x[:3], safety, cfg, alpha_index=ALPHA_INDEX)
        value = initial.value(self.theta)
        np.testing.assert_allclose(value[:3], self.x[:3])
        assert value[3] == pytest.approx(init_barrier_state(safety, cfg, self.x[:3]))
        fd = central_difference(initial.value, self.theta)
        np.testing.assert_allclose(initial.jacobian(self.theta), fd, atol=1e-6)

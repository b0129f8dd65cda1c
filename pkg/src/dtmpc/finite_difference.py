"""
Central finite differences.

Serves as the ground-truth oracle for analytic derivatives and supplies the
multiplier-weighted second-order dynamics terms that a model does not
provide in closed form.
"""

import logging
from collections.abc import Callable

import numpy as np

logger = logging.getLogger(__name__)

JACOBIAN_STEP = 1e-6
HESSIAN_STEP = 1e-5


def central_difference(
    fn: Callable[[np.ndarray], np.ndarray | float],
    z: np.ndarray,
    step: float = JACOBIAN_STEP,
) -> np.ndarray:
    """
    Jacobian of ``fn`` at ``z`` by central differences.

    The perturbation of component j is ``step * (1 + |z_j|)``.

    Args:
        fn: Function of a 1-D array returning a scalar or an array
        z: Evaluation point
        step: Base step size

    Returns:
        Array of shape ``fn(z).shape + (z.size,)``
    """
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return np.zeros((*np.shape(fn(z)), 0))

    columns = []
    for j in range(z.size):
        h = step * (1.0 + abs(z[j]))
        plus = z.copy()
        plus[j] += h
        minus = z.copy()
        minus[j] -= h
        columns.append(
            (np.asarray(fn(plus), dtype=float) - np.asarray(fn(minus), dtype=float))
            / (2.0 * h),
        )
    return np.stack(columns, axis=-1)


def relative_error(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Norm of the difference scaled by ``1 + ||reference||``."""
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    return float(
        np.linalg.norm(estimate - reference) / (1.0 + np.linalg.norm(reference)),
    )

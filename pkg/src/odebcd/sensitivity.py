"""Forward (direct) sensitivity analysis.

The sensitivity ``S = dx/dtheta`` obeys the variational equation
``S' = (df/dx) S + df/dtheta`` with ``S(0) = 0`` because the initial state is
data.  It is integrated together with the state as one augmented system of
size ``n + n p``, so step-size control sees both parts.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SensitivityInstabilityError, SolverError
from .ode_solver import Trajectory, integrate, solve


@dataclass
class SensitivityTensor:
    """``values[i] = dx(t_i)/dtheta`` with shape ``(N_t + 1, n, p)``."""

    values: np.ndarray


def augmented_rhs(field, params):
    n, p = field.state_dim, field.param_dim

    def rhs(y):
        x = y[:n]
        S = y[n:].reshape(n, p)
        f, Jx, Jp = field.evaluate_all(x, params)
        return np.concatenate([f, (Jx @ S + Jp).ravel()])

    return rhs


def solve_with_sensitivity(field, params, x0, grid, config=None):
    """Solve the state and its parameter sensitivity on ``grid``.

    Returns ``(Trajectory, SensitivityTensor)``.  If the augmented solve
    fails but the state equation alone integrates, the failure is attributed
    to the variational system and raised as
    :class:`SensitivityInstabilityError`.
    """
    params = np.asarray(params, dtype=float)
    x0 = np.asarray(x0, dtype=float).ravel()
    n, p = field.state_dim, field.param_dim
    y0 = np.concatenate([x0, np.zeros(n * p)])
    try:
        Y = integrate(augmented_rhs(field, params), y0, grid.times, config)
    except SolverError as exc:
        # blame the variational system when the state alone integrates fine
        try:
            solve(field, params, x0, grid, config)
        except SolverError:
            raise exc from None
        raise SensitivityInstabilityError(
            f"sensitivity equations failed ({exc})", t=exc.t) from exc
    states = Y[:, :n].copy()
    sens = Y[:, n:].reshape(-1, n, p).copy()
    return Trajectory(grid, states), SensitivityTensor(sens)


def loss_grad_theta(traj, sens, obs, targets):
    """Gradient of ``SSE(h(x(theta)), targets)`` with respect to ``theta``.

    Chain rule ``sum_i S_i^T H_i^T 2 (h(x_i) - y_i)``.
    """
    X = traj.states
    targets = np.asarray(targets, dtype=float)
    pred = obs.eval_batch(X)
    if pred.shape != targets.shape:
        raise ValueError(f"targets have shape {targets.shape}, expected {pred.shape}")
    dL_dx = obs.vjp_batch(X, 2.0 * (pred - targets))
    return np.einsum("kip,ki->p", sens.values, dL_dx)

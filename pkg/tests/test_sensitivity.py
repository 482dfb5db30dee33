import math

import numpy as np
import pytest

from odebcd.cucker_smale import CuckerSmale
from odebcd.errors import InstabilityError, SensitivityInstabilityError, SolverError
from odebcd.metrics import sse
from odebcd.ode_solver import SolverConfig, TimeGrid, solve
from odebcd.sensitivity import augmented_rhs, loss_grad_theta, solve_with_sensitivity
from odebcd.vector_field import ExponentialGrowth, LinearField, ObservationMap

from conftest import fd_grad, random_swarm, random_theta, rel_err

TIGHT = SolverConfig(rtol=1e-10, atol=1e-12)


def test_exponential_closed_form():
    grid = TimeGrid(0.0, 0.25, 4)
    theta = 0.8
    traj, sens = solve_with_sensitivity(ExponentialGrowth(), [theta], [2.0], grid, TIGHT)
    t = grid.times
    assert np.allclose(traj.states[:, 0], 2.0 * np.exp(theta * t), rtol=1e-9)
    assert np.allclose(sens.values[:, 0, 0], 2.0 * t * np.exp(theta * t), rtol=1e-8)
    assert np.all(sens.values[0] == 0.0)


def test_linear_forcing_closed_form():
    # x' = -x + theta, x(0) = 0 => dx/dtheta = 1 - exp(-t)
    field = LinearField([[-1.0]], [[1.0]])
    grid = TimeGrid(0.0, 0.5, 4)
    _, sens = solve_with_sensitivity(field, [0.3], [0.0], grid, TIGHT)
    assert np.allclose(sens.values[:, 0, 0], 1.0 - np.exp(-grid.times), atol=1e-9)


def test_state_part_matches_plain_solve(rng):
    f = CuckerSmale(3)
    x0, theta = random_swarm(rng, 3), random_theta(rng)
    grid = TimeGrid(0.0, 0.05, 20)
    traj, _ = solve_with_sensitivity(f, theta, x0, grid, TIGHT)
    assert np.allclose(traj.states, solve(f, theta, x0, grid, TIGHT).states, atol=1e-8)


def test_sensitivity_matches_fd_of_solutions(rng):
    f = CuckerSmale(2)
    x0, theta = random_swarm(rng, 2), random_theta(rng)
    grid = TimeGrid(0.0, 0.1, 10)
    _, sens = solve_with_sensitivity(f, theta, x0, grid, TIGHT)
    for k in range(5):
        e = np.zeros(5)
        e[k] = 1e-5
        d = (solve(f, theta + e, x0, grid, TIGHT).states
             - solve(f, theta - e, x0, grid, TIGHT).states) / 2e-5
        assert np.max(np.abs(sens.values[:, :, k] - d)) < 1e-6


def test_loss_gradient_matches_fd(rng):
    n = 3
    f = CuckerSmale(n)
    obs = ObservationMap(4 * n)
    x0, truth = random_swarm(rng, n), random_theta(rng)
    grid = TimeGrid(0.0, 0.05, 40)
    targets = solve(f, truth, x0, grid, TIGHT).states
    theta = truth * 1.1
    traj, sens = solve_with_sensitivity(f, theta, x0, grid, TIGHT)
    g = loss_grad_theta(traj, sens, obs, targets)
    ref = fd_grad(lambda q: sse(solve(f, q, x0, grid, TIGHT).states, targets), theta)
    assert rel_err(g, ref) < 1e-5


def test_augmented_rhs_layout():
    rhs = augmented_rhs(ExponentialGrowth(2), np.array([0.5]))
    y = np.array([1.0, 2.0, 0.1, 0.2])
    # S' = theta S + x
    assert np.allclose(rhs(y), [0.5, 1.0, 0.05 + 1.0, 0.1 + 2.0])


def test_loss_gradient_shape_check():
    grid = TimeGrid(0.0, 0.5, 2)
    traj, sens = solve_with_sensitivity(ExponentialGrowth(), [1.0], [1.0], grid)
    with pytest.raises(ValueError):
        loss_grad_theta(traj, sens, ObservationMap(1), np.zeros((2, 1)))


def test_variational_blowup_is_attributed():
    # x stays at 0 while S' = S^2-like growth is driven by the parameter
    class Stiff(ExponentialGrowth):
        param_dim = 1

        def eval(self, x, params):
            return np.zeros_like(np.asarray(x, dtype=float))

        def jac_state(self, x, params):
            return np.array([[1e4]])

        def jac_params(self, x, params):
            return np.array([[1.0]])

        def evaluate_all(self, x, params):
            return self.eval(x, params), self.jac_state(x, params), self.jac_params(x, params)

    with pytest.raises(SensitivityInstabilityError) as info:
        solve_with_sensitivity(Stiff(), [1.0], [0.0], TimeGrid(0.0, 1.0, 1),
                               SolverConfig(max_steps=10**6))
    assert isinstance(info.value, InstabilityError)


def test_state_blowup_not_attributed_to_sensitivities():
    class Riccati(ExponentialGrowth):
        def eval(self, x, params):
            return params[0] * np.asarray(x) ** 2

        def jac_state(self, x, params):
            return np.diag(2 * params[0] * np.asarray(x))

        def jac_params(self, x, params):
            return (np.asarray(x) ** 2).reshape(-1, 1)

    with pytest.raises(SolverError) as info:
        solve_with_sensitivity(Riccati(), [1.0], [1.0], TimeGrid(0.0, 0.5, 4))
    assert not isinstance(info.value, SensitivityInstabilityError)

"""Quick oracle and invariant checks behind ``odebcd check``.

Each check returns a :class:`CheckResult` with the measured quantity and
the tolerance it was held to.  The suite takes a few seconds.
"""

import math
from dataclasses import dataclass

import numpy as np

from .algorithms import check_alg0_recovery
from .collocation import ResidualConfig, loss_F, grad_theta_F, grad_x_F, residual
from .cucker_smale import CuckerSmale
from .ode_solver import SolverConfig, TimeGrid, solve
from .sensitivity import solve_with_sensitivity
from .vector_field import (ExponentialGrowth, LinearField, ObservationMap, fd_check_jacobians,
                           fd_jacobian)


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<34} {self.value:.3e} (tol {self.tol:.0e})"


def _result(name, value, tol, upper=True):
    ok = value <= tol if upper else value >= tol
    return CheckResult(name, float(value), tol, bool(ok and math.isfinite(value)))


def _theta(rng):
    return np.array([rng.uniform(0.1, 1.5), rng.uniform(0.5, 2), rng.uniform(0.5, 2),
                     rng.uniform(1, 3), rng.uniform(0.3, 1)])


def _swarm(rng, n):
    return np.concatenate([rng.uniform(-2, 2, 2 * n), rng.uniform(-1, 1, 2 * n)])


def check_jacobians(rng, points=20):
    worst = 0.0
    for n in (1, 3, 5):
        field = CuckerSmale(n)
        for _ in range(points):
            worst = max(worst, fd_check_jacobians(field, _swarm(rng, n), _theta(rng)))
    return _result("cucker-smale jacobians vs FD", worst, 1e-5)


def check_momentum(rng, swarms=20):
    worst = 0.0
    for _ in range(swarms):
        n = 6
        f = CuckerSmale(n).eval(_swarm(rng, n), _theta(rng))
        worst = max(worst, float(np.max(np.abs(f[2 * n:].reshape(n, 2).sum(axis=0)))))
    return _result("total velocity conserved", worst, 1e-12)


def check_solver():
    field = LinearField([[-1.0]])
    grid = TimeGrid(0.0, 1.0, 1)
    x = solve(field, [0.0], [1.0], grid, SolverConfig(rtol=1e-8, atol=1e-10)).states[-1, 0]
    return _result("dopri5 on x' = -x", abs(x - math.exp(-1.0)), 1e-7)


def check_sensitivity():
    grid = TimeGrid(0.0, 1.0, 1)
    _, sens = solve_with_sensitivity(ExponentialGrowth(), [1.0], [1.0], grid,
                                     SolverConfig(rtol=1e-10, atol=1e-12))
    return _result("sensitivity of x' = theta x", abs(sens.values[-1, 0, 0] - math.e), 1e-6)


def check_residual_order():
    field = LinearField([[-1.0]])
    cfg = ResidualConfig(beta=1.0 / 8.0)
    errs = []
    for h in (0.1, 0.05):
        grid = TimeGrid(0.0, h, int(round(1.0 / h)))
        x = np.exp(-grid.times)[:, None]
        errs.append(np.max(np.abs(residual(x, [0.0], field, grid, cfg))))
    return _result("residual halving ratio >= 20", errs[0] / errs[1], 20.0, upper=False)


def check_collocation_grads(rng):
    n = 3
    field = CuckerSmale(n)
    obs = ObservationMap(4 * n)
    grid = TimeGrid(0.0, 0.1, 5)
    x = np.stack([_swarm(rng, n) for _ in range(grid.num_points)])
    y = x + 0.1 * rng.standard_normal(x.shape)
    theta = _theta(rng)
    gx = grad_x_F(x, theta, y, obs, field, grid).ravel()
    gt = grad_theta_F(x, theta, y, obs, field, grid)
    fx = fd_jacobian(lambda z: np.array([loss_F(z.reshape(x.shape), theta, y, obs, field, grid)]),
                     x.ravel())[0]
    ft = fd_jacobian(lambda q: np.array([loss_F(x, q, y, obs, field, grid)]), theta)[0]
    err = max(np.max(np.abs(gx - fx)) / max(1.0, np.max(np.abs(fx))),
              np.max(np.abs(gt - ft)) / max(1.0, np.max(np.abs(ft))))
    return _result("collocation gradients vs FD", err, 1e-6)


def check_recovery(rng):
    field = ExponentialGrowth()
    obs = ObservationMap(1)
    grid = TimeGrid(0.0, 0.1, 10)
    solver = SolverConfig(rtol=1e-10, atol=1e-12)
    targets = solve(field, [0.7], [1.0], grid, solver).states
    dev = check_alg0_recovery(field, obs, targets, [1.0], [rng.uniform(0.2, 1.2)],
                              0.1, 0.01, grid, solver)
    return _result("state/theta steps recover alg0", dev, 1e-6)


def run_checks(seed=0):
    rng = np.random.default_rng(seed)
    return [
        check_jacobians(rng),
        check_momentum(rng),
        check_solver(),
        check_sensitivity(),
        check_residual_order(),
        check_collocation_grads(rng),
        check_recovery(rng),
    ]

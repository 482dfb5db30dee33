import numpy as np
import pytest

from odebcd.collocation import (Collocation, MultiplierState, ResidualConfig,
                                auglag_value_and_grads, collocation_trajectory, grad_theta_F,
                                grad_x_F, loss_F, residual)
from odebcd.cucker_smale import CuckerSmale
from odebcd.errors import EvaluationError
from odebcd.ode_solver import SolverConfig, TimeGrid, solve
from odebcd.vector_field import (ExponentialGrowth, LinearField, LinearObservation,
                                 ObservationMap, ZeroField, constant_acceleration)

from conftest import fd_grad, random_swarm, random_theta, rel_err


def hs_residual_reference(x, theta, field, h, beta):
    """Interval-by-interval residual written directly from the scheme."""
    out = []
    for i in range(len(x) - 1):
        fa, fb = field.eval(x[i], theta), field.eval(x[i + 1], theta)
        xc = 0.5 * (x[i] + x[i + 1]) + beta * h * (fa - fb)
        out.append(x[i] - x[i + 1] + h / 6 * (fa + fb + 4 * field.eval(xc, theta)))
    return np.array(out)


@pytest.mark.parametrize("beta", [1 / 6, 1 / 8])
def test_residual_matches_loop(rng, beta):
    n = 3
    f = CuckerSmale(n)
    g = TimeGrid(0.0, 0.1, 6)
    x = np.stack([random_swarm(rng, n) for _ in range(7)])
    theta = random_theta(rng)
    r = residual(x, theta, f, g, ResidualConfig(beta=beta))
    assert r.shape == (6, 12)
    assert np.allclose(r, hs_residual_reference(x, theta, f, 0.1, beta), atol=1e-14)


def test_residual_zero_for_constant_trajectory(rng):
    x = np.tile(rng.normal(size=4), (9, 1))
    assert np.all(residual(x, [0.0], ZeroField(4), TimeGrid(0.0, 0.3, 8)) == 0.0)


def test_residual_exact_on_quadratic_motion():
    f = constant_acceleration(2)
    theta = np.array([0.5, -1.0])
    g = TimeGrid(0.0, 0.2, 10)
    x = solve(f, theta, [1.0, 2.0, 0.3, -0.4], g).states
    for beta in (1 / 6, 1 / 8):
        assert np.max(np.abs(residual(x, theta, f, g, ResidualConfig(beta=beta)))) < 1e-14


def test_residual_order_on_exponential():
    f = LinearField([[-1.0]])
    ratios = {}
    for beta in (1 / 8, 1 / 6):
        errs = []
        for h in (0.1, 0.05, 0.025):
            g = TimeGrid(0.0, h, int(round(1 / h)))
            errs.append(np.max(np.abs(residual(np.exp(-g.times)[:, None], [0.0], f, g,
                                               ResidualConfig(beta=beta)))))
        ratios[beta] = (errs[0] / errs[1], errs[1] / errs[2])
    assert all(28 < q < 36 for q in ratios[1 / 8])
    # beta != 1/8 leaves an O(h^2) midpoint error, so the residual drops to O(h^3)
    assert all(7 < q < 9 for q in ratios[1 / 6])


@pytest.mark.parametrize("beta", [1 / 6, 1 / 8])
def test_merged_loss_gradients(rng, beta):
    n = 2
    f = CuckerSmale(n)
    obs = ObservationMap(4 * n)
    g = TimeGrid(0.0, 0.1, 4)
    cfg = ResidualConfig(beta=beta, weight=2.5)
    x = np.stack([random_swarm(rng, n) for _ in range(5)])
    y = x + 0.1 * rng.normal(size=x.shape)
    theta = random_theta(rng)
    gx = grad_x_F(x, theta, y, obs, f, g, cfg)
    gt = grad_theta_F(x, theta, y, obs, f, g, cfg)
    assert rel_err(gx, fd_grad(lambda z: loss_F(z, theta, y, obs, f, g, cfg), x)) < 1e-7
    assert rel_err(gt, fd_grad(lambda q: loss_F(x, q, y, obs, f, g, cfg), theta)) < 1e-7


def test_loss_value_decomposes(rng):
    f = CuckerSmale(2)
    obs = ObservationMap(8)
    g = TimeGrid(0.0, 0.1, 3)
    x = np.stack([random_swarm(rng, 2) for _ in range(4)])
    y = rng.normal(size=x.shape)
    theta = random_theta(rng)
    cfg = ResidualConfig(weight=3.0)
    r = residual(x, theta, f, g, cfg)
    expected = np.sum((x - y) ** 2) + 1.5 * np.sum(r ** 2)
    assert loss_F(x, theta, y, obs, f, g, cfg) == pytest.approx(expected, rel=1e-13)


def test_auglag_gradients(rng):
    n = 2
    f = CuckerSmale(n)
    obs = LinearObservation(np.eye(8)[:4])
    g = TimeGrid(0.0, 0.1, 4)
    x = np.stack([random_swarm(rng, n) for _ in range(5)])
    y = rng.normal(size=(5, 4))
    theta = random_theta(rng)
    mult = MultiplierState(rng.normal(size=4 * 8), rho=0.7)
    value, gx, gt = auglag_value_and_grads(x, theta, mult, y, obs, f, g)
    r = residual(x, theta, f, g)
    pred = x[:, :4]
    assert value == pytest.approx(np.sum((pred - y) ** 2) + mult.lam @ r.ravel()
                                  + 0.35 * np.sum(r ** 2), rel=1e-12)
    fun_x = lambda z: auglag_value_and_grads(z, theta, mult, y, obs, f, g)[0]
    fun_t = lambda q: auglag_value_and_grads(x, q, mult, y, obs, f, g)[0]
    assert rel_err(gx, fd_grad(fun_x, x)) < 1e-7
    assert rel_err(gt, fd_grad(fun_t, theta)) < 1e-7


def test_auglag_with_zero_multipliers_is_weighted_F(rng):
    f = CuckerSmale(2)
    obs = ObservationMap(8)
    g = TimeGrid(0.0, 0.1, 3)
    x = np.stack([random_swarm(rng, 2) for _ in range(4)])
    y = rng.normal(size=x.shape)
    theta = random_theta(rng)
    v, gx, gt = auglag_value_and_grads(x, theta, MultiplierState.zeros(3, 8, 2.0), y, obs, f, g)
    cfg = ResidualConfig(weight=2.0)
    assert v == pytest.approx(loss_F(x, theta, y, obs, f, g, cfg), rel=1e-14)
    assert np.allclose(gx, grad_x_F(x, theta, y, obs, f, g, cfg), rtol=1e-13, atol=1e-14)


def test_workers_do_not_change_results(rng):
    n = 6
    f = CuckerSmale(n)
    x = np.stack([random_swarm(rng, n) for _ in range(41)])
    y = rng.normal(size=x.shape)
    theta = random_theta(rng)
    outs = []
    for w in (1, 2, 3):
        c = Collocation(f, 0.05, obs=ObservationMap(4 * n), workers=w)
        outs.append(c.loss_and_grads(x, theta, y))
        c.close()
    for other in outs[1:]:
        assert other[0] == outs[0][0]
        for a, b in zip(other[1:], outs[0][1:]):
            assert np.array_equal(a, b)


def test_nonfinite_field_reports_interval():
    class Blowup(ExponentialGrowth):
        def eval_batch(self, X, params):
            out = super().eval_batch(X, params)
            out[np.abs(X[:, 0]) > 10] = np.nan
            return out

    x = np.array([[0.0], [1.0], [20.0], [1.0]])
    with pytest.raises(EvaluationError) as info:
        residual(x, [1.0], Blowup(), TimeGrid(0.0, 0.1, 3))
    assert info.value.index == 2


def test_shape_checks():
    with pytest.raises(ValueError):
        residual(np.zeros(3), [0.0], ZeroField(1), TimeGrid(0.0, 0.1, 2))
    with pytest.raises(ValueError):
        ResidualConfig(beta=0.0)
    with pytest.raises(ValueError):
        MultiplierState(np.zeros(3), rho=0.0)


def test_collocation_trajectory_zeroes_residual(rng):
    n = 3
    f = CuckerSmale(n)
    g = TimeGrid(0.0, 0.05, 30)
    theta = random_theta(rng)
    x0 = random_swarm(rng, n)
    x = collocation_trajectory(f, theta, x0, g)
    assert np.array_equal(x[0], x0)
    assert np.max(np.abs(residual(x, theta, f, g))) < 1e-13
    # and it stays within discretization error of the ODE solution
    ref = solve(f, theta, x0, g, SolverConfig(rtol=1e-10, atol=1e-12)).states
    assert np.max(np.abs(x - ref)) < 1e-4

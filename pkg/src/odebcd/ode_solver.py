"""Explicit Runge-Kutta integration onto a uniform sample grid.

Two methods are available: the Dormand-Prince 5(4) pair with PI step-size
control, and classical fixed-step RK4.  Integration never steps past a sample
time; the last step of each sample interval is clipped to land on it exactly,
so no dense output is needed.
"""

from dataclasses import dataclass, field as dc_field, asdict

import numpy as np

from .errors import DivergenceError, InstabilityError, StiffnessError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = t0 + i h`` for ``i = 0..num_intervals``."""

    t0: float
    h: float
    num_intervals: int

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid spacing h must be positive")
        if self.num_intervals < 1:
            raise ValueError("grid needs at least one interval")

    @property
    def times(self):
        return self.t0 + self.h * np.arange(self.num_intervals + 1)

    @property
    def num_points(self):
        return self.num_intervals + 1

    def window(self, start, length):
        """Sub-grid covering nodes ``start .. start + length``."""
        if start < 0 or start + length > self.num_intervals:
            raise ValueError("window outside grid")
        return TimeGrid(self.t0 + self.h * start, self.h, length)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "dopri5"
    rtol: float = 1e-6
    atol: float = 1e-8
    initial_step: float | None = None
    max_steps: int = 100_000
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 5.0
    rk4_substeps: int = 1

    def __post_init__(self):
        if self.method not in ("dopri5", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if self.rk4_substeps < 1:
            raise ValueError("rk4_substeps must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class Trajectory:
    grid: TimeGrid
    states: np.ndarray = dc_field(repr=False)

    @property
    def times(self):
        return self.grid.times


# Dormand-Prince 5(4) tableau
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
# difference between 5th and embedded 4th order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

_ORDER = 5
_PI_ALPHA = 0.7 / _ORDER
_PI_BETA = 0.4 / _ORDER


def _error_norm(err, y, y_new, config):
    scale = config.atol + config.rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean(np.square(err / scale))))


def _dp_attempt(fun, y, h, k1):
    """One trial Dormand-Prince step; returns (y_new, err_vec, k7).

    Overflow in a trial step is not an error by itself: it shows up as a
    non-finite error estimate and the step is retried smaller.
    """
    ks = [k1]
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(1, 7):
            dy = sum(a * k for a, k in zip(_A[s], ks) if a != 0.0)
            ks.append(fun(y + h * dy))
        y_new = y + h * sum(b * k for b, k in zip(_B, ks) if b != 0.0)
        err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
    return y_new, err, ks[6]


def _step_factor(err, err_prev, config, accepted):
    if err == 0.0:
        return config.max_factor
    if accepted:
        factor = config.safety * err ** -_PI_ALPHA * err_prev ** _PI_BETA
        return min(config.max_factor, max(config.min_factor, factor))
    return max(config.min_factor, config.safety * err ** (-1.0 / _ORDER))


def dopri5_step(field, params, x, h_try, config=None, k1=None, err_prev=1e-4):
    """Attempt one Dormand-Prince step of size ``h_try`` from ``x``.

    Returns ``(x_next, error_norm, h_next)``.  The step is acceptable when
    ``error_norm <= 1``; ``h_next`` is the PI-controlled proposal for the
    following attempt (retry size on rejection).
    """
    if not h_try > 0:
        raise ValueError("h_try must be positive")
    config = config or SolverConfig()
    x = np.asarray(x, dtype=float)

    def fun(y):
        return field.eval(y, params)

    if k1 is None:
        k1 = fun(x)
    x_next, err_vec, _ = _dp_attempt(fun, x, h_try, k1)
    err = _error_norm(err_vec, x, x_next, config)
    h_next = h_try * _step_factor(err, err_prev, config, err <= 1.0)
    return x_next, err, h_next


def _initial_step(fun, y, f0, config):
    scale = config.atol + config.rtol * np.abs(y)
    d0 = np.sqrt(np.mean(np.square(y / scale)))
    d1 = np.sqrt(np.mean(np.square(f0 / scale)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = fun(y + h0 * f0)
    d2 = np.sqrt(np.mean(np.square((f1 - f0) / scale))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / _ORDER)
    return min(100 * h0, h1)


def _check_finite(y, t):
    if not np.all(np.isfinite(y)):
        raise InstabilityError(f"non-finite state at t={t:.6g}", t=t)


def _integrate_dopri5(fun, y0, times, config):
    out = np.empty((len(times), y0.size))
    out[0] = y0
    y = y0.copy()
    t = float(times[0])
    f = fun(y)
    _check_finite(f, t)
    h = config.initial_step or _initial_step(fun, y, f, config)
    err_prev = 1e-4
    steps = 0
    for i in range(1, len(times)):
        t_target = float(times[i])
        while True:
            remaining = t_target - t
            if remaining <= 0.0:
                break
            last = h * 1.01 >= remaining
            h_use = remaining if last else h
            if h_use < 1e-14 * max(1.0, abs(t)):
                raise StiffnessError(f"step size underflow at t={t:.6g}", t=t)
            steps += 1
            if steps > config.max_steps:
                raise DivergenceError(f"step budget exhausted at t={t:.6g}", t=t)
            y_new, err_vec, f_new = _dp_attempt(fun, y, h_use, f)
            err = _error_norm(err_vec, y, y_new, config)
            if not np.isfinite(err):
                # shrink and retry; persistent blow-up ends in underflow
                h = h_use * config.min_factor
                continue
            if err <= 1.0:
                _check_finite(y_new, t + h_use)
                factor = _step_factor(err, err_prev, config, True)
                err_prev = max(err, 1e-4)
                t = t_target if last else t + h_use
                y = y_new
                f = f_new
                h_prop = h_use * factor
                # a clipped step says little about the natural step size
                h = max(h, h_prop) if last and h_use < h else h_prop
            else:
                h = h_use * _step_factor(err, err_prev, config, False)
        out[i] = y
    return out


def _integrate_rk4(fun, y0, times, config):
    out = np.empty((len(times), y0.size))
    out[0] = y0
    y = y0.copy()
    m = config.rk4_substeps
    for i in range(1, len(times)):
        h = (times[i] - times[i - 1]) / m
        for _ in range(m):
            k1 = fun(y)
            k2 = fun(y + 0.5 * h * k1)
            k3 = fun(y + 0.5 * h * k2)
            k4 = fun(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_finite(y, float(times[i]))
        out[i] = y
    return out


def integrate(fun, y0, times, config=None):
    """Integrate ``y' = fun(y)`` and return the states at ``times``.

    ``fun`` maps a 1-D state to its derivative.  Row 0 of the result is
    ``y0`` itself.
    """
    config = config or SolverConfig()
    y0 = np.array(y0, dtype=float, copy=True).ravel()
    _check_finite(y0, float(times[0]))
    times = np.asarray(times, dtype=float)
    if config.method == "rk4":
        return _integrate_rk4(fun, y0, times, config)
    return _integrate_dopri5(fun, y0, times, config)


def solve(field, params, x0, grid, config=None):
    """Solve ``x' = f(x; params)`` from ``x0`` and sample it on ``grid``."""
    params = np.asarray(params, dtype=float)
    states = integrate(lambda y: field.eval(y, params), x0, grid.times, config)
    return Trajectory(grid, states)

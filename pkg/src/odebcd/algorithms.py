"""Training loops for ODE parameter estimation.

``alg0``
    Gradient descent on ``theta`` with gradients from forward sensitivities.
``alg1``
    Alternating descent on ``F(x, theta) = SSE + w/2 |r|^2``; one ODE solve
    to initialize the trajectory block, none afterwards.
``alg2``
    As ``alg1`` but the trajectory is reset to an ODE solution at the current
    ``theta`` before every state step, so the state step only sees the data
    term.
``alg3``
    ``alg1`` on the augmented Lagrangian with multiplier ascent
    ``lam <- lam + rho r``.

In the alternating algorithms the ``theta`` gradient is always taken at the
trajectory already updated in the same epoch, and row 0 of the trajectory
(the given initial condition) is never changed.

Every loop runs a fixed epoch budget, optionally stopping early once
``|grad theta| < grad_norm_tol``.  A non-finite loss or gradient, or a solver
failure, ends the run with a non-``ok`` status and the rows logged so far.
"""

import math
import time
from dataclasses import dataclass, field as dc_field, asdict

import numpy as np

from .collocation import Collocation, MultiplierState, ResidualConfig
from .errors import EvaluationError, NonFiniteGradientError, SolverError
from .metrics import rsse_on_ode, sse
from .ode_solver import solve
from .optimizers import make_optimizer
from .sensitivity import loss_grad_theta, solve_with_sensitivity

ALGORITHMS = ("alg0_direct", "alg1", "alg2", "alg3")

# (state optimizer, state lr, param optimizer, param lr)
DEFAULT_STEPS = {
    "alg0_direct": (None, None, "adam", 0.01),
    "alg1": ("sgd", 0.01, "adam", 0.01),
    "alg2": ("sgd", 1.0, "adam", 0.01),
    # Adam's scale-free theta steps keep the multiplier loop from settling, so
    # alg3 uses plain SGD on both blocks
    "alg3": ("sgd", 0.1, "sgd", 0.1),
}

CSV_COLUMNS = ("epoch", "sse", "rsse_ode", "grad_theta_norm", "grad_x_norm",
               "residual_norm", "epoch_seconds")


@dataclass(frozen=True)
class MinibatchConfig:
    window: int
    reset_mode: str = "global_x0"

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.reset_mode not in ("global_x0", "local_state"):
            raise ValueError("reset_mode must be 'global_x0' or 'local_state'")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "alg1"
    epochs: int = 5000
    state_optimizer: str | None = "sgd"
    state_lr: float | None = 0.01
    param_optimizer: str = "adam"
    param_lr: float = 0.01
    grad_norm_tol: float | None = None
    minibatch: MinibatchConfig | None = None
    rho: float = 1.0
    seed: int = 0
    residual: ResidualConfig = ResidualConfig()
    rsse_every: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    @classmethod
    def for_algorithm(cls, algorithm, **overrides):
        """Config with the default optimizer pairing for ``algorithm``."""
        s_opt, s_lr, p_opt, p_lr = DEFAULT_STEPS[algorithm]
        base = dict(algorithm=algorithm, state_optimizer=s_opt, state_lr=s_lr,
                    param_optimizer=p_opt, param_lr=p_lr)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRow:
    epoch: int
    sse: float
    rsse_ode: float | None
    grad_theta_norm: float
    grad_x_norm: float | None
    residual_norm: float | None
    epoch_seconds: float

    def as_tuple(self):
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass
class TrainRecord:
    """Per-epoch log.

    Each row describes the iterate entering that epoch: ``sse`` and
    ``rsse_ode`` are measured before the epoch's updates, the gradient norms
    are those used by the updates, and ``residual_norm`` is ``|r|`` where
    the ``theta`` gradient was evaluated.  ``rsse_ode`` is ``None`` on
    epochs skipped by the evaluation cadence or when the solve failed.
    """

    algorithm: str
    rows: list = dc_field(default_factory=list)
    status: str = "ok"
    message: str = ""

    def append(self, row, sink=None):
        self.rows.append(row)
        if sink is not None:
            sink(row)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]


def minibatch_schedule(rng, num_intervals, delta, count):
    """``count`` uniform window starts in ``[0, num_intervals - delta]``."""
    if not 1 <= delta <= num_intervals:
        raise ValueError("window length must be in [1, num_intervals]")
    return rng.integers(0, num_intervals - delta + 1, size=count)


def _norm(v):
    return float(np.linalg.norm(v))


class _Run:
    """State shared by the loop bodies: record, timing, evaluation cadence."""

    def __init__(self, field, obs, targets, x0, grid, solver_cfg, cfg, sink, hook):
        self.field, self.obs, self.grid = field, obs, grid
        self.targets = np.asarray(targets, dtype=float)
        self.x0 = np.asarray(x0, dtype=float).ravel()
        self.solver_cfg = solver_cfg
        self.cfg = cfg
        self.sink = sink
        self.hook = hook
        self.record = TrainRecord(cfg.algorithm)
        self.coll = Collocation(field, grid.h, cfg.residual, obs, cfg.workers)
        self.state_opt = (make_optimizer(cfg.state_optimizer, cfg.state_lr)
                          if cfg.state_optimizer else None)
        self.param_opt = make_optimizer(cfg.param_optimizer, cfg.param_lr)
        N_t = grid.num_intervals
        mb = cfg.minibatch
        if mb is not None:
            if mb.window > N_t:
                raise ValueError("window longer than the trajectory")
            rng = np.random.default_rng(cfg.seed)
            self.starts = minibatch_schedule(rng, N_t, mb.window, cfg.epochs)
            self.width = mb.window
        else:
            self.starts = np.zeros(cfg.epochs, dtype=int)
            self.width = N_t

    def emit(self, event, **data):
        if self.hook is not None:
            self.hook(event, **data)

    def window(self, epoch):
        s = int(self.starts[epoch])
        return s, s + self.width

    def rsse(self, epoch, theta):
        every = self.cfg.rsse_every
        if not every or (epoch % every and epoch != self.cfg.epochs - 1):
            return None
        return rsse_on_ode(self.field, theta, self.x0, self.grid, self.solver_cfg,
                           self.obs, self.targets)

    def train_sse(self, x):
        return sse(self.obs.eval_batch(x), self.targets)

    def fail(self, status, exc):
        self.record.status = status
        self.record.message = f"{type(exc).__name__}: {exc}"

    def converged(self, gtheta):
        tol = self.cfg.grad_norm_tol
        if tol is not None and _norm(gtheta) < tol:
            self.record.status = "converged"
            return True
        return False

    def state_step(self, x, s, e, gx):
        """Apply the state optimizer to rows ``s..e`` with row 0 pinned."""
        if s == 0:
            gx[0] = 0.0
        full = np.zeros_like(x)
        full[s:e + 1] = gx
        x_new = self.state_opt.step(x, full)
        x_new[0] = self.x0
        return x_new

    def close(self):
        self.coll.close()


def _check_value(value):
    if not math.isfinite(value):
        raise FloatingPointError("loss became non-finite")


_FAILURES = (SolverError, EvaluationError, NonFiniteGradientError, FloatingPointError)


def _fail_status(exc):
    if isinstance(exc, SolverError):
        return "solver_failure"
    return "diverged"


def run_alg0(field, obs, targets, x0, theta0, grid, solver_cfg=None, train_cfg=None,
             sink=None, hook=None):
    """Gradient descent with the sensitivity-augmented solver in the loop.

    Returns ``(theta_final, TrainRecord)``.
    """
    cfg = train_cfg or TrainConfig.for_algorithm("alg0_direct")
    if cfg.minibatch is not None:
        raise ValueError("mini-batching applies to the collocation algorithms only")
    run = _Run(field, obs, targets, x0, grid, solver_cfg, cfg, sink, hook)
    theta = np.array(theta0, dtype=float)
    for epoch in range(cfg.epochs):
        rsse_val = run.rsse(epoch, theta)
        try:
            t_start = time.perf_counter()
            traj, sens = solve_with_sensitivity(field, theta, run.x0, grid, solver_cfg)
            value = run.train_sse(traj.states)
            _check_value(value)
            g = loss_grad_theta(traj, sens, obs, run.targets)
            theta = run.param_opt.step(theta, g)
            elapsed = time.perf_counter() - t_start
        except _FAILURES as exc:
            run.fail(_fail_status(exc), exc)
            break
        run.record.append(EpochRow(epoch, value, rsse_val, _norm(g), None, None, elapsed), sink)
        if run.converged(g):
            break
    run.close()
    return theta, run.record


def _alternating(run, x, theta, mult=None):
    """Shared loop of alg1 and alg3 (``mult`` given for alg3)."""
    cfg = run.cfg
    for epoch in range(cfg.epochs):
        s, e = run.window(epoch)
        rsse_val = run.rsse(epoch, theta)
        train_sse = run.train_sse(x)
        try:
            t_start = time.perf_counter()
            wmult = None
            if mult is not None:
                lam = mult.lam.reshape(-1, run.field.state_dim)
                wmult = MultiplierState(lam[s:e], mult.rho)
            ys = run.targets[s:e + 1]
            value, gx, _, _ = run.coll.loss_and_grads(x[s:e + 1], theta, ys,
                                                       want_theta=False, mult=wmult)
            _check_value(value)
            x = run.state_step(x, s, e, gx)
            run.emit("state_step", epoch=epoch, x=x)
            _, _, gtheta, r = run.coll.loss_and_grads(x[s:e + 1], theta, ys,
                                                      want_x=False, mult=wmult)
            run.emit("theta_grad", epoch=epoch, x=x, theta=theta)
            theta = run.param_opt.step(theta, gtheta)
            if mult is not None:
                r_new = run.coll.residual(x[s:e + 1], theta)
                lam = lam.copy()
                lam[s:e] = lam[s:e] + mult.rho * r_new
                mult = MultiplierState(lam.ravel(), mult.rho)
            elapsed = time.perf_counter() - t_start
        except _FAILURES as exc:
            run.fail(_fail_status(exc), exc)
            break
        run.record.append(EpochRow(epoch, train_sse, rsse_val, _norm(gtheta), _norm(gx),
                                   _norm(r), elapsed), run.sink)
        if run.converged(gtheta):
            break
    return x, theta, mult


def _initial_trajectory(run, theta):
    traj = solve(run.field, theta, run.x0, run.grid, run.solver_cfg)
    return traj.states.copy()


def run_alg1(field, obs, targets, x0, theta0, grid, solver_cfg=None, train_cfg=None,
             sink=None, hook=None, x_init=None):
    """Alternating descent on collocation residuals.

    ``x_init`` replaces the initializing ODE solve when given.  Returns
    ``(x_final, theta_final, TrainRecord)``.
    """
    cfg = train_cfg or TrainConfig.for_algorithm("alg1")
    run = _Run(field, obs, targets, x0, grid, solver_cfg, cfg, sink, hook)
    theta = np.array(theta0, dtype=float)
    try:
        x = _initial_trajectory(run, theta) if x_init is None else np.array(x_init, dtype=float)
    except SolverError as exc:
        run.fail("solver_failure", exc)
        return None, theta, run.record
    x[0] = run.x0
    x, theta, _ = _alternating(run, x, theta)
    run.close()
    return x, theta, run.record


def run_alg3(field, obs, targets, x0, theta0, lambda0, grid, solver_cfg=None, train_cfg=None,
             sink=None, hook=None, x_init=None):
    """Augmented-Lagrangian variant of :func:`run_alg1`.

    ``lambda0=None`` starts from zero multipliers.  Returns
    ``(x_final, theta_final, lambda_final, TrainRecord)``.
    """
    cfg = train_cfg or TrainConfig.for_algorithm("alg3")
    run = _Run(field, obs, targets, x0, grid, solver_cfg, cfg, sink, hook)
    theta = np.array(theta0, dtype=float)
    n_res = grid.num_intervals * field.state_dim
    lam = np.zeros(n_res) if lambda0 is None else np.array(lambda0, dtype=float).ravel()
    if lam.size != n_res:
        raise ValueError(f"lambda0 must have {n_res} entries")
    mult = MultiplierState(lam, cfg.rho)
    try:
        x = _initial_trajectory(run, theta) if x_init is None else np.array(x_init, dtype=float)
    except SolverError as exc:
        run.fail("solver_failure", exc)
        return None, theta, mult.lam, run.record
    x[0] = run.x0
    x, theta, mult = _alternating(run, x, theta, mult)
    run.close()
    return x, theta, mult.lam, run.record


def run_alg2(field, obs, targets, x0, theta0, grid, solver_cfg=None, train_cfg=None,
             sink=None, hook=None):
    """Alternating descent with an ODE-solve state reset every epoch.

    In ``local_state`` mini-batch mode only the window is re-solved, starting
    from the current estimate of its first node; the trajectory block then
    persists between epochs.  Returns ``(x_final, theta_final, TrainRecord)``.
    """
    cfg = train_cfg or TrainConfig.for_algorithm("alg2")
    run = _Run(field, obs, targets, x0, grid, solver_cfg, cfg, sink, hook)
    theta = np.array(theta0, dtype=float)
    local = cfg.minibatch is not None and cfg.minibatch.reset_mode == "local_state"
    x = None
    if local:
        try:
            x = _initial_trajectory(run, theta)
        except SolverError as exc:
            run.fail("solver_failure", exc)
            return None, theta, run.record
    for epoch in range(cfg.epochs):
        s, e = run.window(epoch)
        rsse_val = run.rsse(epoch, theta)
        try:
            t_start = time.perf_counter()
            if local:
                t_sub = solve(field, theta, x[s], grid.window(s, e - s), solver_cfg)
                x = x.copy()
                x[s:e + 1] = t_sub.states
            else:
                x = solve(field, theta, run.x0, grid, solver_cfg).states
            t_reset = time.perf_counter()
            train_sse = run.train_sse(x)
            _check_value(train_sse)
            t_resume = time.perf_counter()
            # r = 0 at a reset trajectory, so the state step sees only the data term
            _, gx = run.coll.data_loss(x[s:e + 1], run.targets[s:e + 1])
            x = run.state_step(x, s, e, gx)
            run.emit("state_step", epoch=epoch, x=x)
            _, _, gtheta, r = run.coll.loss_and_grads(x[s:e + 1], theta, run.targets[s:e + 1],
                                                      want_x=False)
            run.emit("theta_grad", epoch=epoch, x=x, theta=theta)
            theta = run.param_opt.step(theta, gtheta)
            elapsed = (t_reset - t_start) + (time.perf_counter() - t_resume)
        except _FAILURES as exc:
            run.fail(_fail_status(exc), exc)
            break
        run.record.append(EpochRow(epoch, train_sse, rsse_val, _norm(gtheta), _norm(gx),
                                   _norm(r), elapsed), run.sink)
        if run.converged(gtheta):
            break
    run.close()
    return x, theta, run.record


def run_training(field, obs, targets, x0, theta0, grid, solver_cfg, train_cfg,
                 sink=None, hook=None):
    """Dispatch on ``train_cfg.algorithm``; returns ``(x, theta, record)``.

    ``x`` is ``None`` for ``alg0_direct``, which has no trajectory block.
    """
    alg = train_cfg.algorithm
    if alg == "alg0_direct":
        theta, rec = run_alg0(field, obs, targets, x0, theta0, grid, solver_cfg, train_cfg,
                              sink, hook)
        return None, theta, rec
    if alg == "alg1":
        return run_alg1(field, obs, targets, x0, theta0, grid, solver_cfg, train_cfg, sink, hook)
    if alg == "alg2":
        return run_alg2(field, obs, targets, x0, theta0, grid, solver_cfg, train_cfg, sink, hook)
    x, theta, _, rec = run_alg3(field, obs, targets, x0, theta0, None, grid, solver_cfg,
                                train_cfg, sink, hook)
    return x, theta, rec


def check_alg0_recovery(field, obs, targets, x0, theta, alpha_x, alpha_theta, grid,
                        solver_cfg=None):
    """Compare one reset/state/theta step on ``x - x(theta)`` with an alg0 step.

    With the residual ``x - x(theta)``, a state reset followed by plain
    gradient steps on ``x`` (size ``alpha_x``) and ``theta`` (size
    ``alpha_theta``) moves ``theta`` exactly like gradient descent on the
    solver loss with step ``alpha_x * alpha_theta``.  Returns the relative
    deviation between the two ``theta`` updates (0 when both vanish).
    """
    theta = np.asarray(theta, dtype=float)
    targets = np.asarray(targets, dtype=float)
    traj_s, sens = solve_with_sensitivity(field, theta, x0, grid, solver_cfg)
    direct = -alpha_x * alpha_theta * loss_grad_theta(traj_s, sens, obs, targets)

    x_k = solve(field, theta, x0, grid, solver_cfg).states
    pred = obs.eval_batch(x_k)
    grad_x = obs.vjp_batch(x_k, 2.0 * (pred - targets))
    x_next = x_k - alpha_x * grad_x
    r_tilde = x_next - x_k
    # d r_tilde / d theta = -dx/dtheta
    composed = -alpha_theta * np.einsum("kip,ki->p", -sens.values, r_tilde)

    scale = float(np.linalg.norm(direct))
    diff = float(np.linalg.norm(composed - direct))
    if scale == 0.0:
        return diff
    return diff / scale

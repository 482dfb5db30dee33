"""SSE and RSSE metrics.

RSSE is normalized by the pooled target energy::

    rsse(pred, target) = sum |pred - target|^2 / sum |target|^2
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError, UndefinedMetricError
from .ode_solver import solve


@dataclass
class MetricReport:
    sse: float
    rsse: float
    per_trajectory: list = field(default_factory=list)


def _pair(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def sse(pred, target):
    """Sum of squared errors over all entries."""
    pred, target = _pair(pred, target)
    return float(np.sum(np.square(pred - target)))


def rsse(pred, target):
    pred, target = _pair(pred, target)
    energy = float(np.sum(np.square(target)))
    if energy == 0.0:
        raise UndefinedMetricError("RSSE undefined for an all-zero target")
    return float(np.sum(np.square(pred - target))) / energy


def rsse_on_ode(field, theta, x0, grid, solver_cfg, obs, target):
    """RSSE of the ODE solution at ``theta`` against ``target``.

    Returns ``None`` when the solve fails.
    """
    try:
        traj = solve(field, theta, x0, grid, solver_cfg)
    except SolverError:
        return None
    return rsse(obs.eval_batch(traj.states), target)

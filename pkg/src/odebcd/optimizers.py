"""SGD and Adam on flat parameter blocks.

The ``*_step`` functions are pure transitions ``(state, x, grad) -> ...``;
the :class:`SGD` and :class:`Adam` wrappers hold the state for use inside
training loops.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import NonFiniteGradientError


def _check_grad(x, grad):
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if x.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match {x.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.count_nonzero(~np.isfinite(grad)))
        raise NonFiniteGradientError(f"gradient has {bad} non-finite entries")
    return x, grad


@dataclass(frozen=True)
class SgdState:
    lr: float

    def __post_init__(self):
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValueError("lr must be positive and finite")


def sgd_step(state, x, grad):
    x, grad = _check_grad(x, grad)
    return x - state.lr * grad


@dataclass(frozen=True)
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValueError("lr must be positive and finite")


def adam_step(state, x, grad):
    """One bias-corrected Adam update; returns ``(x_new, new_state)``."""
    x, grad = _check_grad(x, grad)
    m = np.zeros_like(x) if state.m is None else state.m
    v = np.zeros_like(x) if state.v is None else state.v
    t = state.t + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    x_new = x - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return x_new, replace(state, m=m, v=v, t=t)


class SGD:
    def __init__(self, lr):
        self.state = SgdState(lr)

    def step(self, x, grad):
        return sgd_step(self.state, x, grad)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.state = AdamState(lr, beta1, beta2, eps)

    def step(self, x, grad):
        x_new, self.state = adam_step(self.state, x, grad)
        return x_new


def make_optimizer(name, lr):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")

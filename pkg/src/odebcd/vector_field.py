"""Parameterized autonomous vector fields and observation maps.

Every model used by the solver, the sensitivity code and the collocation
residuals implements :class:`VectorFieldSpec`: a right-hand side
``f(x; theta)`` with analytic Jacobians with respect to the state and the
parameters.  Batched variants act on a leading axis of points and default to
looping over the scalar methods; models with a cheaper vectorized form
override them.
"""

from abc import ABC, abstractmethod

import numpy as np

from .errors import EvaluationError


class VectorFieldSpec(ABC):
    """Autonomous right-hand side ``f(x; theta)`` with analytic Jacobians.

    Subclasses set ``state_dim`` and ``param_dim`` and implement
    :meth:`eval`, :meth:`jac_state` and :meth:`jac_params`.  All methods must
    be pure.
    """

    state_dim: int
    param_dim: int

    @abstractmethod
    def eval(self, x, params):
        """Return ``f(x; params)`` with shape ``(n,)``."""

    @abstractmethod
    def jac_state(self, x, params):
        """Return ``df/dx`` with shape ``(n, n)``."""

    @abstractmethod
    def jac_params(self, x, params):
        """Return ``df/dtheta`` with shape ``(n, p)``."""

    def evaluate_all(self, x, params):
        """Return ``(f, df/dx, df/dtheta)`` at one point."""
        return (self.eval(x, params), self.jac_state(x, params),
                self.jac_params(x, params))

    # batched forms, leading axis indexes points

    def eval_batch(self, X, params):
        X = np.asarray(X, dtype=float)
        return np.stack([self.eval(x, params) for x in X]).reshape(X.shape)

    def jac_params_batch(self, X, params):
        X = np.asarray(X, dtype=float)
        if len(X) == 0:
            return np.zeros((0, self.state_dim, self.param_dim))
        return np.stack([self.jac_params(x, params) for x in X])

    def vjp_state_batch(self, X, params, W):
        """Return ``J(X[k])^T W[k]`` for every k."""
        X = np.asarray(X, dtype=float)
        if len(X) == 0:
            return np.zeros_like(X)
        J = np.stack([self.jac_state(x, params) for x in X])
        return np.einsum("kij,ki->kj", J, W)

    def vjp_params_batch(self, X, params, W):
        """Return ``Jtheta(X[k])^T W[k]`` for every k, shape ``(K, p)``."""
        Jp = self.jac_params_batch(X, params)
        return np.einsum("kip,ki->kp", Jp, W)

    def linearize_batch(self, X, params):
        """Field values at ``X`` plus a handle for VJPs at the same points.

        Models that share work between the value and its derivatives
        override this; the default defers to the batched methods.
        """
        return Linearization(self, X, params)


class Linearization:
    """``f`` at a batch of points; :meth:`vjp` pulls cotangents back."""

    def __init__(self, field, X, params):
        self.field = field
        self.X = np.asarray(X, dtype=float)
        self.params = params
        self.f = field.eval_batch(self.X, params)

    def vjp(self, W, want_state=True, want_params=True):
        """Return ``(J^T W, Jtheta^T W)`` per point; unrequested parts are ``None``."""
        gs = self.field.vjp_state_batch(self.X, self.params, W) if want_state else None
        gp = self.field.vjp_params_batch(self.X, self.params, W) if want_params else None
        return gs, gp


class StackedLinearization:
    """Linearizations of contiguous blocks of points, used as one.

    With a ``pool`` (anything with ``submit``) the blocks are pulled back
    concurrently; results are concatenated in block order either way.
    """

    def __init__(self, parts, bounds, pool=None):
        self.parts = parts
        self.bounds = bounds
        self.pool = pool
        self.f = np.concatenate([p.f for p in parts])

    def vjp(self, W, want_state=True, want_params=True):
        spans = zip(self.parts, self.bounds[:-1], self.bounds[1:])
        if self.pool is None:
            res = [p.vjp(W[a:b], want_state, want_params) for p, a, b in spans]
        else:
            jobs = [self.pool.submit(p.vjp, W[a:b], want_state, want_params) for p, a, b in spans]
            res = [j.result() for j in jobs]
        gs = np.concatenate([g for g, _ in res]) if want_state else None
        gp = np.concatenate([g for _, g in res]) if want_params else None
        return gs, gp


class _ScaledLinearization:
    def __init__(self, inner, scale):
        self.inner = inner
        self.scale = scale
        self.f = inner.f

    def vjp(self, W, want_state=True, want_params=True):
        gs, gp = self.inner.vjp(W, want_state, want_params)
        return gs, (None if gp is None else gp * self.scale)


class LinearField(VectorFieldSpec):
    """Affine field ``f(x; theta) = A x + B theta``.

    With ``B`` omitted the field does not depend on its single dummy
    parameter.
    """

    def __init__(self, A, B=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        n = self.A.shape[0]
        if B is None:
            B = np.zeros((n, 1))
        self.B = np.asarray(B, dtype=float).reshape(n, -1)
        self.state_dim = n
        self.param_dim = self.B.shape[1]

    def eval(self, x, params):
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(params, dtype=float)

    def jac_state(self, x, params):
        return self.A.copy()

    def jac_params(self, x, params):
        return self.B.copy()

    def eval_batch(self, X, params):
        return np.asarray(X, dtype=float) @ self.A.T + self.B @ np.asarray(params, dtype=float)

    def jac_params_batch(self, X, params):
        return np.broadcast_to(self.B, (len(X),) + self.B.shape).copy()

    def vjp_state_batch(self, X, params, W):
        return np.asarray(W, dtype=float) @ self.A

    def vjp_params_batch(self, X, params, W):
        return np.asarray(W, dtype=float) @ self.B


class ZeroField(LinearField):
    """``f = 0`` in ``n`` dimensions with ``p`` unused parameters."""

    def __init__(self, n, p=1):
        super().__init__(np.zeros((n, n)), np.zeros((n, p)))


def harmonic_oscillator():
    """``x' = v, v' = -x`` (parameter-free)."""
    return LinearField([[0.0, 1.0], [-1.0, 0.0]])


def constant_acceleration(dim=1):
    """Point mass with ``pos' = vel, vel' = theta``.

    Solutions are quadratic in time, so both Dopri5 and the Hermite-Simpson
    residual are exact on them.
    """
    A = np.zeros((2 * dim, 2 * dim))
    A[:dim, dim:] = np.eye(dim)
    B = np.zeros((2 * dim, dim))
    B[dim:, :] = np.eye(dim)
    return LinearField(A, B)


class ExponentialGrowth(VectorFieldSpec):
    """``x' = theta * x`` componentwise with one scalar rate."""

    param_dim = 1

    def __init__(self, n=1):
        self.state_dim = n

    def eval(self, x, params):
        return params[0] * np.asarray(x, dtype=float)

    def jac_state(self, x, params):
        return params[0] * np.eye(self.state_dim)

    def jac_params(self, x, params):
        return np.asarray(x, dtype=float).reshape(-1, 1).copy()

    def eval_batch(self, X, params):
        return params[0] * np.asarray(X, dtype=float)

    def jac_params_batch(self, X, params):
        return np.asarray(X, dtype=float)[:, :, None].copy()

    def vjp_state_batch(self, X, params, W):
        return params[0] * np.asarray(W, dtype=float)

    def vjp_params_batch(self, X, params, W):
        return np.sum(np.asarray(X) * np.asarray(W), axis=1, keepdims=True)


class LogParameterized(VectorFieldSpec):
    """Reparameterize a field by ``theta = exp(phi)``.

    Optimizing ``phi`` keeps strictly positive parameters positive.
    """

    def __init__(self, field):
        self.field = field
        self.state_dim = field.state_dim
        self.param_dim = field.param_dim

    @staticmethod
    def to_internal(theta):
        return np.log(np.asarray(theta, dtype=float))

    @staticmethod
    def from_internal(phi):
        return np.exp(np.asarray(phi, dtype=float))

    def eval(self, x, params):
        return self.field.eval(x, np.exp(params))

    def jac_state(self, x, params):
        return self.field.jac_state(x, np.exp(params))

    def jac_params(self, x, params):
        theta = np.exp(params)
        return self.field.jac_params(x, theta) * theta

    def eval_batch(self, X, params):
        return self.field.eval_batch(X, np.exp(params))

    def jac_params_batch(self, X, params):
        theta = np.exp(params)
        return self.field.jac_params_batch(X, theta) * theta

    def vjp_state_batch(self, X, params, W):
        return self.field.vjp_state_batch(X, np.exp(params), W)

    def vjp_params_batch(self, X, params, W):
        theta = np.exp(params)
        return self.field.vjp_params_batch(X, theta, W) * theta

    def linearize_batch(self, X, params):
        theta = np.exp(params)
        return _ScaledLinearization(self.field.linearize_batch(X, theta), theta)


class ObservationMap:
    """Observation ``y = h(x)`` with Jacobian ``H = dh/dx``.

    The base class is the identity map.
    """

    def __init__(self, state_dim):
        self.state_dim = state_dim
        self.out_dim = state_dim

    def eval(self, x):
        return np.array(x, dtype=float, copy=True)

    def jac(self, x):
        return np.eye(self.state_dim)

    def eval_batch(self, X):
        return np.array(X, dtype=float, copy=True)

    def vjp_batch(self, X, W):
        """Return ``H(X[k])^T W[k]`` for every k."""
        return np.array(W, dtype=float, copy=True)


IdentityObservation = ObservationMap


class LinearObservation(ObservationMap):
    """``y = C x`` for a fixed ``(m, n)`` matrix."""

    def __init__(self, C):
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.out_dim, self.state_dim = self.C.shape

    def eval(self, x):
        return self.C @ np.asarray(x, dtype=float)

    def jac(self, x):
        return self.C.copy()

    def eval_batch(self, X):
        return np.asarray(X, dtype=float) @ self.C.T

    def vjp_batch(self, X, W):
        return np.asarray(W, dtype=float) @ self.C


def _checked(fun, arg, what):
    out = np.asarray(fun(arg), dtype=float)
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"non-finite field output while differencing {what}")
    return out


def fd_jacobian(fun, z, step=1e-6):
    """Central-difference Jacobian of ``fun`` at ``z``."""
    z = np.asarray(z, dtype=float)
    cols = []
    for k in range(z.size):
        dz = np.zeros_like(z)
        dz[k] = step
        plus = _checked(fun, z + dz, f"coordinate {k}")
        minus = _checked(fun, z - dz, f"coordinate {k}")
        cols.append((plus - minus) / (2.0 * step))
    return np.stack(cols, axis=-1)


def relative_error(analytic, reference):
    """Largest entrywise error, relative to ``max(1, |reference|)``."""
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - reference) / np.maximum(1.0, np.abs(reference))))


def fd_check_jacobians(field, point, params, step=1e-6):
    """Compare analytic Jacobians of ``field`` with central differences.

    Returns the largest relative error over both Jacobians.  Raises
    :class:`EvaluationError` if the field is non-finite at any perturbed
    point.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=float)
    params = np.asarray(params, dtype=float)
    Jx = field.jac_state(point, params)
    Jp = field.jac_params(point, params)
    Jx_fd = fd_jacobian(lambda z: field.eval(z, params), point, step)
    Jp_fd = fd_jacobian(lambda q: field.eval(point, q), params, step)
    return max(relative_error(Jx, Jx_fd), relative_error(Jp, Jp_fd))

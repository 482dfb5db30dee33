"""Cucker-Smale flocking model in the plane.

For ``N`` particles with positions ``x_i`` and velocities ``v_i``::

    x_i' = v_i
    v_i' = 1/N sum_{j != i} [ H(|x_i - x_j|) (v_j - v_i) - U'(r_ij) (x_i - x_j) / r_ij ]

with communication rate ``H(r) = (1 + r^2)^-gamma`` and pair potential
``U(r) = -c_a exp(-r/l_a) + c_r exp(-r/l_r)``.  The self term ``j = i`` is
skipped: its alignment part is zero and its potential gradient is singular.

The flat state layout is ``[x_1, ..., x_N, v_1, ..., v_N]`` (``4N`` entries)
and the parameter vector is ``[gamma, c_a, c_r, l_a, l_r]``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SingularPairError
from .vector_field import StackedLinearization, VectorFieldSpec

PARAM_NAMES = ("gamma", "c_a", "c_r", "l_a", "l_r")


@dataclass(frozen=True)
class CSParams:
    gamma: float
    c_a: float
    c_r: float
    l_a: float
    l_r: float

    def to_array(self):
        return np.array([self.gamma, self.c_a, self.c_r, self.l_a, self.l_r], dtype=float)

    @classmethod
    def from_array(cls, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (5,):
            raise ValueError(f"expected 5 parameters, got shape {theta.shape}")
        return cls(*(float(t) for t in theta))


@dataclass(frozen=True)
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray

    @property
    def num_particles(self):
        return len(self.positions)

    def flatten(self):
        return np.concatenate([np.ravel(self.positions), np.ravel(self.velocities)]).astype(float)

    @classmethod
    def unflatten(cls, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.ndim != 1 or flat.size % 4:
            raise ValueError("flat swarm state must be 1-D with a multiple of 4 entries")
        n = flat.size // 2
        return cls(flat[:n].reshape(-1, 2).copy(), flat[n:].reshape(-1, 2).copy())


def _as_theta(params):
    if isinstance(params, CSParams):
        return params.to_array()
    return np.asarray(params, dtype=float)


def _as_flat(state):
    if isinstance(state, SwarmState):
        return state.flatten()
    return np.asarray(state, dtype=float)


def communication_rate(r, gamma):
    """``H(r) = 1 / (1 + r^2)^gamma``."""
    return (1.0 + np.square(r)) ** (-gamma)


def potential(r, params):
    """Pair potential ``U(r) = -c_a e^{-r/l_a} + c_r e^{-r/l_r}``."""
    g, c_a, c_r, l_a, l_r = _as_theta(params)
    return -c_a * np.exp(-r / l_a) + c_r * np.exp(-r / l_r)


def potential_deriv(r, params):
    """``U'(r) = (c_a/l_a) e^{-r/l_a} - (c_r/l_r) e^{-r/l_r}`` for ``r > 0``."""
    if np.any(np.asarray(r) <= 0):
        raise SingularPairError("potential gradient is singular at r = 0; exclude i == j pairs")
    g, c_a, c_r, l_a, l_r = _as_theta(params)
    return c_a / l_a * np.exp(-r / l_a) - c_r / l_r * np.exp(-r / l_r)


class CuckerSmale(VectorFieldSpec):
    """Cucker-Smale right-hand side for ``num_particles`` planar particles.

    Parameters
    ----------
    num_particles : int
    on_coincident : {"raise", "skip"}
        What to do when two distinct particles share a position.  ``"raise"``
        throws :class:`SingularPairError`; ``"skip"`` drops those pairs from
        both sums.
    """

    param_dim = 5
    # Batched work is done in blocks of at most this many pairs.  Small
    # temporaries are recycled by the allocator; large ones are mapped and
    # unmapped on every call, and the page faults cost more than the math.
    block_pairs = 12_000

    def __init__(self, num_particles, on_coincident="raise"):
        if num_particles < 1:
            raise ValueError("need at least one particle")
        if on_coincident not in ("raise", "skip"):
            raise ValueError("on_coincident must be 'raise' or 'skip'")
        self.num_particles = int(num_particles)
        self.state_dim = 4 * self.num_particles
        self.on_coincident = on_coincident

    def __repr__(self):
        return f"CuckerSmale(num_particles={self.num_particles})"

    def _split(self, X):
        X = np.asarray(X, dtype=float)
        K = X.shape[0]
        N = self.num_particles
        return X[:, :2 * N].reshape(K, N, 2), X[:, 2 * N:].reshape(K, N, 2)

    def _pairs(self, X, theta, order=0):
        """Pairwise quantities shared by the RHS, the Jacobians and the VJPs.

        Pair arrays have shape ``(K, N, N)`` with the two coordinates kept in
        separate arrays; sums over partners are done as batched matrix
        products.  ``order=1`` adds what derivatives need.  Self entries and
        skipped coincident pairs are zeroed in every per-pair weight.
        """
        gamma, c_a, c_r, l_a, l_r = (float(t) for t in theta)
        pos, vel = self._split(X)
        K, N = pos.shape[:2]
        dx = pos[:, :, None, 0] - pos[:, None, :, 0]
        dy = pos[:, :, None, 1] - pos[:, None, :, 1]
        r2 = dx * dx + dy * dy
        r2.reshape(K, N * N)[:, ::N + 1] = 1.0
        skip = None
        if not r2.all():
            if self.on_coincident == "raise":
                raise SingularPairError("two particles share a position")
            skip = r2 == 0.0
            r2[skip] = 1.0

        def zero_self(a):
            a.reshape(K, N * N)[:, ::N + 1] = 0.0
            if skip is not None:
                a[skip] = 0.0
            return a

        r = np.sqrt(r2)
        e_a = np.exp(r * (-1.0 / l_a))
        e_r = np.exp(r * (-1.0 / l_r))
        log_h = np.log1p(r2)
        H = zero_self(np.exp(log_h * -gamma))
        du = (c_a / l_a) * e_a - (c_r / l_r) * e_r
        inv_r = zero_self(1.0 / r)
        phi = du * inv_r
        out = dict(dx=dx, dy=dy, r=r, r2=r2, inv_r=inv_r, H=H, phi=phi, e_a=e_a, e_r=e_r,
                   log_h=log_h, pos=pos, vel=vel,
                   h_sum=np.sum(H, axis=2), phi_sum=np.sum(phi, axis=2))
        if order >= 1:
            ddu = (c_r / l_r**2) * e_r - (c_a / l_a**2) * e_a
            # b = phi'(r) / r with phi = U'/r
            out["b"] = (ddu - phi) * inv_r * inv_r
            out["a"] = (-2.0 * gamma) * H / (1.0 + r2)
        return out

    def _vdot(self, P):
        # sum_j H_ij (v_j - v_i) - phi_ij (x_i - x_j)
        pos, vel = P["pos"], P["vel"]
        acc = (P["H"] @ vel - P["h_sum"][..., None] * vel
               + P["phi"] @ pos - P["phi_sum"][..., None] * pos)
        return acc / self.num_particles

    # pieces built from one pair cache

    def _rhs_from(self, P):
        K = P["pos"].shape[0]
        return np.concatenate([P["vel"].reshape(K, -1), self._vdot(P).reshape(K, -1)], axis=1)

    def _jac_state_from(self, P):
        K, N = P["pos"].shape[:2]
        dx, dy, a, b, phi = P["dx"], P["dy"], P["a"], P["b"], P["phi"]
        vel = P["vel"]
        dvx = vel[:, None, :, 0] - vel[:, :, None, 0]
        dvy = vel[:, None, :, 1] - vel[:, :, None, 1]
        # B_ij = d(pair term)/d(x_i - x_j), shape (K, N, N, 2, 2)
        B = np.empty((K, N, N, 2, 2))
        bx, by = b * dx, b * dy
        B[..., 0, 0] = (a * dvx - bx) * dx - phi
        B[..., 0, 1] = (a * dvx - bx) * dy
        B[..., 1, 0] = (a * dvy - by) * dx
        B[..., 1, 1] = (a * dvy - by) * dy - phi
        idx = np.arange(N)
        J = np.zeros((K, 4 * N, 4 * N))
        J[:, :2 * N, 2 * N:] = np.eye(2 * N)
        # dvdot_i/dx_j = -B_ij / N for j != i, sum_j B_ij / N on the diagonal
        dvdx = -B / N
        dvdx[:, idx, idx] = np.sum(B, axis=2) / N
        J[:, 2 * N:, :2 * N] = dvdx.transpose(0, 1, 3, 2, 4).reshape(K, 2 * N, 2 * N)
        dvdv = P["H"] / N
        dvdv[:, idx, idx] = -P["h_sum"] / N
        J[:, 2 * N:, 2 * N:] = (dvdv[:, :, None, :, None] * np.eye(2)[:, None, :]).reshape(
            K, 2 * N, 2 * N)
        return J

    @staticmethod
    def _potential_partials(P, theta):
        """Partials of ``U'(r)/r`` w.r.t. ``(c_a, c_r, l_a, l_r)``."""
        gamma, c_a, c_r, l_a, l_r = theta
        r, inv_r = P["r"], P["inv_r"]
        ea, er = P["e_a"] * inv_r, P["e_r"] * inv_r
        return [ea / l_a, er / -l_r,
                c_a * ea * (r / l_a**3 - 1.0 / l_a**2),
                -c_r * er * (r / l_r**3 - 1.0 / l_r**2)]

    def _jac_params_from(self, P, theta):
        K, N = P["pos"].shape[:2]
        pos, vel = P["pos"], P["vel"]
        Q = -P["log_h"] * P["H"]
        out = np.zeros((K, 4 * N, 5))
        out[:, 2 * N:, 0] = ((Q @ vel - np.sum(Q, axis=2)[..., None] * vel) / N).reshape(K, -1)
        for q, dU in enumerate(self._potential_partials(P, theta)):
            col = (dU @ pos - np.sum(dU, axis=2)[..., None] * pos) / N
            out[:, 2 * N:, q + 1] = col.reshape(K, -1)
        return out

    # batched interface

    def _blocks(self, K):
        step = max(1, self.block_pairs // self.num_particles**2)
        return np.append(np.arange(0, K, step), K)

    def eval_batch(self, X, params):
        X = np.asarray(X, dtype=float)
        theta = _as_theta(params)
        b = self._blocks(len(X))
        if len(b) <= 2:
            return self._rhs_from(self._pairs(X, theta))
        return np.concatenate([self._rhs_from(self._pairs(X[lo:hi], theta))
                               for lo, hi in zip(b[:-1], b[1:])])

    def jac_state_batch(self, X, params):
        return self._jac_state_from(self._pairs(X, _as_theta(params), order=1))

    def jac_params_batch(self, X, params):
        theta = _as_theta(params)
        return self._jac_params_from(self._pairs(X, theta), theta)

    def vjp_state_batch(self, X, params, W):
        return self.linearize_batch(X, params).vjp(W, want_params=False)[0]

    def vjp_params_batch(self, X, params, W):
        return self.linearize_batch(X, params).vjp(W, want_state=False)[1]

    def linearize_batch(self, X, params):
        X = np.asarray(X, dtype=float)
        theta = _as_theta(params)
        b = self._blocks(len(X))
        if len(b) <= 2:
            return _CSLinearization(self, self._pairs(X, theta, order=1), theta)
        parts = [_CSLinearization(self, self._pairs(X[lo:hi], theta, order=1), theta)
                 for lo, hi in zip(b[:-1], b[1:])]
        return StackedLinearization(parts, b)

    # single-point interface

    def eval(self, x, params):
        return self.eval_batch(_as_flat(x)[None, :], params)[0]

    def jac_state(self, x, params):
        return self.jac_state_batch(_as_flat(x)[None, :], params)[0]

    def jac_params(self, x, params):
        return self.jac_params_batch(_as_flat(x)[None, :], params)[0]

    def evaluate_all(self, x, params):
        theta = _as_theta(params)
        P = self._pairs(_as_flat(x)[None, :], theta, order=1)
        return self._rhs_from(P)[0], self._jac_state_from(P)[0], self._jac_params_from(P, theta)[0]


class _CSLinearization:
    """Pair cache at a batch of points; both VJPs share its contractions."""

    def __init__(self, field, P, theta):
        self.field = field
        self.P = P
        self.theta = theta
        self.f = field._rhs_from(P)

    def vjp(self, W, want_state=True, want_params=True):
        P = self.P
        N = self.field.num_particles
        W = np.asarray(W, dtype=float)
        K = W.shape[0]
        wx = W[:, :2 * N].reshape(K, N, 2)
        wv = W[:, 2 * N:].reshape(K, N, 2)
        pos, vel, H, phi = P["pos"], P["vel"], P["H"], P["phi"]
        # S_ij = (x_i - x_j) . w_i and T_ij = (v_j - v_i) . w_i
        S = np.sum(pos * wv, axis=2)[..., None] - wv @ pos.transpose(0, 2, 1)
        T = wv @ vel.transpose(0, 2, 1) - np.sum(vel * wv, axis=2)[..., None]
        gs = gp = None
        if want_state:
            # H and phi are symmetric
            out_v = wx + (H @ wv - P["h_sum"][..., None] * wv) / N
            # G_ij = c_ij (x_i - x_j) - phi_ij w_i; out_x = (sum_j G_ij - sum_i G_ij) / N
            c = P["a"] * T - P["b"] * S
            rows = np.sum(c, axis=2)[..., None] * pos - c @ pos - P["phi_sum"][..., None] * wv
            cols = c.transpose(0, 2, 1) @ pos - np.sum(c, axis=1)[..., None] * pos - phi @ wv
            out_x = (rows - cols) / N
            gs = np.concatenate([out_x.reshape(K, -1), out_v.reshape(K, -1)], axis=1)
        if want_params:
            gamma, c_a, c_r, l_a, l_r = self.theta
            gp = np.empty((K, 5))
            gp[:, 0] = -np.einsum("kij,kij->k", P["log_h"] * H, T) / N
            # U'(r)/r differentiated in (c_a, c_r, l_a, l_r), contracted with S
            Sa = S * P["e_a"] * P["inv_r"]
            Sr = S * P["e_r"] * P["inv_r"]
            sa, sr = np.sum(Sa.reshape(K, -1), axis=1), np.sum(Sr.reshape(K, -1), axis=1)
            sa_r = np.einsum("kij,kij->k", Sa, P["r"])
            sr_r = np.einsum("kij,kij->k", Sr, P["r"])
            gp[:, 1] = -sa / l_a
            gp[:, 2] = sr / l_r
            gp[:, 3] = -c_a * (sa_r / l_a**3 - sa / l_a**2)
            gp[:, 4] = c_r * (sr_r / l_r**3 - sr / l_r**2)
            gp[:, 1:] /= N
        return gs, gp


def _field_for(state, on_coincident="raise"):
    flat = _as_flat(state)
    return CuckerSmale(flat.size // 4, on_coincident=on_coincident), flat


def cs_rhs(state, params, on_coincident="raise"):
    """Flat time derivative of a swarm state."""
    field, flat = _field_for(state, on_coincident)
    return field.eval(flat, params)


def cs_jac_state(state, params, on_coincident="raise"):
    field, flat = _field_for(state, on_coincident)
    return field.jac_state(flat, params)


def cs_jac_params(state, params, on_coincident="raise"):
    field, flat = _field_for(state, on_coincident)
    return field.jac_params(flat, params)

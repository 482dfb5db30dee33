import numpy as np
import pytest

# criterion number -> "PASS ..." / "FAIL ..." line, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])


def naive_cs_rhs(x, theta):
    """Double-loop Cucker-Smale right-hand side, written from the model equations."""
    gamma, c_a, c_r, l_a, l_r = theta
    n = len(x) // 4
    pos = np.asarray(x[:2 * n]).reshape(n, 2)
    vel = np.asarray(x[2 * n:]).reshape(n, 2)
    acc = np.zeros((n, 2))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = pos[i] - pos[j]
            r = np.hypot(d[0], d[1])
            H = (1.0 + r * r) ** (-gamma)
            dU = c_a / l_a * np.exp(-r / l_a) - c_r / l_r * np.exp(-r / l_r)
            acc[i] += H * (vel[j] - vel[i]) - dU * d / r
    return np.concatenate([vel.ravel(), acc.ravel() / n])


def random_theta(rng):
    return np.array([rng.uniform(0.1, 1.5), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0),
                     rng.uniform(1.0, 3.0), rng.uniform(0.3, 1.0)])


def random_swarm(rng, n):
    return np.concatenate([rng.uniform(-2, 2, 2 * n), rng.uniform(-1, 1, 2 * n)])


def fd_grad(fun, z, step=1e-6):
    """Central-difference gradient of a scalar function."""
    z = np.asarray(z, dtype=float)
    g = np.zeros(z.size)
    flat = z.ravel()
    for k in range(z.size):
        e = np.zeros(z.size)
        e[k] = step
        g[k] = (fun((flat + e).reshape(z.shape)) - fun((flat - e).reshape(z.shape))) / (2 * step)
    return g.reshape(z.shape)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from accelera.acceleration import LinearLoop
from accelera.geometry import Polytope

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_spectrum(rng, p, rho_lo=0.3, rho_hi=0.98):
    """Real block-diagonal matrix with eigenvalue moduli in ``[rho_lo, rho_hi]``."""
    D = np.zeros((p, p))
    i = 0
    while i < p:
        r = rng.uniform(rho_lo, rho_hi)
        if i + 1 < p and rng.random() < 0.5:
            t = rng.uniform(0.05, 1.2)
            D[i:i + 2, i:i + 2] = r * np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
            i += 2
        else:
            D[i, i] = r * rng.choice([-1.0, 1.0]) if rng.random() < 0.2 else r
            i += 1
    return D


def random_basis(rng, p, cond_max=20.0):
    while True:
        Q = rng.normal(size=(p, p))
        if np.linalg.cond(Q) < cond_max:
            return Q


def random_model(rng, p=None, guarded=None, unstable=None):
    """Random loop: stable or mildly unstable dynamics, box X0 and U, optional guards X0 satisfies."""
    p = p or int(rng.integers(2, 7))
    unstable = rng.random() < 0.2 if unstable is None else unstable
    D = random_spectrum(rng, p, 0.3, 0.98)
    if unstable:
        D[0] = 0.0
        D[0, 0] = rng.uniform(1.001, 1.02)
    Q = random_basis(rng, p)
    A = Q @ D @ np.linalg.inv(Q)
    q = int(rng.integers(1, 3))
    B = rng.normal(size=(p, q)) * 0.3
    c0 = rng.uniform(-2, 2, size=p)
    w0 = rng.uniform(0.1, 1.0, size=p)
    X0 = Polytope.box(c0 - w0, c0 + w0)
    cu = rng.uniform(-1, 1, size=q)
    wu = rng.uniform(0.0, 0.5, size=q)
    U = Polytope.box(cu - wu, cu + wu)
    guarded = rng.random() < 0.5 if guarded is None else guarded
    if guarded:
        r = int(rng.integers(1, 3))
        G = rng.normal(size=(r, p))
        h = np.abs(G) @ (np.abs(c0) + w0) + rng.uniform(0.5, 5.0, size=r)
    else:
        G, h = np.zeros((0, p)), np.zeros(0)
    return LinearLoop(A=A, B=B, G=G, h=h, X0=X0, U=U, name=f"random{p}")


def box_of(P):
    lo, hi = P.box_bounds()
    return lo, hi


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def verdict(criterion, ok, detail):
    """Record one acceptance line; it is printed in the terminal summary."""
    line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

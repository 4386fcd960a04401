"""Built-in benchmark loops: thermostat, doubling loop and the convoy family."""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .acceleration import LinearLoop
from .geometry import Polytope


def thermostat():
    """Room temperature and heater state, stopped when either leaves its limit."""
    A = np.array([[0.97, 0.1], [-0.05, 1.0]])
    B = np.array([[0.02, 0.0], [0.0, 0.05]])
    return LinearLoop(
        A=A,
        B=B,
        G=np.eye(2),
        h=np.array([400.0, 300.0]),
        X0=Polytope.box([5.0, 0.0], [40.0, 1.0]),
        U=Polytope.box([5.0, 0.0], [40.0, 300.0]),
        name="thermostat",
        var_names=("temp", "heat"),
    )


def doubling(limit=100.0):
    """``x := 2 x`` from ``x = 1`` while ``x <= limit``."""
    return LinearLoop(
        A=np.array([[2.0]]),
        B=np.zeros((1, 1)),
        G=np.array([[1.0]]),
        h=np.array([float(limit)]),
        X0=Polytope.point([1.0]),
        U=Polytope.point([0.0]),
        name="doubling",
        var_names=("x",),
    )


def convoy_car(n_cars=2, dt=0.1, gap_ref=(45.0, 55.0), lead_speed=(9.0, 11.0)):
    """Platoon of ``n_cars`` following a leader whose speed is an input.

    Follower ``i`` (1-based) has acceleration ``a``, speed ``v`` and distance
    ``d`` behind the leader, regulated towards ``i * r``:
    ``a' = -k1 a - k2 (v - v_lead) + k3 (d - i r)``, ``v' = a``,
    ``d' = v_lead - v``.  Inputs are the leader speed and the spacing ``r``.
    Gains ``(2c, 2c^2, c^3)`` with ``c = 1 + 0.02 i`` give each follower the
    poles ``c (-1, -1/2 +- i sqrt(3)/2)``, distinct across cars.  The
    continuous system is discretised exactly with step ``dt``.
    """
    if n_cars < 2:
        raise ValueError("a convoy needs at least two cars")
    m = n_cars - 1
    p = 3 * m
    Ac = np.zeros((p, p))
    Bc = np.zeros((p, 2))
    for i in range(m):
        a, v, d = 3 * i, 3 * i + 1, 3 * i + 2
        c = 1.0 + 0.02 * i
        k1, k2, k3 = 2.0 * c, 2.0 * c * c, c ** 3
        Ac[a, a] = -k1
        Ac[a, v] = -k2
        Ac[a, d] = k3
        Bc[a, 0] = k2
        Bc[a, 1] = -k3 * (i + 1)
        Ac[v, a] = 1.0
        Ac[d, v] = -1.0
        Bc[d, 0] = 1.0
    M = np.zeros((p + 2, p + 2))
    M[:p, :p] = Ac
    M[:p, p:] = Bc
    E = expm(M * dt)
    A = E[:p, :p]
    B = E[:p, p:]
    lo = np.zeros(p)
    hi = np.zeros(p)
    for i in range(m):
        lo[3 * i: 3 * i + 3] = [-0.5, lead_speed[0], (i + 1) * gap_ref[0]]
        hi[3 * i: 3 * i + 3] = [0.5, lead_speed[1], (i + 1) * gap_ref[1]]
    names = []
    for i in range(m):
        names += [f"acc{i + 1}", f"speed{i + 1}", f"dist{i + 1}"]
    return LinearLoop(
        A=A,
        B=B,
        G=np.zeros((0, p)),
        h=np.zeros(0),
        X0=Polytope.box(lo, hi),
        U=Polytope.box([lead_speed[0], gap_ref[0]], [lead_speed[1], gap_ref[1]]),
        name=f"convoyCar{n_cars}",
        var_names=tuple(names),
    )


BUILTIN = {
    "thermostat": thermostat,
    "doubling": doubling,
    "convoyCar2": lambda: convoy_car(2),
    "convoyCar3": lambda: convoy_car(3),
}
